use uio_core::existcheck::{exists_uio, random_model};
use uio_core::synth::SynthesisOptions;

/// (n, m, p, r) for the `i`-th corpus entry, cycling through all admissible shapes.
fn shapes() -> Vec<(usize, usize, usize, usize)> {
    let mut out = Vec::new();
    for n in 1..=4 {
        for m in 0..=2 {
            for p in 1..=3 {
                for r in 0..=p.min(2) {
                    out.push((n, m, p, r));
                }
            }
        }
    }
    out
}

#[test]
fn rank_conditions_agree_with_construction() {
    let shapes = shapes();
    let options = SynthesisOptions::default();
    let (mut exists, mut absent, mut disagreements) = (0, 0, Vec::new());
    for i in 0..240u64 {
        let (n, m, p, r) = shapes[(i as usize * 7) % shapes.len()];
        let model = random_model(n, m, p, r, 1000 + i);
        if !model.validate(options.tol).is_empty() {
            continue;
        }
        let report = exists_uio(&model, &options).unwrap();
        if report.exists {
            exists += 1;
        } else {
            absent += 1;
        }
        if !report.consistent || !report.condition_a.seeds_agree {
            disagreements.push((i, (n, m, p, r), report));
        }
    }
    println!("corpus: {exists} exist, {absent} do not");
    assert!(exists + absent >= 200, "only {} valid models", exists + absent);
    assert!(exists > 20 && absent > 20, "corpus unbalanced: {exists} exist, {absent} do not");
    assert!(disagreements.is_empty(), "{} disagreements: {:#?}", disagreements.len(), disagreements);
}
