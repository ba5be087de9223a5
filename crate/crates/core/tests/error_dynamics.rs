use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uio_core::datalog::{build_blocks, collect, SignalPolicy, DISTURBANCE_STREAM};
use uio_core::numkit::{self, RankTolerance};
use uio_core::reference;
use uio_core::simlab::{check_error_recursion, run, ObserverInit};
use uio_core::synth::{design_from_model, SynthesisOptions};
use uio_core::{StateSpaceModel, UioRealization};

fn example() -> (StateSpaceModel, UioRealization) {
    let model = reference::example_model();
    let (uio, _) = design_from_model(&model, &SynthesisOptions::place(reference::example_poles())).unwrap();
    (model, uio)
}

/// The example plant is unstable, so the horizon is kept short enough that
/// `|x|` stays far from the point where rounding swamps the error signal.
const HORIZON: usize = 8;

#[test]
fn recursion_holds_and_error_ignores_disturbance() {
    let (model, uio) = example();
    let input = SignalPolicy::uniform(-4.0, 4.0);
    let disturbance = SignalPolicy::uniform(-3.0, 3.0);
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
        let init = ObserverInit::State(DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0)));
        let trace = run(&model, &uio, HORIZON, &input, &disturbance, &x0, &init, seed).unwrap();
        let rec = check_error_recursion(&trace, &uio.a_uio, 1e-10).unwrap();
        assert!(rec.passed, "seed {seed}: {rec:?}");

        let other = disturbance.realize(HORIZON + 1, 1, seed + 1, DISTURBANCE_STREAM).unwrap();
        let swapped = run(&model, &uio, HORIZON, &input, &SignalPolicy::Explicit(other), &x0, &init, seed).unwrap();
        for (a, b) in trace.e.iter().zip(&swapped.e) {
            assert!((a - b).amax() < 1e-10, "seed {seed}");
        }
    }
}

#[test]
fn error_decays_geometrically() {
    // Stable plant so that a long horizon stays well conditioned.
    let model = StateSpaceModel::new(
        DMatrix::from_row_slice(3, 3, &[0.5, 0.2, 0.0, -0.1, 0.6, 0.3, 0.0, 0.1, 0.4]),
        DMatrix::from_row_slice(3, 1, &[1.0, 0.0, 1.0]),
        DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 1.0]),
        DMatrix::zeros(2, 1),
        DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 0.0]),
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
    )
    .unwrap();
    let (uio, diag) = design_from_model(&model, &SynthesisOptions::default()).unwrap();
    let rho = diag.spectrum.spectral_radius + 0.05;
    // kappa from the matrix powers themselves: ||A^t|| <= kappa rho^t.
    let mut power = DMatrix::identity(3, 3);
    let mut kappa = 1.0_f64;
    for t in 0..60 {
        kappa = kappa.max(numkit::singular_values(&power)[0] / rho.powi(t));
        power = &uio.a_uio * power;
    }
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let x0 = DVector::from_fn(3, |_, _| rng.gen_range(-5.0..5.0));
        let init = ObserverInit::State(DVector::from_fn(3, |_, _| rng.gen_range(-5.0..5.0)));
        let trace = run(
            &model,
            &uio,
            50,
            &SignalPolicy::uniform(-4.0, 4.0),
            &SignalPolicy::uniform(-3.0, 3.0),
            &x0,
            &init,
            seed,
        )
        .unwrap();
        assert!(check_error_recursion(&trace, &uio.a_uio, 1e-10).unwrap().passed);
        let e0 = trace.e[0].norm();
        for (t, e) in trace.e.iter().enumerate() {
            assert!(e.norm() <= kappa * rho.powi(t as i32) * e0 + 1e-12, "seed {seed} t {t}");
        }
    }
}

#[test]
fn collection_is_deterministic_and_windows_are_compatible() {
    let model = reference::example_model();
    let go = || {
        collect(
            &model,
            11,
            &SignalPolicy::uniform(-4.0, 4.0),
            &SignalPolicy::uniform(-3.0, 3.0),
            &DVector::zeros(3),
            42,
        )
        .unwrap()
    };
    let (a, b) = (go(), go());
    assert_eq!(a, b);
    let blocks = build_blocks(&a, model.dims()).unwrap();
    assert_eq!(build_blocks(&b, model.dims()).unwrap(), blocks);
    for j in 0..blocks.columns() {
        let window = blocks.phi.column(j).into_owned();
        assert!(blocks.compatible(&window, RankTolerance::default()).unwrap(), "column {j}");
    }
}
