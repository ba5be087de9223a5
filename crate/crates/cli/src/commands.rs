use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DVector;
use uio_core::datalog::{self, SignalPolicy, UNVERIFIABLE_ASSUMPTION};
use uio_core::existcheck::{self, ConstructiveOutcome};
use uio_core::io::{self as files, UioDiagnostics};
use uio_core::numkit::{self, RankTolerance};
use uio_core::simlab::{self, ObserverInit};
use uio_core::synth::{self, GainMethod, SynthesisDiagnostics, SynthesisOptions};
use uio_core::{reference, Complex64, Dims, UioError};

use crate::format::{complex_list, num};
use crate::{Command, Gain, GainArgs, SignalArgs, Tuning};

pub const EXIT_DEMO_FAILED: u8 = 1;
pub const EXIT_NO_UIO: u8 = 2;
pub const EXIT_INVALID: u8 = 4;

pub const DEMO_HORIZON: usize = 8;
const DEMO_SEED: u64 = 11;
const DEMO_RECORD_LEN: usize = 11;
/// Acceptor tolerance for matrices printed to four decimals.
const PRINTED_TOL: f64 = 5e-3;
const DESIGN_TOL: f64 = 1e-8;
const RECURSION_TOL: f64 = 1e-10;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(UioError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(UioError::NoUio(_)) => EXIT_NO_UIO,
            _ => EXIT_INVALID,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<UioError> for CliError {
    fn from(e: UioError) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(UioError::Io(e))
    }
}

type CliResult<T> = Result<T, CliError>;

pub fn dispatch(command: Command) -> CliResult<u8> {
    match command {
        Command::Check { from_model, tuning, out } => check(&from_model, &tuning, out.as_deref()),
        Command::Design { from_model, from_data, dims, tuning, gain, out } => design(
            from_model.as_deref(),
            from_data.as_deref(),
            dims.as_deref(),
            &tuning,
            &gain,
            out.as_deref(),
        ),
        Command::Collect { from_model, t, seed, signals, x0, out } => {
            collect(&from_model, t, seed, &signals, x0.as_deref(), out.as_deref())
        }
        Command::Simulate { from_model, uio, t, seed, signals, x0, zero_error, out } => {
            simulate(&from_model, &uio, t, seed, &signals, x0.as_deref(), zero_error, out.as_deref())
        }
        Command::DemoPaper { gain, tuning, t, corrupt_fixture } => demo(&gain, &tuning, t, corrupt_fixture),
    }
}

fn parse_list<T: std::str::FromStr>(what: &str, text: &str) -> CliResult<Vec<T>> {
    text.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|_| CliError::Usage(format!("bad {what} entry `{s}`"))))
        .collect()
}

fn parse_dims(text: &str) -> CliResult<(usize, usize, usize, Option<usize>)> {
    match parse_list::<usize>("--dims", text)?.as_slice() {
        [n, m, p] => Ok((*n, *m, *p, None)),
        [n, m, p, r] => Ok((*n, *m, *p, Some(*r))),
        _ => Err(CliError::Usage(format!("--dims expects n,m,p[,r], got `{text}`"))),
    }
}

fn parse_bounds(flag: &str, text: &str) -> CliResult<SignalPolicy> {
    match parse_list::<f64>(flag, text)?.as_slice() {
        &[lo, hi] if lo.is_finite() && hi.is_finite() && lo <= hi => Ok(SignalPolicy::uniform(lo, hi)),
        _ => Err(CliError::Usage(format!("{flag} expects LO,HI with LO <= HI, got `{text}`"))),
    }
}

fn parse_vector(flag: &str, text: Option<&str>, n: usize) -> CliResult<Option<DVector<f64>>> {
    let Some(text) = text else { return Ok(None) };
    let v = parse_list::<f64>(flag, text)?;
    if v.len() != n {
        return Err(CliError::Usage(format!("{flag} has {} entries, the model has n = {n}", v.len())));
    }
    Ok(Some(DVector::from_vec(v)))
}

fn options(tuning: &Tuning, gain: Option<&GainArgs>, default_gain: Gain) -> CliResult<SynthesisOptions> {
    let mut opts = SynthesisOptions { seed: tuning.seed, ..SynthesisOptions::default() };
    if let Some(rel) = tuning.tol_rank {
        opts.tol = RankTolerance::new(rel, 0.0)?;
    }
    if let Some(margin) = tuning.schur_margin {
        if !(0.0..1.0).contains(&margin) {
            return Err(CliError::Usage(format!("--schur-margin must lie in [0, 1), got {margin}")));
        }
        opts.schur_margin = margin;
    }
    let (method, poles) = match gain {
        Some(g) => (g.gain.unwrap_or(default_gain), g.poles.as_deref()),
        None => (default_gain, None),
    };
    opts.gain = match (method, poles) {
        (Gain::Riccati, None) => GainMethod::Riccati,
        (Gain::Riccati, Some(_)) => return Err(CliError::Usage("--poles requires --gain place".into())),
        (Gain::Place, Some(list)) => GainMethod::Place(parse_list::<Complex64>("--poles", list)?),
        (Gain::Place, None) if default_gain == Gain::Place => GainMethod::Place(reference::example_poles()),
        (Gain::Place, None) => return Err(CliError::Usage("--gain place requires --poles".into())),
    };
    Ok(opts)
}

/// Opens `path` for writing, or stdout when absent.
fn sink(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(std::io::stdout())),
    })
}

fn check(path: &Path, tuning: &Tuning, out: Option<&Path>) -> CliResult<u8> {
    let model = files::read_model(path)?;
    let opts = options(tuning, None, Gain::Riccati)?;
    let report = existcheck::exists_uio(&model, &opts)?;
    let a = &report.condition_a;
    let b = &report.condition_b;
    println!("model: {}", model.name.as_deref().unwrap_or("(unnamed)"));
    let d = model.dims();
    println!("dimensions: n={} m={} p={} r={}", d.n, d.m, d.p, d.r);
    println!(
        "condition (a): {} (normal rank {} of {}, rank drops {}, boundary points {}, seeds agree {})",
        a.holds,
        a.normal_rank,
        a.target,
        complex_list(&a.drops),
        a.boundary.len(),
        a.seeds_agree
    );
    println!(
        "condition (b): {} (rank [[CE, F], [F, 0]] = {}, rank(F) + r = {})",
        b.holds,
        b.block_rank,
        b.f_rank + b.r
    );
    let constructive = match &report.constructive {
        ConstructiveOutcome::Success { spectral_radius } => format!("success (spectral radius {})", num(*spectral_radius)),
        ConstructiveOutcome::NoUio(cause) => format!("no observer: {cause}"),
        ConstructiveOutcome::Error(e) => format!("error: {e}"),
    };
    println!("constructive design: {constructive}");
    println!("observer exists: {}", report.exists);
    if !report.consistent {
        eprintln!("warning: rank conditions and constructive design disagree");
    }
    if let Some(out) = out {
        let mut w = sink(Some(out))?;
        let json = serde_json::to_string_pretty(&report).map_err(|e| UioError::Parse(e.to_string()))?;
        writeln!(w, "{json}")?;
        w.flush()?;
    }
    Ok(if report.exists { 0 } else { EXIT_NO_UIO })
}

fn design(
    from_model: Option<&Path>,
    from_data: Option<&Path>,
    dims: Option<&str>,
    tuning: &Tuning,
    gain: &GainArgs,
    out: Option<&Path>,
) -> CliResult<u8> {
    let opts = options(tuning, Some(gain), Gain::Riccati)?;
    let (uio, diag, acceptor) = match (from_model, from_data) {
        (Some(path), None) => {
            let model = files::read_model(path)?;
            let (uio, diag) = synth::design_from_model(&model, &opts)?;
            let acc = synth::verify_acceptor(&model, &uio, DESIGN_TOL)?;
            (uio, diag, Some(acc))
        }
        (None, Some(path)) => {
            let dims = dims.ok_or_else(|| CliError::Usage("--from-data requires --dims".into()))?;
            let (n, m, p, r) = parse_dims(dims)?;
            let data = files::read_trajectory_file(path)?;
            let have = data.dims();
            if (have.n, have.m, have.p) != (n, m, p) || (data.is_synthetic() && r.is_some_and(|r| r != have.r)) {
                return Err(CliError::Core(UioError::DimensionMismatch(format!(
                    "--dims {dims} does not match the file (n={}, m={}, p={}, r={})",
                    have.n, have.m, have.p, have.r
                ))));
            }
            let blocks = datalog::build_blocks(&data, have)?;
            if data.is_synthetic() {
                eprintln!("data assumption holds: {}", blocks.assumption_holds()?);
            } else {
                eprintln!("warning: {UNVERIFIABLE_ASSUMPTION}");
            }
            let (uio, diag) = synth::design_from_data(&blocks, Dims { n, m, p, r: r.unwrap_or(have.r) }, &opts)?;
            (uio, diag, None)
        }
        _ => return Err(CliError::Usage("give exactly one of --from-model and --from-data".into())),
    };
    summarize_design(&diag);
    let doc_diag = UioDiagnostics::new(
        &diag.spectrum.eigenvalues,
        diag.spectrum.spectral_radius,
        diag.spectrum.is_schur,
        acceptor.as_ref(),
    );
    let mut w = sink(out)?;
    writeln!(w, "{}", files::uio_to_json(&uio, Some(&doc_diag)))?;
    w.flush()?;
    Ok(0)
}

fn summarize_design(diag: &SynthesisDiagnostics) {
    eprintln!("A_uio spectrum: {}", complex_list(&diag.spectrum.eigenvalues));
    eprintln!("spectral radius: {}", num(diag.spectrum.spectral_radius));
    eprintln!("|Omega V_f - I|: {}", num(diag.left_inverse_residual));
}

fn collect(
    path: &Path,
    t: usize,
    seed: u64,
    signals: &SignalArgs,
    x0: Option<&str>,
    out: Option<&Path>,
) -> CliResult<u8> {
    if t < 2 {
        return Err(CliError::Usage(format!("--T must be at least 2, got {t}")));
    }
    let model = files::read_model(path)?;
    let input = parse_bounds("--input-bounds", &signals.input_bounds)?;
    let disturbance = parse_bounds("--disturbance-bounds", &signals.disturbance_bounds)?;
    let x0 = parse_vector("--x0", x0, model.n())?.unwrap_or_else(|| DVector::zeros(model.n()));
    let data = datalog::collect(&model, t, &input, &disturbance, &x0, seed)?;
    let blocks = datalog::build_blocks(&data, model.dims())?;
    let holds = blocks.assumption_holds()?;
    let mut w = sink(out)?;
    files::write_trajectory(&mut w, &data)?;
    w.flush()?;
    eprintln!("samples: {t}");
    if holds {
        eprintln!("data assumption holds: true");
    } else {
        eprintln!("warning: data assumption fails: (X_p, U_p, U_f, D_p, D_f) is not of full row rank");
    }
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    model_path: &Path,
    uio_path: &Path,
    t: usize,
    seed: u64,
    signals: &SignalArgs,
    x0: Option<&str>,
    zero_error: bool,
    out: Option<&Path>,
) -> CliResult<u8> {
    if t < 2 {
        return Err(CliError::Usage(format!("--T must be at least 2, got {t}")));
    }
    let model = files::read_model(model_path)?;
    let (uio, _) = files::read_uio(uio_path)?;
    uio.check_dims(model.dims())?;
    let input = parse_bounds("--input-bounds", &signals.input_bounds)?;
    let disturbance = parse_bounds("--disturbance-bounds", &signals.disturbance_bounds)?;
    let x0 = parse_vector("--x0", x0, model.n())?.unwrap_or_else(|| simlab::random_initial_state(model.n(), seed));
    let init = if zero_error { ObserverInit::MatchPlant } else { ObserverInit::zero(model.n()) };
    let trace = simlab::run(&model, &uio, t, &input, &disturbance, &x0, &init, seed)?;
    let mut w = sink(out)?;
    files::write_trace(&mut w, &trace)?;
    w.flush()?;

    let stats = simlab::convergence_stats(&trace)?;
    let rec = simlab::check_error_recursion(&trace, &uio.a_uio, RECURSION_TOL)?;
    let acc = synth::verify_acceptor(&model, &uio, DESIGN_TOL)?;
    eprintln!("steps: {t}");
    eprintln!("initial error norm: {}", num(stats.initial_norm));
    eprintln!("final error norm: {}", num(stats.final_norm));
    match stats.decay_factor() {
        Some(f) => eprintln!("decay estimate per step: {}", num(f)),
        None => eprintln!("decay estimate per step: undefined (error vanished)"),
    }
    eprintln!(
        "error recursion e(t+1) = A_uio e(t): {} (max residual {})",
        if rec.passed { "holds" } else { "FAILS" },
        num(rec.max_residual)
    );
    if !acc.is_acceptor() {
        eprintln!(
            "warning: observer is not an acceptor for this model ({} residual {})",
            acc.first_failure().unwrap_or("?"),
            num(acc.max_residual())
        );
    }
    Ok(0)
}

struct Demo {
    failed: usize,
}

impl Demo {
    fn check(&mut self, name: &str, passed: bool, detail: String) {
        println!("[{}] {name}: {detail}", if passed { "ok" } else { "FAIL" });
        if !passed {
            self.failed += 1;
        }
    }
}

fn demo(gain: &GainArgs, tuning: &Tuning, horizon: usize, corrupt: bool) -> CliResult<u8> {
    if horizon < 2 {
        return Err(CliError::Usage(format!("--T must be at least 2, got {horizon}")));
    }
    let opts = options(tuning, Some(gain), Gain::Place)?;
    let model = reference::example_model();
    let mut printed_uio = reference::example_uio();
    let mut printed_psi = reference::example_kernel();
    if corrupt {
        printed_uio.b_y[(0, 0)] += 0.25;
        printed_psi[(0, 0)] += 0.25;
    }
    let mut demo = Demo { failed: 0 };
    match &opts.gain {
        GainMethod::Riccati => println!("gain: riccati"),
        GainMethod::Place(p) => println!("gain: place {}", complex_list(p)),
    }

    let report = existcheck::exists_uio(&model, &opts)?;
    demo.check(
        "existence",
        report.exists && report.consistent,
        format!(
            "condition (a) {}, condition (b) {} (rank {} = rank(F) + r = {}), constructive route {}",
            report.condition_a.holds,
            report.condition_b.holds,
            report.condition_b.block_rank,
            report.condition_b.f_rank + report.condition_b.r,
            if report.constructive.succeeded() { "succeeds" } else { "fails" }
        ),
    );

    let gamma = model.consistency_matrix();
    let annihilation = (&printed_psi * &gamma).amax();
    let bound = 1e-9 * (1.0 + numkit::singular_values(&gamma)[0]);
    let ker = synth::kernel_representation(&gamma, model.dims(), &opts)?;
    let angle = numkit::max_principal_angle(&printed_psi.transpose(), &ker.psi().transpose(), opts.tol);
    demo.check(
        "printed annihilator",
        annihilation < bound && angle < 1e-8,
        format!("max |Psi Gamma| = {}, principal angle to computed kernel = {}", num(annihilation), num(angle)),
    );

    let acc = synth::verify_acceptor(&model, &printed_uio, PRINTED_TOL)?;
    let printed_eig = numkit::eigenvalues(&printed_uio.a_uio)?;
    demo.check(
        "printed observer",
        acc.is_acceptor(),
        format!(
            "acc1 {}, acc2 {}, acc3 {} (tolerance {}); printed A* spectrum {}",
            num(acc.acc1),
            num(acc.acc2),
            num(acc.acc3),
            num(PRINTED_TOL),
            complex_list(&printed_eig)
        ),
    );

    let model_route = synth::design_from_model(&model, &opts);
    let model_spectrum = match &model_route {
        Ok((uio, diag)) => {
            let v = synth::verify_uio(&model, uio, DESIGN_TOL, opts.schur_margin)?;
            let placed = match &opts.gain {
                GainMethod::Place(p) => numkit::multiset_distance(&diag.spectrum.eigenvalues, p) < 1e-6,
                GainMethod::Riccati => true,
            };
            demo.check(
                "model route",
                v.is_uio && placed,
                format!(
                    "A_uio spectrum {}, max acceptor residual {}",
                    complex_list(&diag.spectrum.eigenvalues),
                    num(v.acceptor.max_residual())
                ),
            );
            Some(diag.spectrum.eigenvalues.clone())
        }
        Err(e) => {
            demo.check("model route", false, e.to_string());
            None
        }
    };

    let data = datalog::collect(
        &model,
        DEMO_RECORD_LEN,
        &SignalPolicy::uniform(-4.0, 4.0),
        &SignalPolicy::uniform(-3.0, 3.0),
        &DVector::zeros(model.n()),
        DEMO_SEED,
    )?;
    let blocks = datalog::build_blocks(&data, model.dims())?;
    let assumption = blocks.assumption_holds()?;
    match synth::design_from_data(&blocks, model.dims(), &opts) {
        Ok((uio, diag)) => {
            let v = synth::verify_uio(&model, &uio, DESIGN_TOL, opts.schur_margin)?;
            let gap = model_spectrum
                .as_ref()
                .map_or(f64::INFINITY, |s| numkit::multiset_distance(s, &diag.spectrum.eigenvalues));
            demo.check(
                "data route",
                assumption && v.is_uio && gap < 1e-6,
                format!(
                    "T = {DEMO_RECORD_LEN}, assumption {assumption}, max acceptor residual {}, spectrum gap to model route {}",
                    num(v.acceptor.max_residual()),
                    num(gap)
                ),
            );
        }
        Err(e) => demo.check("data route", false, e.to_string()),
    }

    if let Ok((uio, _)) = &model_route {
        let x0 = simlab::random_initial_state(model.n(), DEMO_SEED);
        let trace = simlab::run(
            &model,
            uio,
            horizon,
            &SignalPolicy::uniform(-4.0, 4.0),
            &SignalPolicy::uniform(-3.0, 3.0),
            &x0,
            &ObserverInit::zero(model.n()),
            DEMO_SEED,
        )?;
        let rec = simlab::check_error_recursion(&trace, &uio.a_uio, RECURSION_TOL)?;
        println!("error trace ||e(t)||:");
        for (t, e) in trace.error_norms().iter().enumerate() {
            println!("  t={t:<3} {}", num(*e));
        }
        demo.check(
            "error recursion",
            rec.passed,
            format!("max |e(t+1) - A_uio e(t)| = {} over {horizon} steps", num(rec.max_residual)),
        );
    }

    println!("{}", if demo.failed == 0 { "all checks passed".to_string() } else { format!("{} check(s) failed", demo.failed) });
    Ok(if demo.failed == 0 { 0 } else { EXIT_DEMO_FAILED })
}
