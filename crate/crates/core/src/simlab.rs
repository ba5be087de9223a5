//! Joint simulation of plant and observer, and checks on the resulting
//! estimation error `e(t) = x(t) - x_hat(t)`.

use nalgebra::{DMatrix, DVector};

use crate::datalog::{SignalPolicy, DISTURBANCE_STREAM, INPUT_STREAM};
use crate::error::{Result, UioError};
use crate::plant::{StateSpaceModel, UioRealization};

/// Error norms below this are treated as exact zeros by the decay fit.
pub const ZERO_ERROR_NORM: f64 = 1e-14;

/// Generator stream for seeded initial states; streams 0 and 1 drive the
/// input and the disturbance.
pub const INITIAL_STATE_STREAM: u64 = 2;

/// Initial state drawn uniformly from `[-1, 1)^n`.
pub fn random_initial_state(n: usize, seed: u64) -> DVector<f64> {
    SignalPolicy::uniform(-1.0, 1.0)
        .realize(1, n, seed, INITIAL_STATE_STREAM)
        .expect("finite bounds")
        .remove(0)
}

/// Initial observer state.
#[derive(Debug, Clone, PartialEq)]
pub enum ObserverInit {
    State(DVector<f64>),
    /// `z(0) = x(0) - D_u u(0) - D_y y(0)`, so that `e(0) = 0`.
    MatchPlant,
}

impl ObserverInit {
    pub fn zero(n: usize) -> Self {
        ObserverInit::State(DVector::zeros(n))
    }
}

/// Every signal of a run, sampled at `t = 0..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub x: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub d: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
    pub z: Vec<DVector<f64>>,
    pub x_hat: Vec<DVector<f64>>,
    pub e: Vec<DVector<f64>>,
}

impl RunTrace {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn error_norms(&self) -> Vec<f64> {
        self.e.iter().map(|e| e.norm()).collect()
    }
}

/// Runs plant and observer for `steps` steps. Input and disturbance use
/// the same seeded streams as data collection.
#[allow(clippy::too_many_arguments)]
pub fn run(
    model: &StateSpaceModel,
    uio: &UioRealization,
    steps: usize,
    input: &SignalPolicy,
    disturbance: &SignalPolicy,
    x0: &DVector<f64>,
    init: &ObserverInit,
    seed: u64,
) -> Result<RunTrace> {
    if steps < 1 {
        return Err(UioError::Precondition("simulation needs at least one step".into()));
    }
    let dims = model.dims();
    uio.check_dims(dims)?;
    if x0.len() != dims.n {
        return Err(UioError::DimensionMismatch(format!("x0 has length {}, expected {}", x0.len(), dims.n)));
    }
    let len = steps + 1;
    let u = input.realize(len, dims.m, seed, INPUT_STREAM)?;
    let d = disturbance.realize(len, dims.r, seed, DISTURBANCE_STREAM)?;

    let mut trace = RunTrace {
        x: Vec::with_capacity(len),
        u,
        d,
        y: Vec::with_capacity(len),
        z: Vec::with_capacity(len),
        x_hat: Vec::with_capacity(len),
        e: Vec::with_capacity(len),
    };
    let mut x = x0.clone();
    let mut z = match init {
        ObserverInit::State(z0) if z0.len() != dims.n => {
            return Err(UioError::DimensionMismatch(format!("z0 has length {}, expected {}", z0.len(), dims.n)));
        }
        ObserverInit::State(z0) => z0.clone(),
        ObserverInit::MatchPlant => {
            let (_, y0) = model.step(&x, &trace.u[0], &trace.d[0])?;
            &x - &uio.d_u * &trace.u[0] - &uio.d_y * y0
        }
    };
    for t in 0..len {
        let (x_next, y) = model.step(&x, &trace.u[t], &trace.d[t])?;
        let (z_next, x_hat) = uio.step(&z, &trace.u[t], &y);
        trace.e.push(&x - &x_hat);
        trace.x.push(x);
        trace.y.push(y);
        trace.z.push(z);
        trace.x_hat.push(x_hat);
        x = x_next;
        z = z_next;
    }
    Ok(trace)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecursionCheck {
    pub passed: bool,
    /// `max_t max_i |e(t+1) - A_uio e(t)|_i`
    pub max_residual: f64,
    /// `max_t max_i |e(t)|_i`
    pub max_error: f64,
}

/// Checks `e(t+1) = A_uio e(t)` along the trace, relative to `1 + max|e|`.
pub fn check_error_recursion(trace: &RunTrace, a_uio: &DMatrix<f64>, tol: f64) -> Result<RecursionCheck> {
    if trace.len() < 2 {
        return Err(UioError::Precondition("recursion check needs at least 2 samples".into()));
    }
    let n = trace.e[0].len();
    if a_uio.shape() != (n, n) {
        return Err(UioError::DimensionMismatch(format!(
            "A_uio is {}x{}, error has length {n}",
            a_uio.nrows(),
            a_uio.ncols()
        )));
    }
    let amax = |v: &DVector<f64>| if v.is_empty() { 0.0 } else { v.amax() };
    let max_error = trace.e.iter().map(amax).fold(0.0, f64::max);
    let max_residual = trace
        .e
        .windows(2)
        .map(|w| amax(&(&w[1] - a_uio * &w[0])))
        .fold(0.0, f64::max);
    Ok(RecursionCheck {
        passed: max_residual < tol * (1.0 + max_error),
        max_residual,
        max_error,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceStats {
    pub initial_norm: f64,
    pub final_norm: f64,
    /// Least-squares slope of `ln ||e(t)||` over the second half of the
    /// trace; `None` when fewer than two samples there are nonzero.
    pub log_decay: Option<f64>,
}

impl ConvergenceStats {
    /// Per-step contraction factor `exp(log_decay)`.
    pub fn decay_factor(&self) -> Option<f64> {
        self.log_decay.map(f64::exp)
    }
}

pub fn convergence_stats(trace: &RunTrace) -> Result<ConvergenceStats> {
    if trace.len() < 3 {
        return Err(UioError::Precondition("convergence statistics need at least 3 samples".into()));
    }
    let norms = trace.error_norms();
    Ok(ConvergenceStats {
        initial_norm: norms[0],
        final_norm: norms[norms.len() - 1],
        log_decay: log_slope(&norms, norms.len() / 2),
    })
}

/// Least-squares slope of `ln v(t)` against `t` for `t >= from`, skipping
/// values below [`ZERO_ERROR_NORM`].
pub fn log_slope(values: &[f64], from: usize) -> Option<f64> {
    let pts: Vec<(f64, f64)> = values
        .iter()
        .enumerate()
        .skip(from)
        .filter(|(_, &v)| v >= ZERO_ERROR_NORM)
        .map(|(t, &v)| (t as f64, v.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let ml = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let num: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - ml)).sum();
    let den: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    Some(num / den)
}
