//! Offline experiment data and the past/future block matrices built from it.
//!
//! Random signals come from a ChaCha8 generator seeded with the run seed:
//! stream 0 drives the known input, stream 1 the disturbance. Samples are
//! drawn component by component in time order from a uniform distribution on
//! `[low, high)`, so a fixed seed always reproduces the same record and the
//! input sequence does not depend on how the disturbance is generated.

use nalgebra::{DMatrix, DVector};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, UioError};
use crate::numkit::{self, RankTolerance};
use crate::plant::{Dims, StateSpaceModel};

pub const INPUT_STREAM: u64 = 0;
pub const DISTURBANCE_STREAM: u64 = 1;

/// How a signal is produced during collection or simulation.
#[derive(Debug, Clone, PartialEq)]
pub enum SignalPolicy {
    Zero,
    Explicit(Vec<DVector<f64>>),
    Uniform { low: f64, high: f64 },
}

impl SignalPolicy {
    pub fn uniform(low: f64, high: f64) -> Self {
        SignalPolicy::Uniform { low, high }
    }

    /// Realizes `len` samples of dimension `dim`.
    pub fn realize(&self, len: usize, dim: usize, seed: u64, stream: u64) -> Result<Vec<DVector<f64>>> {
        match self {
            SignalPolicy::Zero => Ok(vec![DVector::zeros(dim); len]),
            SignalPolicy::Explicit(seq) => {
                if seq.len() < len {
                    return Err(UioError::Precondition(format!(
                        "explicit sequence has {} samples, {len} needed",
                        seq.len()
                    )));
                }
                if let Some(bad) = seq.iter().find(|v| v.len() != dim) {
                    return Err(UioError::Precondition(format!(
                        "explicit sample of length {}, expected {dim}",
                        bad.len()
                    )));
                }
                Ok(seq[..len].to_vec())
            }
            SignalPolicy::Uniform { low, high } => {
                if !(low.is_finite() && high.is_finite()) || low > high {
                    return Err(UioError::Precondition(format!("bad uniform bounds ({low}, {high})")));
                }
                if low == high {
                    return Ok(vec![DVector::from_element(dim, *low); len]);
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(stream);
                let dist = Uniform::new(*low, *high);
                Ok((0..len)
                    .map(|_| DVector::from_fn(dim, |_, _| dist.sample(&mut rng)))
                    .collect())
            }
        }
    }
}

/// Recorded state/input/output trajectory, plus the disturbance when the
/// record is synthetic.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoricalData {
    pub x: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
    pub d: Option<Vec<DVector<f64>>>,
}

impl HistoricalData {
    pub fn new(
        x: Vec<DVector<f64>>,
        u: Vec<DVector<f64>>,
        y: Vec<DVector<f64>>,
        d: Option<Vec<DVector<f64>>>,
    ) -> Result<Self> {
        let t = x.len();
        if t < 2 {
            return Err(UioError::Precondition(format!("need at least 2 samples, got {t}")));
        }
        if u.len() != t || y.len() != t || d.as_ref().is_some_and(|d| d.len() != t) {
            return Err(UioError::Precondition("signal sequences differ in length".into()));
        }
        let uniform = |seq: &[DVector<f64>]| seq.iter().all(|v| v.len() == seq[0].len());
        if !uniform(&x) || !uniform(&u) || !uniform(&y) || d.as_ref().is_some_and(|d| !uniform(d)) {
            return Err(UioError::Precondition("sample dimension changes over time".into()));
        }
        Ok(Self { x, u, y, d })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn is_synthetic(&self) -> bool {
        self.d.is_some()
    }

    /// Dimensions `(n, m, p, r)`; `r` is zero without a disturbance record.
    pub fn dims(&self) -> Dims {
        Dims {
            n: self.x[0].len(),
            m: self.u[0].len(),
            p: self.y[0].len(),
            r: self.d.as_ref().map_or(0, |d| d[0].len()),
        }
    }
}

/// Runs the plant for `t_len` samples from `x0` and records everything,
/// including the disturbance.
pub fn collect(
    model: &StateSpaceModel,
    t_len: usize,
    input: &SignalPolicy,
    disturbance: &SignalPolicy,
    x0: &DVector<f64>,
    seed: u64,
) -> Result<HistoricalData> {
    if t_len < 2 {
        return Err(UioError::Precondition(format!("experiment length must be at least 2, got {t_len}")));
    }
    let dims = model.dims();
    if x0.len() != dims.n {
        return Err(UioError::DimensionMismatch(format!("x0 has length {}, expected {}", x0.len(), dims.n)));
    }
    let u = input.realize(t_len, dims.m, seed, INPUT_STREAM)?;
    let d = disturbance.realize(t_len, dims.r, seed, DISTURBANCE_STREAM)?;
    let mut x = Vec::with_capacity(t_len);
    let mut y = Vec::with_capacity(t_len);
    let mut state = x0.clone();
    for t in 0..t_len {
        let (next, out) = model.step(&state, &u[t], &d[t])?;
        x.push(state);
        y.push(out);
        state = next;
    }
    HistoricalData::new(x, u, y, Some(d))
}

/// Past/future block matrices and their stack `Phi = (X_p, X_f, U_p, U_f, Y_p, Y_f)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataBlocks {
    pub x_p: DMatrix<f64>,
    pub x_f: DMatrix<f64>,
    pub u_p: DMatrix<f64>,
    pub u_f: DMatrix<f64>,
    pub y_p: DMatrix<f64>,
    pub y_f: DMatrix<f64>,
    pub d_p: Option<DMatrix<f64>>,
    pub d_f: Option<DMatrix<f64>>,
    pub phi: DMatrix<f64>,
}

fn past_future(seq: &[DVector<f64>], dim: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let cols = seq.len() - 1;
    let past = DMatrix::from_fn(dim, cols, |i, j| seq[j][i]);
    let future = DMatrix::from_fn(dim, cols, |i, j| seq[j + 1][i]);
    (past, future)
}

fn vstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.rows_mut(at, b.nrows()).copy_from(*b);
        at += b.nrows();
    }
    out
}

impl DataBlocks {
    pub fn dims(&self) -> Dims {
        Dims {
            n: self.x_p.nrows(),
            m: self.u_p.nrows(),
            p: self.y_p.nrows(),
            r: self.d_p.as_ref().map_or(0, |d| d.nrows()),
        }
    }

    pub fn columns(&self) -> usize {
        self.phi.ncols()
    }

    /// `true` iff `(X_p, U_p, U_f, D_p, D_f)` has full row rank `n + 2m + 2r`.
    pub fn assumption_holds(&self) -> Result<bool> {
        let (Some(d_p), Some(d_f)) = (&self.d_p, &self.d_f) else {
            return Err(UioError::MissingDisturbanceRecord);
        };
        let stack = vstack(&[&self.x_p, &self.u_p, &self.u_f, d_p, d_f]);
        Ok(numkit::rank(&stack, RankTolerance::default()) == stack.nrows())
    }

    /// Rank of `(X_p, U_p, U_f)`: the part of the data assumption that can be
    /// checked without a disturbance record.
    pub fn surrogate_excitation(&self) -> SurrogateCheck {
        let stack = vstack(&[&self.x_p, &self.u_p, &self.u_f]);
        let rank = numkit::rank(&stack, RankTolerance::default());
        SurrogateCheck {
            rank,
            target: stack.nrows(),
        }
    }

    /// Distance from `window` to `Im(Phi)`.
    pub fn projection_residual(&self, window: &DVector<f64>, tol: RankTolerance) -> Result<f64> {
        if window.len() != self.phi.nrows() {
            return Err(UioError::DimensionMismatch(format!(
                "window has length {}, expected {}",
                window.len(),
                self.phi.nrows()
            )));
        }
        let q = numkit::range_basis(&self.phi, tol);
        Ok((window - &q * (q.transpose() * window)).norm())
    }

    /// Whether a two-step window `(x, x+, u, u+, y, y+)` lies in `Im(Phi)`.
    /// The residual is accepted below `sqrt(tol.relative) * (1 + |window|)`.
    pub fn compatible(&self, window: &DVector<f64>, tol: RankTolerance) -> Result<bool> {
        let resid = self.projection_residual(window, tol)?;
        Ok(resid <= tol.relative.sqrt() * (1.0 + window.norm()) || resid <= tol.absolute)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SurrogateCheck {
    pub rank: usize,
    pub target: usize,
}

impl SurrogateCheck {
    pub fn full(&self) -> bool {
        self.rank == self.target
    }
}

/// Caveat attached to designs from records without a disturbance channel.
pub const UNVERIFIABLE_ASSUMPTION: &str =
    "disturbance record absent: the data excitation assumption cannot be verified; only (X_p, U_p, U_f) was checked";

/// Slices a record into past/future blocks, checking it against `dims`
/// (`dims.r` is only checked when the record carries a disturbance).
pub fn build_blocks(data: &HistoricalData, dims: Dims) -> Result<DataBlocks> {
    if data.len() < 2 {
        return Err(UioError::Precondition("need at least 2 samples".into()));
    }
    let have = data.dims();
    if (have.n, have.m, have.p) != (dims.n, dims.m, dims.p) || (data.is_synthetic() && have.r != dims.r) {
        return Err(UioError::DimensionMismatch(format!(
            "data has (n,m,p,r) = ({},{},{},{}), expected ({},{},{},{})",
            have.n, have.m, have.p, have.r, dims.n, dims.m, dims.p, dims.r
        )));
    }
    let (x_p, x_f) = past_future(&data.x, dims.n);
    let (u_p, u_f) = past_future(&data.u, dims.m);
    let (y_p, y_f) = past_future(&data.y, dims.p);
    let (d_p, d_f) = match &data.d {
        Some(d) => {
            let (p, f) = past_future(d, dims.r);
            (Some(p), Some(f))
        }
        None => (None, None),
    };
    let phi = vstack(&[&x_p, &x_f, &u_p, &u_f, &y_p, &y_f]);
    Ok(DataBlocks {
        x_p,
        x_f,
        u_p,
        u_f,
        y_p,
        y_f,
        d_p,
        d_f,
        phi,
    })
}

/// Depth-`order` block-Hankel matrix of a vector signal.
pub fn block_hankel(signal: &[DVector<f64>], order: usize) -> DMatrix<f64> {
    let q = signal.first().map_or(0, |v| v.len());
    let cols = signal.len() + 1 - order;
    DMatrix::from_fn(q * order, cols, |i, j| signal[j + i / q][i % q])
}

/// Persistence of excitation: full row rank of the depth-`order` Hankel matrix.
pub fn pe_order(signal: &[DVector<f64>], order: usize) -> Result<bool> {
    if order == 0 || signal.len() < order {
        return Err(UioError::Precondition(format!(
            "signal of length {} cannot be tested for order {order}",
            signal.len()
        )));
    }
    let h = block_hankel(signal, order);
    Ok(numkit::rank(&h, RankTolerance::default()) == h.nrows())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference;

    fn example_data(seed: u64) -> HistoricalData {
        let model = reference::example_model();
        let x0 = SignalPolicy::uniform(-1.0, 1.0).realize(1, 3, seed, 7).unwrap().remove(0);
        collect(
            &model,
            11,
            &SignalPolicy::uniform(-4.0, 4.0),
            &SignalPolicy::uniform(-3.0, 3.0),
            &x0,
            seed,
        )
        .unwrap()
    }

    #[test]
    fn collect_example_shapes() {
        let data = example_data(1);
        assert_eq!(data.len(), 11);
        assert_eq!(data.d.as_ref().unwrap().len(), 11);
        assert!(data.u.iter().all(|u| u[0] > -4.0 && u[0] < 4.0));
        assert!(data.d.as_ref().unwrap().iter().all(|d| d[0] >= -3.0 && d[0] < 3.0));
        assert_eq!(example_data(1), data);
    }

    #[test]
    fn zero_policies_give_zero_data() {
        let model = reference::example_model();
        let data = collect(&model, 2, &SignalPolicy::Zero, &SignalPolicy::Zero, &DVector::zeros(3), 0).unwrap();
        assert!(data.x.iter().chain(&data.y).chain(&data.u).all(|v| v.amax() == 0.0));
    }

    #[test]
    fn explicit_sequence_too_short_is_rejected() {
        let model = reference::example_model();
        let short = SignalPolicy::Explicit(vec![DVector::zeros(1); 3]);
        let err = collect(&model, 5, &short, &SignalPolicy::Zero, &DVector::zeros(3), 0);
        assert!(matches!(err, Err(UioError::Precondition(_))));
        assert!(collect(&model, 1, &SignalPolicy::Zero, &SignalPolicy::Zero, &DVector::zeros(3), 0).is_err());
    }

    #[test]
    fn block_shapes_and_shift() {
        let data = example_data(2);
        let blocks = build_blocks(&data, reference::example_model().dims()).unwrap();
        assert_eq!(blocks.phi.shape(), (12, 10));
        assert_eq!(blocks.x_p.column(3), data.x[3].column(0));
        assert_eq!(blocks.x_f.column(3), data.x[4].column(0));
        assert_eq!(blocks.phi.rows(6, 1), blocks.u_p);

        let shifted = HistoricalData::new(
            data.x[1..].to_vec(),
            data.u[1..].to_vec(),
            data.y[1..].to_vec(),
            data.d.as_ref().map(|d| d[1..].to_vec()),
        )
        .unwrap();
        let sb = build_blocks(&shifted, reference::example_model().dims()).unwrap();
        for j in 0..sb.columns() {
            assert_eq!(sb.x_p.column(j), blocks.x_f.column(j));
        }

        let two = HistoricalData::new(data.x[..2].to_vec(), data.u[..2].to_vec(), data.y[..2].to_vec(), None).unwrap();
        assert_eq!(build_blocks(&two, reference::example_model().dims()).unwrap().columns(), 1);
    }

    #[test]
    fn assumption_cases() {
        let dims = reference::example_model().dims();
        let blocks = build_blocks(&example_data(3), dims).unwrap();
        assert!(blocks.assumption_holds().unwrap());

        let model = reference::example_model();
        let x0 = DVector::from_column_slice(&[1.0, -1.0, 0.5]);
        let flat = collect(&model, 11, &SignalPolicy::Zero, &SignalPolicy::Zero, &x0, 0).unwrap();
        assert!(!build_blocks(&flat, dims).unwrap().assumption_holds().unwrap());

        // 7 rows, only 6 columns
        let short = collect(&model, 7, &SignalPolicy::uniform(-4.0, 4.0), &SignalPolicy::uniform(-3.0, 3.0), &x0, 5).unwrap();
        assert!(!build_blocks(&short, dims).unwrap().assumption_holds().unwrap());

        let mut no_d = example_data(3);
        no_d.d = None;
        let b = build_blocks(&no_d, dims).unwrap();
        assert!(matches!(b.assumption_holds(), Err(UioError::MissingDisturbanceRecord)));
        assert!(b.surrogate_excitation().full());
    }

    #[test]
    fn pe_cases() {
        let constant: Vec<_> = (0..6).map(|_| DVector::from_element(1, 2.0)).collect();
        assert!(pe_order(&constant, 1).unwrap());
        assert!(!pe_order(&constant, 2).unwrap());

        // An impulse at t = 0 only excites the first Hankel column.
        let impulse: Vec<_> = (0..7).map(|t| DVector::from_element(1, if t == 0 { 1.0 } else { 0.0 })).collect();
        assert!(pe_order(&impulse, 1).unwrap());
        assert!(!pe_order(&impulse, 2).unwrap());
        // Delayed to t = order - 1, its Hankel matrix is an anti-diagonal staircase.
        for order in 1..=4 {
            let len = 2 * order - 1;
            let delayed: Vec<_> = (0..len)
                .map(|t| DVector::from_element(1, if t == order - 1 { 1.0 } else { 0.0 }))
                .collect();
            assert!(pe_order(&delayed, order).unwrap(), "order {order}");
        }

        let noise = SignalPolicy::uniform(-4.0, 4.0).realize(11, 1, 42, 0).unwrap();
        assert!(pe_order(&noise, 5).unwrap());
        assert!(pe_order(&noise[..2], 3).is_err());
    }

    #[test]
    fn compatibility_cases() {
        let data = example_data(4);
        let blocks = build_blocks(&data, reference::example_model().dims()).unwrap();
        let tol = RankTolerance::default();
        for j in 0..blocks.columns() {
            assert!(blocks.compatible(&blocks.phi.column(j).into_owned(), tol).unwrap());
        }
        assert!(blocks.compatible(&DVector::zeros(12), tol).unwrap());
        let mut off = blocks.phi.column(0).into_owned();
        off[3] += 1.0;
        assert!(!blocks.compatible(&off, tol).unwrap());
        assert!(blocks.compatible(&DVector::zeros(5), tol).is_err());
    }
}
