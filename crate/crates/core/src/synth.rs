//! Observer synthesis from a kernel representation of the two-step window
//! subspace, and the acceptor/UIO verification predicates.
//!
//! Pipeline, for `Psi = [V_p V_f W_p W_f R_p R_f]` with `ker Psi` equal to
//! the window subspace:
//!
//! 1. `V_f` must have full column rank `n`;
//! 2. `Omega_bar` is its Moore-Penrose left inverse and the rows of
//!    `Delta_f` span the left null space of `V_f`;
//! 3. `A_bar = Omega_bar V_p`, `C_bar = Delta_f V_p`;
//! 4. `L` makes `A_bar + L C_bar` Schur;
//! 5. `Omega = Omega_bar + L Delta_f` and
//!    `Omega Psi = [-A* I -S3 -S4 -S5 -S6]`;
//! 6. `A_uio = A*`, `D_u = S4`, `B_u = S3 + A* S4`, `D_y = S6`,
//!    `B_y = S5 + A* S6`.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::datalog::DataBlocks;
use crate::error::{NoUioCause, Result, UioError};
use crate::numkit::{self, RankTolerance, SpectrumReport, DEFAULT_SCHUR_MARGIN};
use crate::plant::{Dims, StateSpaceModel, UioRealization};

#[derive(Debug, Clone, PartialEq)]
pub enum GainMethod {
    /// Stabilizing gain from the dual Riccati equation.
    Riccati,
    /// Exact assignment of the observer spectrum. Since
    /// `A_uio = -(A_bar + L C_bar)`, the negated poles are placed on
    /// `A_bar + L C_bar`.
    Place(Vec<Complex64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelStyle {
    Orthonormal,
    ReducedEchelon,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisOptions {
    pub gain: GainMethod,
    pub tol: RankTolerance,
    pub schur_margin: f64,
    pub kernel_style: KernelStyle,
    /// Seed for the random output combination used by multi-output placement.
    pub seed: u64,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            gain: GainMethod::Riccati,
            tol: RankTolerance::default(),
            schur_margin: DEFAULT_SCHUR_MARGIN,
            kernel_style: KernelStyle::Orthonormal,
            seed: 0,
        }
    }
}

impl SynthesisOptions {
    pub fn place(poles: Vec<Complex64>) -> Self {
        Self {
            gain: GainMethod::Place(poles),
            ..Self::default()
        }
    }
}

/// Column-partitioned annihilator `Psi = [V_p V_f W_p W_f R_p R_f]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelRep {
    pub v_p: DMatrix<f64>,
    pub v_f: DMatrix<f64>,
    pub w_p: DMatrix<f64>,
    pub w_f: DMatrix<f64>,
    pub r_p: DMatrix<f64>,
    pub r_f: DMatrix<f64>,
}

impl KernelRep {
    /// Splits a `k x 2(n+m+p)` annihilator into its blocks.
    pub fn from_psi(psi: &DMatrix<f64>, dims: Dims) -> Result<Self> {
        let Dims { n, m, p, .. } = dims;
        if psi.ncols() != dims.window_len() {
            return Err(UioError::DimensionMismatch(format!(
                "annihilator has {} columns, windows have {}",
                psi.ncols(),
                dims.window_len()
            )));
        }
        let mut at = 0;
        let mut take = |w: usize| {
            let block = psi.columns(at, w).into_owned();
            at += w;
            block
        };
        Ok(Self {
            v_p: take(n),
            v_f: take(n),
            w_p: take(m),
            w_f: take(m),
            r_p: take(p),
            r_f: take(p),
        })
    }

    pub fn psi(&self) -> DMatrix<f64> {
        let blocks = [&self.v_p, &self.v_f, &self.w_p, &self.w_f, &self.r_p, &self.r_f];
        let cols = blocks.iter().map(|b| b.ncols()).sum();
        let mut out = DMatrix::zeros(self.rows(), cols);
        let mut at = 0;
        for b in blocks {
            out.columns_mut(at, b.ncols()).copy_from(b);
            at += b.ncols();
        }
        out
    }

    pub fn rows(&self) -> usize {
        self.v_p.nrows()
    }

    pub fn dims(&self) -> Dims {
        Dims {
            n: self.v_p.ncols(),
            m: self.w_p.ncols(),
            p: self.r_p.ncols(),
            r: 0,
        }
    }
}

/// Reduced row echelon form with partial pivoting; rows below the pivot
/// threshold are dropped.
pub fn reduced_row_echelon(m: &DMatrix<f64>, tol: RankTolerance) -> DMatrix<f64> {
    let mut a = m.clone();
    let (rows, cols) = a.shape();
    let smax = numkit::singular_values(m).first().copied().unwrap_or(0.0);
    let thr = tol.threshold(rows, cols, smax).max(f64::MIN_POSITIVE);
    let mut lead = 0;
    for col in 0..cols {
        if lead == rows {
            break;
        }
        let (piv, val) = (lead..rows)
            .map(|i| (i, a[(i, col)].abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .expect("non-empty range");
        if val <= thr {
            for i in lead..rows {
                a[(i, col)] = 0.0;
            }
            continue;
        }
        a.swap_rows(lead, piv);
        let pv = a[(lead, col)];
        for j in 0..cols {
            a[(lead, j)] /= pv;
        }
        for i in 0..rows {
            if i != lead {
                let factor = a[(i, col)];
                if factor != 0.0 {
                    for j in 0..cols {
                        let v = a[(lead, j)];
                        a[(i, j)] -= factor * v;
                    }
                }
            }
        }
        lead += 1;
    }
    a.rows(0, lead).into_owned()
}

/// Full-row-rank annihilator of `Im(g)`, split into blocks.
pub fn kernel_representation(g: &DMatrix<f64>, dims: Dims, options: &SynthesisOptions) -> Result<KernelRep> {
    if g.nrows() != dims.window_len() {
        return Err(UioError::DimensionMismatch(format!(
            "subspace basis has {} rows, windows have {}",
            g.nrows(),
            dims.window_len()
        )));
    }
    let basis = numkit::left_null_basis(g, options.tol);
    let psi = match options.kernel_style {
        KernelStyle::Orthonormal => basis,
        KernelStyle::ReducedEchelon => reduced_row_echelon(&basis, options.tol),
    };
    KernelRep::from_psi(&psi, dims)
}

/// Every intermediate of the pipeline plus residuals of its defining identities.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisDiagnostics {
    pub omega_bar: DMatrix<f64>,
    pub delta_f: DMatrix<f64>,
    pub a_bar: DMatrix<f64>,
    pub c_bar: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    pub omega: DMatrix<f64>,
    pub a_star: DMatrix<f64>,
    pub s3: DMatrix<f64>,
    pub s4: DMatrix<f64>,
    pub s5: DMatrix<f64>,
    pub s6: DMatrix<f64>,
    pub spectrum: SpectrumReport,
    /// `max |Omega V_f - I|`
    pub left_inverse_residual: f64,
    /// `max |A* + (A_bar + L C_bar)|`
    pub sign_identity_residual: f64,
    /// `max |Delta_f V_f|`
    pub annihilator_residual: f64,
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        0.0
    } else {
        m.amax()
    }
}

/// Builds an observer from a kernel representation.
pub fn synthesize(ker: &KernelRep, options: &SynthesisOptions) -> Result<(UioRealization, SynthesisDiagnostics)> {
    let n = ker.dims().n;
    let k = ker.rows();
    let vf_rank = if k == 0 { 0 } else { numkit::rank(&ker.v_f, options.tol) };
    if vf_rank < n {
        return Err(UioError::NoUio(NoUioCause::VfRankDeficient { rank: vf_rank, n }));
    }
    let omega_bar = numkit::left_inverse(&ker.v_f, options.tol)?;
    let delta_f = numkit::left_null_basis(&ker.v_f, options.tol);
    let a_bar = &omega_bar * &ker.v_p;
    let c_bar = &delta_f * &ker.v_p;

    let modes = numkit::undetectable_modes(&a_bar, &c_bar, RankTolerance::at_computed_point(), options.schur_margin)?;
    if !modes.is_empty() {
        return Err(UioError::NoUio(NoUioCause::NotDetectable {
            modes: modes.iter().map(|z| (z.re, z.im)).collect(),
        }));
    }
    let gain = match &options.gain {
        GainMethod::Riccati => numkit::stabilizing_gain(&a_bar, &c_bar, options.schur_margin)?,
        GainMethod::Place(poles) => {
            let negated: Vec<Complex64> = poles.iter().map(|z| -z).collect();
            numkit::place_poles(&a_bar, &c_bar, &negated, options.seed)?
        }
    };

    let omega = &omega_bar + &gain * &delta_f;
    let a_star = -(&omega * &ker.v_p);
    let s3 = -(&omega * &ker.w_p);
    let s4 = -(&omega * &ker.w_f);
    let s5 = -(&omega * &ker.r_p);
    let s6 = -(&omega * &ker.r_f);

    let spectrum = numkit::spectrum(&a_star, options.schur_margin)?;
    if !spectrum.is_schur {
        return Err(UioError::NumericalFailure(format!(
            "synthesized A* has spectral radius {}",
            spectrum.spectral_radius
        )));
    }

    let uio = UioRealization {
        a_uio: a_star.clone(),
        b_u: &s3 + &a_star * &s4,
        b_y: &s5 + &a_star * &s6,
        d_u: s4.clone(),
        d_y: s6.clone(),
    };
    let diagnostics = SynthesisDiagnostics {
        left_inverse_residual: max_abs(&(&omega * &ker.v_f - DMatrix::identity(n, n))),
        sign_identity_residual: max_abs(&(&a_star + &a_bar + &gain * &c_bar)),
        annihilator_residual: max_abs(&(&delta_f * &ker.v_f)),
        omega_bar,
        delta_f,
        a_bar,
        c_bar,
        gain,
        omega,
        a_star,
        s3,
        s4,
        s5,
        s6,
        spectrum,
    };
    Ok((uio, diagnostics))
}

/// Data-driven design: annihilate `Im(Phi)` and synthesize.
///
/// Records whose `(X_p, U_p, U_f)` block is rank deficient cannot satisfy
/// the excitation assumption and are rejected before synthesis.
pub fn design_from_data(
    blocks: &DataBlocks,
    dims: Dims,
    options: &SynthesisOptions,
) -> Result<(UioRealization, SynthesisDiagnostics)> {
    let have = blocks.dims();
    if (have.n, have.m, have.p) != (dims.n, dims.m, dims.p) {
        return Err(UioError::DimensionMismatch(format!(
            "data blocks are ({},{},{}), expected ({},{},{})",
            have.n, have.m, have.p, dims.n, dims.m, dims.p
        )));
    }
    let excitation = blocks.surrogate_excitation();
    if !excitation.full() {
        return Err(UioError::NoUio(NoUioCause::InsufficientExcitation {
            rank: excitation.rank,
            target: excitation.target,
        }));
    }
    let ker = kernel_representation(&blocks.phi, dims, options)?;
    synthesize(&ker, options)
}

/// Model-based design: annihilate the exact window subspace `Im(Gamma)`.
pub fn design_from_model(model: &StateSpaceModel, options: &SynthesisOptions) -> Result<(UioRealization, SynthesisDiagnostics)> {
    let violations = model.validate(options.tol);
    if !violations.is_empty() {
        return Err(UioError::InvalidModel(violations.iter().map(ToString::to_string).collect()));
    }
    let ker = kernel_representation(&model.consistency_matrix(), model.dims(), options)?;
    synthesize(&ker, options)
}

/// Max-abs residuals of the three acceptor equations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcceptorReport {
    /// `[-D_y, A D_y - B_y] [[CE, F], [F, 0]] - [-E, 0]`
    pub acc1: f64,
    /// `A_uio - A - [-D_y, A D_y - B_y] [[CA], [C]]`
    pub acc2: f64,
    /// `[B_u; D_u] - [[I - D_y C, -B_y], [0, -D_y]] [B; D]`
    pub acc3: f64,
    pub tol: f64,
}

impl AcceptorReport {
    pub fn is_acceptor(&self) -> bool {
        self.max_residual() < self.tol
    }

    pub fn max_residual(&self) -> f64 {
        self.acc1.max(self.acc2).max(self.acc3)
    }

    /// Name of the first residual at or above tolerance.
    pub fn first_failure(&self) -> Option<&'static str> {
        [("acc1", self.acc1), ("acc2", self.acc2), ("acc3", self.acc3)]
            .into_iter()
            .find(|(_, v)| *v >= self.tol || v.is_nan())
            .map(|(name, _)| name)
    }
}

fn hstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks[0].nrows();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.columns_mut(at, b.ncols()).copy_from(*b);
        at += b.ncols();
    }
    out
}

fn vstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let cols = blocks[0].ncols();
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.rows_mut(at, b.nrows()).copy_from(*b);
        at += b.nrows();
    }
    out
}

pub fn verify_acceptor(model: &StateSpaceModel, uio: &UioRealization, tol: f64) -> Result<AcceptorReport> {
    let dims = model.dims();
    uio.check_dims(dims)?;
    let Dims { n, m, p, r } = dims;
    let (a, b, c, d, e, f) = (&model.a, &model.b, &model.c, &model.d, &model.e, &model.f);

    let coupling = hstack(&[&(-&uio.d_y), &(&uio.a_uio * &uio.d_y - &uio.b_y)]);

    let zero_pr = DMatrix::zeros(p, r);
    let block = vstack(&[&hstack(&[&(c * e), f]), &hstack(&[f, &zero_pr])]);
    let target = hstack(&[&(-e), &DMatrix::zeros(n, r)]);
    let acc1 = max_abs(&(&coupling * block - target));

    let ca_c = vstack(&[&(c * a), c]);
    let acc2 = max_abs(&(&uio.a_uio - a - &coupling * ca_c));

    let lhs = vstack(&[&uio.b_u, &uio.d_u]);
    let top = hstack(&[&(DMatrix::identity(n, n) - &uio.d_y * c), &(-&uio.b_y)]);
    let bottom = hstack(&[&DMatrix::zeros(n, n), &(-&uio.d_y)]);
    let rhs = vstack(&[&top, &bottom]) * vstack(&[b, d]);
    let acc3 = if m == 0 { 0.0 } else { max_abs(&(lhs - rhs)) };

    Ok(AcceptorReport { acc1, acc2, acc3, tol })
}

#[derive(Debug, Clone, PartialEq)]
pub struct UioReport {
    pub acceptor: AcceptorReport,
    pub spectrum: SpectrumReport,
    pub is_uio: bool,
    /// First failed check: an acceptor equation or `"schur"`.
    pub first_failure: Option<&'static str>,
}

/// An observer is a UIO iff it is an acceptor and `A_uio` is Schur.
pub fn verify_uio(model: &StateSpaceModel, uio: &UioRealization, tol: f64, margin: f64) -> Result<UioReport> {
    let acceptor = verify_acceptor(model, uio, tol)?;
    let spectrum = numkit::spectrum(&uio.a_uio, margin)?;
    let first_failure = acceptor
        .first_failure()
        .or(if spectrum.is_schur { None } else { Some("schur") });
    Ok(UioReport {
        is_uio: first_failure.is_none(),
        acceptor,
        spectrum,
        first_failure,
    })
}
