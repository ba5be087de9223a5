//! Dense real-matrix kernels shared by every design and verification stage.
//!
//! All rank decisions go through [`RankTolerance`], so a single policy governs
//! what "full rank" means across the crate. Orthonormal bases come from a
//! singular-value factorization and are not canonicalized: compare subspaces
//! with [`max_principal_angle`], never basis entries.

use nalgebra::{DMatrix, DVector, Schur};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UioError};

/// Eigenvalues with modulus at or above `1 - margin` are treated as unstable.
pub const DEFAULT_SCHUR_MARGIN: f64 = 1e-9;

/// Iteration cap for the Riccati recursion behind [`stabilizing_gain`].
pub const MAX_RICCATI_ITERATIONS: usize = 10_000;

/// Relative-change stopping threshold for the Riccati recursion.
pub const RICCATI_RELATIVE_CHANGE: f64 = 1e-10;

/// Allowed distance between requested and achieved poles in [`place_poles`].
pub const PLACEMENT_TOLERANCE: f64 = 1e-6;

const PLACEMENT_ATTEMPTS: usize = 64;

/// Singular-value threshold policy for numerical rank.
///
/// The effective threshold for an `r x c` matrix with largest singular value
/// `s` is `max(max(r, c) * relative * s, absolute)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankTolerance {
    pub relative: f64,
    pub absolute: f64,
}

impl Default for RankTolerance {
    fn default() -> Self {
        Self {
            relative: f64::EPSILON,
            absolute: 0.0,
        }
    }
}

impl RankTolerance {
    pub fn new(relative: f64, absolute: f64) -> Result<Self> {
        if !(relative > 0.0 && relative.is_finite()) || !(absolute >= 0.0 && absolute.is_finite()) {
            return Err(UioError::Precondition(format!(
                "rank tolerance needs relative > 0 and absolute >= 0, got ({relative}, {absolute})"
            )));
        }
        Ok(Self { relative, absolute })
    }

    /// Policy for rank tests evaluated at a *computed* eigenvalue or pencil
    /// root. The evaluation point carries its own rounding error (up to
    /// `sqrt(eps)` for a double root), so a pure machine-epsilon threshold
    /// would miss genuine rank drops.
    pub fn at_computed_point() -> Self {
        Self {
            relative: 1e-8,
            absolute: 0.0,
        }
    }

    pub fn threshold(&self, rows: usize, cols: usize, sigma_max: f64) -> f64 {
        (rows.max(cols) as f64 * self.relative * sigma_max).max(self.absolute)
    }
}

/// Eigenvalues, spectral radius and Schur verdict of a square matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub eigenvalues: Vec<Complex64>,
    pub spectral_radius: f64,
    pub is_schur: bool,
}

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

pub fn rank(m: &DMatrix<f64>, tol: RankTolerance) -> usize {
    let s = singular_values(m);
    let Some(&smax) = s.first() else { return 0 };
    let thr = tol.threshold(m.nrows(), m.ncols(), smax);
    s.iter().filter(|&&v| v > thr).count()
}

/// Rank of a complex matrix under the same policy as [`rank`].
pub fn complex_rank(m: &DMatrix<Complex64>, tol: RankTolerance) -> usize {
    if m.is_empty() {
        return 0;
    }
    let s = m.clone().svd(false, false).singular_values;
    let smax = s.iter().copied().fold(0.0_f64, f64::max);
    let thr = tol.threshold(m.nrows(), m.ncols(), smax);
    s.iter().filter(|&&v| v > thr).count()
}

/// Full right-singular factor: returns all `cols` singular values (padded
/// with zeros when the matrix is wide) and the matching `cols x cols` basis,
/// both in descending singular-value order.
fn full_right_svd(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let (r, c) = m.shape();
    if c == 0 {
        return (Vec::new(), DMatrix::zeros(0, 0));
    }
    if r == 0 {
        return (vec![0.0; c], DMatrix::identity(c, c));
    }
    let padded = if r < c {
        let mut p = DMatrix::zeros(c, c);
        p.rows_mut(0, r).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let sv = svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let sigma = order.iter().map(|&i| sv[i]).collect();
    let mut v = DMatrix::zeros(c, c);
    for (dst, &src) in order.iter().enumerate() {
        v.set_column(dst, &v_t.row(src).transpose());
    }
    (sigma, v)
}

/// Orthonormal basis of `ker(m)`, one basis vector per column.
pub fn right_null_basis(m: &DMatrix<f64>, tol: RankTolerance) -> DMatrix<f64> {
    let (r, c) = m.shape();
    let (sigma, v) = full_right_svd(m);
    let smax = sigma.first().copied().unwrap_or(0.0);
    let thr = tol.threshold(r, c, smax);
    let keep: Vec<usize> = (0..c).filter(|&i| sigma[i] <= thr || sigma[i].is_nan()).collect();
    DMatrix::from_fn(c, keep.len(), |i, j| v[(i, keep[j])])
}

/// Orthonormal basis of the left null space, one basis vector per row.
pub fn left_null_basis(m: &DMatrix<f64>, tol: RankTolerance) -> DMatrix<f64> {
    right_null_basis(&m.transpose(), tol).transpose()
}

/// Orthonormal basis of `Im(m)`, one basis vector per column.
pub fn range_basis(m: &DMatrix<f64>, tol: RankTolerance) -> DMatrix<f64> {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return DMatrix::zeros(r, 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let sv = &svd.singular_values;
    let smax = sv.iter().copied().fold(0.0_f64, f64::max);
    let thr = tol.threshold(r, c, smax);
    let keep: Vec<usize> = (0..sv.len()).filter(|&i| sv[i] > thr).collect();
    DMatrix::from_fn(r, keep.len(), |i, j| u[(i, keep[j])])
}

/// Largest principal angle between `Im(a)` and `Im(b)` (radians), computed
/// from sines so that tiny angles are resolved. Subspaces of different
/// dimension are reported as orthogonal (`pi / 2`).
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: RankTolerance) -> f64 {
    assert_eq!(a.nrows(), b.nrows(), "subspaces must live in the same space");
    let qa = range_basis(a, tol);
    let qb = range_basis(b, tol);
    if qa.ncols() != qb.ncols() {
        return std::f64::consts::FRAC_PI_2;
    }
    if qa.ncols() == 0 {
        return 0.0;
    }
    let residual = &qb - &qa * (qa.transpose() * &qb);
    let s = singular_values(&residual);
    s.first().copied().unwrap_or(0.0).min(1.0).asin()
}

/// Moore-Penrose left inverse of a full-column-rank matrix.
pub fn left_inverse(m: &DMatrix<f64>, tol: RankTolerance) -> Result<DMatrix<f64>> {
    let (r, c) = m.shape();
    let rk = rank(m, tol);
    if rk < c {
        return Err(UioError::ColumnRankDeficient { rank: rk, cols: c });
    }
    if c == 0 {
        return Ok(DMatrix::zeros(0, r));
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V");
    let inv_s = DMatrix::from_diagonal(&svd.singular_values.map(|s| 1.0 / s));
    Ok(v_t.transpose() * inv_s * u.transpose())
}

/// Eigenvalues of a square real matrix.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    if m.nrows() != m.ncols() {
        return Err(UioError::DimensionMismatch(format!(
            "eigenvalues need a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(UioError::NumericalFailure("non-finite matrix entry".into()));
    }
    let schur = Schur::try_new(m.clone(), f64::EPSILON, 100_000)
        .ok_or_else(|| UioError::NumericalFailure("Schur iteration did not converge".into()))?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| Complex64::new(z.re, z.im))
        .collect())
}

pub fn spectrum(m: &DMatrix<f64>, margin: f64) -> Result<SpectrumReport> {
    let eigenvalues = eigenvalues(m)?;
    let spectral_radius = eigenvalues.iter().map(|z| z.norm()).fold(0.0_f64, f64::max);
    Ok(SpectrumReport {
        is_schur: spectral_radius < 1.0 - margin,
        eigenvalues,
        spectral_radius,
    })
}

/// Distance between two eigenvalue multisets: the smallest achievable
/// maximum pairing error. Exact matching for up to eight values, greedy
/// nearest-neighbour beyond that. Returns infinity on a length mismatch.
pub fn multiset_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    if a.is_empty() {
        return 0.0;
    }
    if a.len() <= 8 {
        let mut perm: Vec<usize> = (0..b.len()).collect();
        let mut best = f64::INFINITY;
        permute(&mut perm, 0, &mut |p| {
            let d = a
                .iter()
                .zip(p)
                .map(|(x, &j)| (x - b[j]).norm())
                .fold(0.0_f64, f64::max);
            best = best.min(d);
        });
        best
    } else {
        let mut used = vec![false; b.len()];
        let mut worst = 0.0_f64;
        for x in a {
            let (j, d) = b
                .iter()
                .enumerate()
                .filter(|(j, _)| !used[*j])
                .map(|(j, y)| (j, (x - y).norm()))
                .min_by(|l, r| l.1.total_cmp(&r.1))
                .expect("same length");
            used[j] = true;
            worst = worst.max(d);
        }
        worst
    }
}

fn permute(v: &mut [usize], k: usize, f: &mut impl FnMut(&[usize])) {
    if k == v.len() {
        f(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v, k + 1, f);
        v.swap(k, i);
    }
}

fn check_pair(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<()> {
    if a.nrows() != a.ncols() || c.ncols() != a.nrows() {
        return Err(UioError::DimensionMismatch(format!(
            "pair needs A n x n and C q x n, got A {}x{} and C {}x{}",
            a.nrows(),
            a.ncols(),
            c.nrows(),
            c.ncols()
        )));
    }
    Ok(())
}

/// Eigenvalues of `a` with modulus `>= 1 - margin` that fail the PBH rank
/// test `rank [lambda I - a; c] = n`.
pub fn undetectable_modes(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    tol: RankTolerance,
    margin: f64,
) -> Result<Vec<Complex64>> {
    check_pair(a, c)?;
    let n = a.nrows();
    let q = c.nrows();
    let mut bad = Vec::new();
    for lambda in eigenvalues(a)? {
        if lambda.norm() < 1.0 - margin {
            continue;
        }
        let pencil = DMatrix::from_fn(n + q, n, |i, j| {
            if i < n {
                let diag = if i == j { lambda } else { Complex64::new(0.0, 0.0) };
                diag - Complex64::new(a[(i, j)], 0.0)
            } else {
                Complex64::new(c[(i - n, j)], 0.0)
            }
        });
        if complex_rank(&pencil, tol) < n {
            bad.push(lambda);
        }
    }
    Ok(bad)
}

pub fn pbh_detectable(a: &DMatrix<f64>, c: &DMatrix<f64>, tol: RankTolerance, margin: f64) -> Result<bool> {
    Ok(undetectable_modes(a, c, tol, margin)?.is_empty())
}

/// Gain `L` making `a + L c` Schur, from the stabilizing solution of the
/// dual (estimation) Riccati equation with unit state and measurement
/// weights.
///
/// The Riccati difference recursion is advanced by repeated doubling: each
/// sweep maps the iterate at step `k` to the iterate at step `2k`, so the
/// relative-change test is reached in a few dozen sweeps even when the
/// closed loop is slow.
pub fn stabilizing_gain(a: &DMatrix<f64>, c: &DMatrix<f64>, margin: f64) -> Result<DMatrix<f64>> {
    check_pair(a, c)?;
    let n = a.nrows();
    let q = c.nrows();
    if !pbh_detectable(a, c, RankTolerance::at_computed_point(), margin)? {
        return Err(UioError::NotDetectable);
    }
    if q == 0 || n == 0 {
        return Ok(DMatrix::zeros(n, q));
    }
    let id = DMatrix::<f64>::identity(n, n);
    // Control-form data of the dual problem: state matrix a^T, input c^T.
    let mut ak = a.transpose();
    let mut gk = c.transpose() * c;
    let mut hk = id.clone();
    let mut converged = false;
    for _ in 0..MAX_RICCATI_ITERATIONS {
        let w = &id + &gk * &hk;
        let w_inv = w
            .try_inverse()
            .ok_or_else(|| UioError::NumericalFailure("singular doubling step".into()))?;
        let aw = &ak * &w_inv;
        let a_next = &aw * &ak;
        let g_next = &gk + &aw * &gk * ak.transpose();
        let h_next = &hk + ak.transpose() * &hk * &w_inv * &ak;
        let h_next = (&h_next + h_next.transpose()) * 0.5;
        let g_next = (&g_next + g_next.transpose()) * 0.5;
        if h_next.iter().any(|v| !v.is_finite()) {
            return Err(UioError::NumericalFailure("Riccati iterate diverged".into()));
        }
        let change = (&h_next - &hk).norm() / h_next.norm().max(1.0);
        ak = a_next;
        gk = g_next;
        hk = h_next;
        if change < RICCATI_RELATIVE_CHANGE {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(UioError::NumericalFailure(format!(
            "Riccati recursion did not settle within {MAX_RICCATI_ITERATIONS} sweeps"
        )));
    }
    let p = hk;
    let s = DMatrix::<f64>::identity(q, q) + c * &p * c.transpose();
    let s_inv = s
        .try_inverse()
        .ok_or_else(|| UioError::NumericalFailure("singular innovation covariance".into()))?;
    let l = -(a * &p * c.transpose() * s_inv);
    let closed = a + &l * c;
    let report = spectrum(&closed, margin)?;
    if !report.is_schur {
        return Err(UioError::NumericalFailure(format!(
            "Riccati gain leaves spectral radius {}",
            report.spectral_radius
        )));
    }
    Ok(l)
}

/// Observability matrix `[c; c a; ...; c a^(n-1)]`.
pub fn observability_matrix(a: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let q = c.nrows();
    let mut obs = DMatrix::zeros(n * q, n);
    let mut block = c.clone();
    for k in 0..n {
        obs.rows_mut(k * q, q).copy_from(&block);
        block = &block * a;
    }
    obs
}

/// Real coefficients of `prod (s - p_i)`, highest degree first (monic).
fn char_poly(poles: &[Complex64]) -> Vec<f64> {
    let mut coeffs = vec![Complex64::new(1.0, 0.0)];
    for &p in poles {
        let mut next = vec![Complex64::new(0.0, 0.0); coeffs.len() + 1];
        for (i, &c) in coeffs.iter().enumerate() {
            next[i] += c;
            next[i + 1] -= c * p;
        }
        coeffs = next;
    }
    coeffs.iter().map(|c| c.re).collect()
}

fn is_self_conjugate(poles: &[Complex64]) -> bool {
    let scale = poles.iter().map(|p| p.norm()).fold(1.0_f64, f64::max);
    let conj: Vec<Complex64> = poles.iter().map(|p| p.conj()).collect();
    multiset_distance(poles, &conj) <= 1e-9 * scale
}

/// Single-output observer gain by Ackermann's formula in observer form:
/// `l = -phi(a) O^{-1} e_n`.
fn place_single_output(a: &DMatrix<f64>, c: &DMatrix<f64>, coeffs: &[f64]) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let obs = observability_matrix(a, c);
    let mut e_n = DVector::zeros(n);
    e_n[n - 1] = 1.0;
    let v = obs.lu().solve(&e_n)?;
    let mut phi = DMatrix::zeros(n, n);
    for &k in coeffs {
        phi = &phi * a + DMatrix::identity(n, n) * k;
    }
    let l = -(phi * v);
    Some(DMatrix::from_column_slice(n, 1, l.as_slice()))
}

/// Gain `L` assigning the spectrum of `a + L c` to `poles`.
///
/// Single-output pairs use Ackermann's formula. Multi-output pairs are
/// reduced to a single output `w^T c` after an optional random output
/// injection that makes the state matrix cyclic; both draws come from
/// `seed`. Every candidate is verified against the requested multiset.
pub fn place_poles(a: &DMatrix<f64>, c: &DMatrix<f64>, poles: &[Complex64], seed: u64) -> Result<DMatrix<f64>> {
    check_pair(a, c)?;
    let n = a.nrows();
    let q = c.nrows();
    if poles.len() != n {
        return Err(UioError::Precondition(format!("{} poles requested for a state of dimension {n}", poles.len())));
    }
    if !is_self_conjugate(poles) {
        return Err(UioError::Precondition("requested poles are not closed under conjugation".into()));
    }
    if n == 0 {
        return Ok(DMatrix::zeros(0, q));
    }
    let obs_rank = if q == 0 { 0 } else { rank(&observability_matrix(a, c), RankTolerance::default()) };
    if obs_rank < n {
        return Err(UioError::NotObservable { rank: obs_rank, n });
    }
    let coeffs = char_poly(poles);
    let verify = |l: &DMatrix<f64>| -> Result<f64> {
        let eig = eigenvalues(&(a + l * c))?;
        Ok(multiset_distance(&eig, poles))
    };

    if q == 1 {
        let l = place_single_output(a, c, &coeffs)
            .ok_or_else(|| UioError::PlacementFailed("singular observability matrix".into()))?;
        let err = verify(&l)?;
        if err <= PLACEMENT_TOLERANCE {
            return Ok(l);
        }
        return Err(UioError::PlacementFailed(format!("achieved spectrum off by {err:.3e}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = a.norm().max(1.0) / c.norm().max(f64::MIN_POSITIVE);
    let mut best_err = f64::INFINITY;
    for attempt in 0..PLACEMENT_ATTEMPTS {
        let injection = if attempt == 0 {
            DMatrix::zeros(n, q)
        } else {
            DMatrix::from_fn(n, q, |_, _| rng.gen_range(-1.0..1.0) * scale)
        };
        let w: DVector<f64> = DVector::from_fn(q, |_, _| rng.gen_range(-1.0..1.0));
        let w = &w / w.norm();
        let a1 = a + &injection * c;
        let c1 = DMatrix::from_fn(1, n, |_, j| w.dot(&c.column(j)));
        let Some(l1) = place_single_output(&a1, &c1, &coeffs) else { continue };
        let l = injection + l1 * w.transpose();
        let err = verify(&l)?;
        if err <= PLACEMENT_TOLERANCE {
            return Ok(l);
        }
        best_err = best_err.min(err);
    }
    Err(UioError::PlacementFailed(format!(
        "no verified placement after {PLACEMENT_ATTEMPTS} attempts (best error {best_err:.3e})"
    )))
}
