//! The plant `x+ = A x + B u + E d`, `y = C x + D u + F d` and the
//! observer realization `z+ = A_uio z + B_u u + B_y y`,
//! `x_hat = z + D_u u + D_y y`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, UioError};
use crate::numkit::{self, RankTolerance};

/// Signal dimensions: state `n`, known input `m`, output `p`, disturbance `r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub r: usize,
}

impl Dims {
    /// Length of a stacked two-step window `(x, x+, u, u+, y, y+)`.
    pub fn window_len(&self) -> usize {
        2 * (self.n + self.m + self.p)
    }

    /// Number of free parameters `(x, u, u+, d, d+)` of a two-step window.
    pub fn window_params(&self) -> usize {
        self.n + 2 * self.m + 2 * self.r
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DimensionMismatch(String),
    DisturbanceRankDeficient { rank: usize, r: usize },
    NonFinite(&'static str),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DimensionMismatch(what) => write!(f, "dimension mismatch: {what}"),
            Violation::DisturbanceRankDeficient { rank, r } => {
                write!(f, "disturbance map rank-deficient: rank [E;F] = {rank} < r = {r}")
            }
            Violation::NonFinite(which) => write!(f, "non-finite entry in {which}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub name: Option<String>,
}

impl StateSpaceModel {
    /// Builds a model and rejects it unless dimensions agree and `[E;F]` has
    /// full column rank.
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        e: DMatrix<f64>,
        f: DMatrix<f64>,
    ) -> Result<Self> {
        let model = Self::new_unchecked(a, b, c, d, e, f);
        let violations = model.validate(RankTolerance::default());
        if violations.is_empty() {
            Ok(model)
        } else {
            Err(UioError::InvalidModel(violations.iter().map(ToString::to_string).collect()))
        }
    }

    /// Builds a model without any checks; pair with [`validate`](Self::validate)
    /// or [`reduce_disturbance`](Self::reduce_disturbance).
    pub fn new_unchecked(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        e: DMatrix<f64>,
        f: DMatrix<f64>,
    ) -> Self {
        Self { a, b, c, d, e, f, name: None }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    pub fn r(&self) -> usize {
        self.e.ncols()
    }

    pub fn dims(&self) -> Dims {
        Dims {
            n: self.n(),
            m: self.m(),
            p: self.p(),
            r: self.r(),
        }
    }

    /// The stacked disturbance map `[E; F]`.
    pub fn disturbance_map(&self) -> DMatrix<f64> {
        let (n, p, r) = (self.n(), self.p(), self.r());
        let mut ef = DMatrix::zeros(n + p, r);
        ef.rows_mut(0, n).copy_from(&self.e);
        ef.rows_mut(n, p).copy_from(&self.f);
        ef
    }

    /// All invariant violations; empty when the model is usable.
    pub fn validate(&self, tol: RankTolerance) -> Vec<Violation> {
        let mut out = Vec::new();
        let Dims { n, m, p, r } = self.dims();
        let mut expect = |name: &str, mat: &DMatrix<f64>, rows: usize, cols: usize| {
            if mat.shape() != (rows, cols) {
                out.push(Violation::DimensionMismatch(format!(
                    "{name} is {}x{}, expected {rows}x{cols}",
                    mat.nrows(),
                    mat.ncols()
                )));
            }
        };
        expect("A", &self.a, n, n);
        expect("B", &self.b, n, m);
        expect("C", &self.c, p, n);
        expect("D", &self.d, p, m);
        expect("E", &self.e, n, r);
        expect("F", &self.f, p, r);
        for (name, mat) in self.matrices() {
            if mat.iter().any(|v| !v.is_finite()) {
                out.push(Violation::NonFinite(name));
            }
        }
        if out.is_empty() {
            let rank = numkit::rank(&self.disturbance_map(), tol);
            if rank < r {
                out.push(Violation::DisturbanceRankDeficient { rank, r });
            }
        }
        out
    }

    fn matrices(&self) -> [(&'static str, &DMatrix<f64>); 6] {
        [
            ("A", &self.a),
            ("B", &self.b),
            ("C", &self.c),
            ("D", &self.d),
            ("E", &self.e),
            ("F", &self.f),
        ]
    }

    /// Redefines the disturbance so that `[E;F]` has full column rank: the
    /// new map is an orthonormal basis of the old column space. Models that
    /// already satisfy the rank condition are returned unchanged.
    pub fn reduce_disturbance(&self) -> Self {
        let tol = RankTolerance::default();
        let ef = self.disturbance_map();
        if numkit::rank(&ef, tol) == self.r() {
            return self.clone();
        }
        let basis = numkit::range_basis(&ef, tol);
        let n = self.n();
        let mut out = self.clone();
        out.e = basis.rows(0, n).into_owned();
        out.f = basis.rows(n, self.p()).into_owned();
        out
    }

    /// Minimal left annihilator `[M_E M_F]` of `[E;F]` with orthonormal rows.
    pub fn mla_ef(&self) -> DMatrix<f64> {
        numkit::left_null_basis(&self.disturbance_map(), RankTolerance::default())
    }

    /// One step of the plant: returns `(x+, y)`.
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>, d: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let Dims { n, m, r, .. } = self.dims();
        if x.len() != n || u.len() != m || d.len() != r {
            return Err(UioError::DimensionMismatch(format!(
                "step expects x:{n}, u:{m}, d:{r}; got x:{}, u:{}, d:{}",
                x.len(),
                u.len(),
                d.len()
            )));
        }
        let x_next = &self.a * x + &self.b * u + &self.e * d;
        let y = &self.c * x + &self.d * u + &self.f * d;
        Ok((x_next, y))
    }

    /// Generator `Gamma` of every model-consistent two-step window.
    ///
    /// Columns are indexed by `(x, u, u+, d, d+)`, rows are stacked as
    /// `(x, x+, u, u+, y, y+)`, the same order as the data matrix `Phi`.
    pub fn consistency_matrix(&self) -> DMatrix<f64> {
        let Dims { n, m, p, r } = self.dims();
        let rows = 2 * (n + m + p);
        let cols = n + 2 * m + 2 * r;
        let mut g = DMatrix::zeros(rows, cols);
        // column offsets
        let (cx, cu, cu1, cd, cd1) = (0, n, n + m, n + 2 * m, n + 2 * m + r);
        // row offsets
        let (rx, rx1, ru, ru1, ry, ry1) = (0, n, 2 * n, 2 * n + m, 2 * n + 2 * m, 2 * n + 2 * m + p);

        g.view_mut((rx, cx), (n, n)).fill_with_identity();

        g.view_mut((rx1, cx), (n, n)).copy_from(&self.a);
        g.view_mut((rx1, cu), (n, m)).copy_from(&self.b);
        g.view_mut((rx1, cd), (n, r)).copy_from(&self.e);

        g.view_mut((ru, cu), (m, m)).fill_with_identity();
        g.view_mut((ru1, cu1), (m, m)).fill_with_identity();

        g.view_mut((ry, cx), (p, n)).copy_from(&self.c);
        g.view_mut((ry, cu), (p, m)).copy_from(&self.d);
        g.view_mut((ry, cd), (p, r)).copy_from(&self.f);

        g.view_mut((ry1, cx), (p, n)).copy_from(&(&self.c * &self.a));
        g.view_mut((ry1, cu), (p, m)).copy_from(&(&self.c * &self.b));
        g.view_mut((ry1, cu1), (p, m)).copy_from(&self.d);
        g.view_mut((ry1, cd), (p, r)).copy_from(&(&self.c * &self.e));
        g.view_mut((ry1, cd1), (p, r)).copy_from(&self.f);
        g
    }
}

/// Observer matrices `(A_uio, B_u, B_y, D_u, D_y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct UioRealization {
    pub a_uio: DMatrix<f64>,
    pub b_u: DMatrix<f64>,
    pub b_y: DMatrix<f64>,
    pub d_u: DMatrix<f64>,
    pub d_y: DMatrix<f64>,
}

impl UioRealization {
    /// Checks that the realization fits a plant with the given dimensions.
    pub fn check_dims(&self, dims: Dims) -> Result<()> {
        let Dims { n, m, p, .. } = dims;
        let shapes = [
            ("A_uio", self.a_uio.shape(), (n, n)),
            ("B_u", self.b_u.shape(), (n, m)),
            ("B_y", self.b_y.shape(), (n, p)),
            ("D_u", self.d_u.shape(), (n, m)),
            ("D_y", self.d_y.shape(), (n, p)),
        ];
        for (name, got, want) in shapes {
            if got != want {
                return Err(UioError::DimensionMismatch(format!(
                    "{name} is {}x{}, plant needs {}x{}",
                    got.0, got.1, want.0, want.1
                )));
            }
        }
        Ok(())
    }

    /// One observer step: returns `(z+, x_hat)`.
    pub fn step(&self, z: &DVector<f64>, u: &DVector<f64>, y: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let z_next = &self.a_uio * z + &self.b_u * u + &self.b_y * y;
        let x_hat = z + &self.d_u * u + &self.d_y * y;
        (z_next, x_hat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn col(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn example_model_is_valid() {
        let model = reference::example_model();
        assert!(model.validate(RankTolerance::default()).is_empty());
        assert_eq!(model.dims(), Dims { n: 3, m: 1, p: 2, r: 1 });
    }

    #[test]
    fn zero_disturbance_map_is_flagged() {
        let mut model = reference::example_model();
        model.e = DMatrix::zeros(3, 1);
        model.f = DMatrix::zeros(2, 1);
        let v = model.validate(RankTolerance::default());
        assert_eq!(v, vec![Violation::DisturbanceRankDeficient { rank: 0, r: 1 }]);
        assert!(v[0].to_string().contains("disturbance map rank-deficient"));
        assert!(StateSpaceModel::new(model.a, model.b, model.c, model.d, model.e, model.f).is_err());
    }

    #[test]
    fn wrong_b_rows_is_flagged() {
        let mut model = reference::example_model();
        model.b = DMatrix::zeros(2, 1);
        let v = model.validate(RankTolerance::default());
        assert_eq!(v.len(), 1);
        assert!(v[0].to_string().starts_with("dimension mismatch"));
    }

    #[test]
    fn reduce_disturbance_cases() {
        let model = reference::example_model();
        assert_eq!(model.reduce_disturbance(), model);

        let dup = StateSpaceModel::new_unchecked(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 0),
            DMatrix::zeros(1, 2),
            DMatrix::zeros(1, 0),
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]),
            DMatrix::zeros(1, 2),
        );
        let red = dup.reduce_disturbance();
        assert_eq!(red.r(), 1);
        let ef = red.disturbance_map();
        assert!((ef[(0, 0)].abs() - 1.0).abs() < 1e-15);
        assert!(ef[(1, 0)].abs() < 1e-15 && ef[(2, 0)].abs() < 1e-15);
        assert_eq!(red.reduce_disturbance(), red);

        let none = StateSpaceModel::new_unchecked(
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 0),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 0),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
        );
        let red = none.reduce_disturbance();
        assert_eq!(red.r(), 0);
        assert!(red.validate(RankTolerance::default()).is_empty());
    }

    #[test]
    fn mla_cases() {
        let model = reference::example_model();
        let mla = model.mla_ef();
        assert_eq!(mla.shape(), (4, 5));
        assert!((&mla * model.disturbance_map()).amax() < 1e-14);

        let no_dist = StateSpaceModel::new_unchecked(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 0),
            DMatrix::zeros(1, 2),
            DMatrix::zeros(1, 0),
            DMatrix::zeros(2, 0),
            DMatrix::zeros(1, 0),
        );
        assert_eq!(no_dist.mla_ef(), DMatrix::identity(3, 3));

        let e1 = StateSpaceModel::new_unchecked(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 0),
            DMatrix::zeros(1, 2),
            DMatrix::zeros(1, 0),
            DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
            DMatrix::zeros(1, 1),
        );
        let mla = e1.mla_ef();
        assert_eq!(mla.nrows(), 2);
        assert!(mla.column(0).amax() < 1e-15);
    }

    #[test]
    fn step_cases() {
        let model = reference::example_model();
        let (x1, y) = model.step(&col(&[0.0; 3]), &col(&[0.0]), &col(&[0.0])).unwrap();
        assert_eq!(x1, col(&[0.0; 3]));
        assert_eq!(y, col(&[0.0; 2]));

        let (x1, y) = model.step(&col(&[1.0, 0.0, 0.0]), &col(&[0.0]), &col(&[0.0])).unwrap();
        assert_eq!(x1, col(&[1.0, 2.0, 1.0]));
        assert_eq!(y, col(&[1.0, 1.0]));

        let (x1, y) = model.step(&col(&[0.0; 3]), &col(&[0.0]), &col(&[1.0])).unwrap();
        assert_eq!(x1, col(&[1.0, 0.0, 1.0]));
        assert_eq!(y, col(&[1.0, 1.0]));

        assert!(model.step(&col(&[0.0; 2]), &col(&[0.0]), &col(&[0.0])).is_err());
    }

    #[test]
    fn consistency_matrix_of_zero_model() {
        let z = || DMatrix::zeros(1, 1);
        let model = StateSpaceModel::new_unchecked(z(), z(), z(), z(), z(), z());
        let g = model.consistency_matrix();
        assert_eq!(g.shape(), (6, 5));
        assert_eq!(g.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(g.row(1).amax() == 0.0);
        assert!(g.row(4).amax() == 0.0 && g.row(5).amax() == 0.0);
    }

    #[test]
    fn consistency_matrix_of_example_has_full_column_rank() {
        let g = reference::example_model().consistency_matrix();
        assert_eq!(g.shape(), (12, 7));
        assert_eq!(numkit::rank(&g, RankTolerance::default()), 7);
    }

    fn window(model: &StateSpaceModel, x: &DVector<f64>, u: &DVector<f64>, u1: &DVector<f64>, d: &DVector<f64>, d1: &DVector<f64>) -> DVector<f64> {
        let (x1, y) = model.step(x, u, d).unwrap();
        let (_, y1) = model.step(&x1, u1, d1).unwrap();
        let parts = [x.clone(), x1, u.clone(), u1.clone(), y, y1];
        DVector::from_iterator(parts.iter().map(|v| v.len()).sum(), parts.iter().flat_map(|v| v.iter().copied()))
    }

    #[test]
    fn stepped_windows_lie_in_consistency_image() {
        let model = reference::example_model();
        let g = model.consistency_matrix();
        let q = numkit::range_basis(&g, RankTolerance::default());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut draw = |k: usize| DVector::from_fn(k, |_, _| rng.gen_range(-5.0..5.0));
        for _ in 0..100 {
            let (x, u, u1, d, d1) = (draw(3), draw(1), draw(1), draw(1), draw(1));
            let w = window(&model, &x, &u, &u1, &d, &d1);
            let resid = &w - &q * (q.transpose() * &w);
            assert!(resid.amax() < 1e-9 * (1.0 + w.amax()), "residual {}", resid.amax());
        }
    }

    prop_compose! {
        fn small_model()(n in 1usize..4, m in 0usize..3, p in 1usize..4, r in 0usize..3, seed in any::<u64>()) -> StateSpaceModel {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut rand = |rows: usize, cols: usize| DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-2.0..2.0));
            StateSpaceModel::new_unchecked(rand(n, n), rand(n, m), rand(p, n), rand(p, m), rand(n, r), rand(p, r))
        }
    }

    proptest! {
        #[test]
        fn mla_annihilates_and_reduction_is_idempotent(model in small_model()) {
            let reduced = model.reduce_disturbance();
            prop_assert_eq!(reduced.reduce_disturbance(), reduced.clone());
            let mla = reduced.mla_ef();
            prop_assert!((&mla * reduced.disturbance_map()).amax() < 1e-10);
            prop_assert_eq!(mla.nrows(), reduced.n() + reduced.p() - reduced.r());
        }

        #[test]
        fn gamma_rank_counts_free_parameters(model in small_model()) {
            let model = model.reduce_disturbance();
            let Dims { n, m, r, .. } = model.dims();
            let f_rank = numkit::rank(&model.f, RankTolerance::default());
            let g = model.consistency_matrix();
            // d+ only reaches the window through F.
            prop_assert_eq!(numkit::rank(&g, RankTolerance::default()), n + 2 * m + r + f_rank);
        }
    }
}
