//! Worked example: a third-order plant with one known input, two outputs and
//! a scalar disturbance entering both the state and the output equations,
//! together with a reference annihilator and observer for it. The observer
//! matrices are rounded to four decimals.

use nalgebra::DMatrix;

use crate::plant::{StateSpaceModel, UioRealization};

pub fn example_model() -> StateSpaceModel {
    StateSpaceModel::new_unchecked(
        DMatrix::from_row_slice(3, 3, &[1.0, 1.0, -1.0, 2.0, 1.0, 1.0, 1.0, 0.0, -1.0]),
        DMatrix::from_row_slice(3, 1, &[-1.0, 1.0, 1.0]),
        DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 1.0, -1.0, 1.0]),
        DMatrix::from_row_slice(2, 1, &[2.0, 1.0]),
        DMatrix::from_row_slice(3, 1, &[1.0, 0.0, 1.0]),
        DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
    )
    .with_name("reference example")
}

/// Integer annihilator `[V_p V_f W_p W_f R_p R_f]` of the example's data image.
pub fn example_kernel() -> DMatrix<f64> {
    DMatrix::from_row_slice(
        5,
        12,
        &[
            4.0, 3.0, 2.0, -1.0, -2.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, //
            2.0, 1.0, 1.0, 0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, //
            6.0, 3.0, 2.0, -1.0, -3.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, //
            4.0, 4.0, 0.0, -1.0, -2.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, //
            4.0, 3.0, 2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, -1.0, 1.0,
        ],
    )
}

pub fn example_a_bar() -> DMatrix<f64> {
    DMatrix::from_row_slice(
        3,
        3,
        &[-3.2941, -2.9412, -1.2353, -0.8235, -0.2353, -0.0588, -0.9412, -0.4118, 0.6471],
    )
}

pub fn example_c_bar() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 3, &[-0.9378, 0.8800, -1.4951, 1.3943, 0.7607, 1.1882])
}

pub fn example_gain() -> DMatrix<f64> {
    DMatrix::from_row_slice(3, 2, &[1.1351, 2.8592, 0.0810, 0.4450, 0.3964, 0.5414])
}

pub fn example_omega() -> DMatrix<f64> {
    DMatrix::from_row_slice(
        3,
        5,
        &[
            0.0, 2.9767, -1.1628, 0.2558, -0.0930, //
            0.0, 0.2326, -0.3721, -0.0581, 0.4302, //
            1.0, 0.4651, -0.7442, -0.1163, -0.1395,
        ],
    )
}

/// Reference observer. Its state matrix has trace -0.5 and eigenvalues
/// `{0, 0, -0.5}`: the set `{0, 0, 0.5}` belongs to `A_bar + L C_bar = -A*`.
pub fn example_uio() -> UioRealization {
    UioRealization {
        a_uio: DMatrix::from_row_slice(
            3,
            3,
            &[0.3721, -0.2326, -0.4651, 0.2791, -0.1744, -0.3488, 0.5581, -0.3488, -0.6977],
        ),
        b_u: DMatrix::from_row_slice(3, 1, &[-2.9070, -0.1802, -0.3605]),
        b_y: DMatrix::from_row_slice(3, 2, &[1.0930, -0.1860, 0.3198, 0.1105, 0.6395, 0.2209]),
        d_u: DMatrix::from_row_slice(3, 1, &[0.0930, -0.4302, 0.1395]),
        d_y: DMatrix::from_row_slice(3, 2, &[-0.0930, 0.0930, 0.4302, -0.4302, -0.1395, 0.1395]),
    }
}

/// Pole set the reference observer was designed for.
pub fn example_poles() -> Vec<num_complex::Complex64> {
    [0.0, 0.0, 0.5].iter().map(|&re| num_complex::Complex64::new(re, 0.0)).collect()
}

/// The example plant with the disturbance moved into `ker C` and removed from
/// the output: `CE = 0` and `F = 0`, so `rank [[CE, F], [F, 0]] = 0 < r`.
pub fn counterexample_model() -> StateSpaceModel {
    let mut model = example_model().with_name("disturbance invisible at the output");
    model.e = DMatrix::from_row_slice(3, 1, &[1.0, -1.0, -2.0]);
    model.f = DMatrix::zeros(2, 1);
    model
}
