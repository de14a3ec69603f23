//! Dense linear algebra, a reverse-mode tape for the calibration losses,
//! Adam, finite-difference gradient checking and seed derivation.

mod adam;
mod gradcheck;
mod matrix;
mod params;
pub mod rng;
mod sparse;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{compare_gradients, finite_diff_check, GradCheckReport};
pub use matrix::{dot, norm2, DenseMatrix};
pub use params::{evaluate, value_and_grad, value_and_grad_aux, ParamStore};
pub use sparse::SparseMatrix;
pub use tape::{sigmoid, softmax_in_place, softmax_rows, softplus, Tape, Var};

use rand::Rng;

/// Glorot-uniform initialisation.
pub fn glorot<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DenseMatrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-limit..limit))
}
