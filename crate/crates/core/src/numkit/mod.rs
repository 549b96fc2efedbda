//! Dense linear algebra and seeded sampling.
//!
//! Everything here is `f64` and deterministic: the same inputs (including the
//! [`RngState`]) always produce bit-identical outputs.

mod gradcheck;
mod linalg;
mod matrix;
mod rng;

pub use gradcheck::{central_difference, relative_error};
pub use linalg::{
    cholesky, cosine_rows, gaussian_matrix, qr_row_orthogonalize, solve_spd, RANK_TOLERANCE,
};
pub(crate) use linalg::{cholesky_solve, row_norms};
pub use matrix::{dot, norm, Matrix};
pub use rng::{RngAlgorithm, RngState};
