//! Dense row-major matrices and the finite-difference gradient checker.

mod gradcheck;
mod matrix;

pub use gradcheck::{finite_difference_check, relative_error, GradCheckReport, RELATIVE_ERROR_FLOOR};
pub use matrix::{argmax, logistic, softmax, BinaryOp, Matrix, UnaryOp};
