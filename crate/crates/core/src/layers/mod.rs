//! Parametric building blocks with paired forward/backward passes.
//!
//! Every layer doubles as its own gradient container: `zeros_like` gives a
//! same-shaped accumulator, and `params`/`params_mut` enumerate matrices in a
//! fixed order so optimizers can zip parameters with gradients.

mod affine;
mod lstm;
mod mmw1;

pub use affine::{affine_forward, fc_pool_forward, AffineLayer};
pub use lstm::{bptt_backward, lstm_step, LstmCell, LstmState, LstmStepCache, LstmTrace};
pub use mmw1::{decode_mmw1, encode_mmw1, read_mmw1, write_mmw1, NamedTensor, MMW1_MAGIC};

use rand::Rng;

use crate::Matrix;

/// `uniform(-r, r)` entries.
pub(crate) fn uniform_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, r: f64, rng: &mut R) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| if r > 0.0 { rng.random_range(-r..r) } else { 0.0 })
        .collect();
    Matrix::from_vec(rows, cols, data).expect("length matches by construction")
}
