use rand::Rng;
use serde::{Deserialize, Serialize};

use super::uniform_matrix;
use crate::{Error, Matrix, Result};

/// `y = x·Wᵀ + b` with `W: out × in` and `b: 1 × out`.
///
/// Applied at every time step with shared parameters it is also the FC-Pool
/// layer: the stacked `K × H` block is flattened row-major and mapped to `H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineLayer {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl AffineLayer {
    pub fn new(weight: Matrix, bias: Matrix) -> Result<Self> {
        if bias.rows() != 1 || bias.cols() != weight.rows() {
            return Err(Error::ShapeMismatch {
                op: "AffineLayer::new",
                lhs: weight.shape(),
                rhs: bias.shape(),
            });
        }
        if !weight.is_finite() || !bias.is_finite() {
            return Err(Error::NonFinite("affine parameters".into()));
        }
        Ok(Self { weight, bias })
    }

    /// `uniform(−1/√in, 1/√in)` weights and biases.
    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let r = 1.0 / (input as f64).sqrt();
        Self {
            weight: uniform_matrix(output, input, r, rng),
            bias: uniform_matrix(1, output, r, rng),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Matrix::zeros(output, input),
            bias: Matrix::zeros(1, output),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_size(), self.output_size())
    }

    pub fn input_size(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_size(&self) -> usize {
        self.weight.rows()
    }

    /// Maps a `B × in` batch to `B × out`.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.input_size() {
            return Err(Error::ShapeMismatch {
                op: "affine_forward",
                lhs: x.shape(),
                rhs: self.weight.shape(),
            });
        }
        x.matmul_nt(&self.weight)?.add_row(&self.bias)
    }

    /// Accumulates parameter gradients into `grad` and returns `∂L/∂x`.
    pub fn backward(&self, x: &Matrix, dy: &Matrix, grad: &mut AffineLayer) -> Result<Matrix> {
        if dy.rows() != x.rows() || dy.cols() != self.output_size() {
            return Err(Error::ShapeMismatch {
                op: "affine_backward",
                lhs: x.shape(),
                rhs: dy.shape(),
            });
        }
        grad.weight.add_matmul_tn(dy, x)?;
        grad.bias.add_assign(&dy.sum_rows())?;
        dy.matmul(&self.weight)
    }

    pub fn params(&self) -> [&Matrix; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Matrix; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, &Matrix)> {
        vec![
            (format!("{prefix}.weight"), &self.weight),
            (format!("{prefix}.bias"), &self.bias),
        ]
    }
}

pub fn affine_forward(layer: &AffineLayer, x: &Matrix) -> Result<Matrix> {
    layer.forward(x)
}

/// FC-Pool on a single time step: flattens `stacked` (K × H) row-major and
/// applies `layer`, whose weight must be `H × (K·H)`.
pub fn fc_pool_forward(layer: &AffineLayer, stacked: &Matrix) -> Result<Matrix> {
    if layer.input_size() != stacked.len() {
        return Err(Error::ShapeMismatch {
            op: "fc_pool_forward",
            lhs: stacked.shape(),
            rhs: layer.weight.shape(),
        });
    }
    layer.forward(&stacked.flatten())
}
