use rand::Rng;
use serde::{Deserialize, Serialize};

use super::uniform_matrix;
use crate::numerics::logistic;
use crate::{Error, Matrix, Result};

/// LSTM cell without peepholes.
///
/// Gate pre-activations are `[x, h]·Wᵀ + b` with `W: 4H × (in + H)`; the
/// four row blocks of `W` (and column blocks of `b`) are, in order, the
/// input, forget, output and candidate transforms.
///
/// ```text
/// i, f, o = logistic(·)   c̃ = tanh(·)
/// c' = f ⊙ c + i ⊙ c̃      h' = o ⊙ tanh(c')
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmCell {
    pub weight: Matrix,
    pub bias: Matrix,
    input_size: usize,
    hidden_size: usize,
}

/// Recurrent state for a batch: both matrices are `B × H`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub hidden: Matrix,
    pub cell: Matrix,
}

/// Everything the backward pass needs from one forward step.
#[derive(Debug, Clone)]
pub struct LstmStepCache {
    /// `[x, h_prev]`, `B × (in + H)`.
    concat: Matrix,
    /// Post-activation gates `[i | f | o | c̃]`, `B × 4H`.
    gates: Matrix,
    cell_prev: Matrix,
    tanh_cell: Matrix,
}

/// Forward record of an unrolled sequence.
#[derive(Debug, Clone)]
pub struct LstmTrace {
    pub outputs: Vec<Matrix>,
    pub final_state: LstmState,
    caches: Vec<LstmStepCache>,
}

impl LstmTrace {
    pub fn steps(&self) -> usize {
        self.caches.len()
    }
}

impl LstmState {
    pub fn zeros(batch: usize, hidden: usize) -> Self {
        Self {
            hidden: Matrix::zeros(batch, hidden),
            cell: Matrix::zeros(batch, hidden),
        }
    }
}

impl LstmCell {
    pub fn new(input_size: usize, hidden_size: usize, weight: Matrix, bias: Matrix) -> Result<Self> {
        if input_size == 0 || hidden_size == 0 {
            return Err(Error::config("LSTM sizes must be positive"));
        }
        if weight.shape() != (4 * hidden_size, input_size + hidden_size) || bias.shape() != (1, 4 * hidden_size) {
            return Err(Error::ShapeMismatch {
                op: "LstmCell::new",
                lhs: weight.shape(),
                rhs: bias.shape(),
            });
        }
        if !weight.is_finite() || !bias.is_finite() {
            return Err(Error::NonFinite("LSTM parameters".into()));
        }
        Ok(Self {
            weight,
            bias,
            input_size,
            hidden_size,
        })
    }

    /// `uniform(±1/√(in + H))` parameters with the forget-gate bias set to 1.
    pub fn init<R: Rng + ?Sized>(input_size: usize, hidden_size: usize, rng: &mut R) -> Self {
        let fan_in = input_size + hidden_size;
        let r = 1.0 / (fan_in as f64).sqrt();
        let weight = uniform_matrix(4 * hidden_size, fan_in, r, rng);
        let mut bias = uniform_matrix(1, 4 * hidden_size, r, rng);
        for j in hidden_size..2 * hidden_size {
            bias.set(0, j, 1.0);
        }
        Self {
            weight,
            bias,
            input_size,
            hidden_size,
        }
    }

    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        Self {
            weight: Matrix::zeros(4 * hidden_size, input_size + hidden_size),
            bias: Matrix::zeros(1, 4 * hidden_size),
            input_size,
            hidden_size,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_size, self.hidden_size)
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
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

    /// One step for a `B × in` batch.
    pub fn step(&self, x: &Matrix, state: &LstmState) -> Result<(LstmState, LstmStepCache)> {
        let h = self.hidden_size;
        if x.cols() != self.input_size {
            return Err(Error::ShapeMismatch {
                op: "lstm_step",
                lhs: x.shape(),
                rhs: (x.rows(), self.input_size),
            });
        }
        if state.hidden.shape() != (x.rows(), h) || state.cell.shape() != (x.rows(), h) {
            return Err(Error::ShapeMismatch {
                op: "lstm_step state",
                lhs: state.hidden.shape(),
                rhs: (x.rows(), h),
            });
        }
        if !state.hidden.is_finite() || !state.cell.is_finite() {
            return Err(Error::NonFinite("LSTM state".into()));
        }

        let concat = Matrix::hstack(&[x, &state.hidden])?;
        let mut gates = concat.matmul_nt(&self.weight)?.add_row(&self.bias)?;
        let batch = x.rows();
        let mut cell = Matrix::zeros(batch, h);
        let mut hidden = Matrix::zeros(batch, h);
        let mut tanh_cell = Matrix::zeros(batch, h);
        for b in 0..batch {
            let g = gates.row_mut(b);
            for v in &mut g[..3 * h] {
                *v = logistic(*v);
            }
            for v in &mut g[3 * h..] {
                *v = v.tanh();
            }
            let c_prev = state.cell.row(b);
            let (c_row, h_row, t_row) = (cell.row_mut(b), hidden.row_mut(b), tanh_cell.row_mut(b));
            for j in 0..h {
                let c = g[h + j] * c_prev[j] + g[j] * g[3 * h + j];
                let tc = c.tanh();
                c_row[j] = c;
                t_row[j] = tc;
                h_row[j] = g[2 * h + j] * tc;
            }
        }
        let cache = LstmStepCache {
            concat,
            gates,
            cell_prev: state.cell.clone(),
            tanh_cell,
        };
        Ok((LstmState { hidden, cell }, cache))
    }

    /// Backward through one step.
    ///
    /// `d_hidden` is the total gradient reaching `h'` (upstream plus
    /// recurrent) and `d_cell` the recurrent gradient reaching `c'`. Returns
    /// `(∂L/∂x, ∂L/∂h_prev, ∂L/∂c_prev)`.
    pub fn step_backward(
        &self,
        cache: &LstmStepCache,
        d_hidden: &Matrix,
        d_cell: &Matrix,
        grad: &mut LstmCell,
    ) -> Result<(Matrix, Matrix, Matrix)> {
        let h = self.hidden_size;
        let batch = cache.concat.rows();
        if d_hidden.shape() != (batch, h) || d_cell.shape() != (batch, h) {
            return Err(Error::ShapeMismatch {
                op: "lstm_step_backward",
                lhs: d_hidden.shape(),
                rhs: (batch, h),
            });
        }
        let mut d_pre = Matrix::zeros(batch, 4 * h);
        let mut d_cell_prev = Matrix::zeros(batch, h);
        for b in 0..batch {
            let g = cache.gates.row(b);
            let tc = cache.tanh_cell.row(b);
            let c_prev = cache.cell_prev.row(b);
            let dh = d_hidden.row(b);
            let dc_next = d_cell.row(b);
            let dcp = d_cell_prev.row_mut(b);
            let da = d_pre.row_mut(b);
            for j in 0..h {
                let (i, f, o, cand) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                let d_o = dh[j] * tc[j];
                let dc = dc_next[j] + dh[j] * o * (1.0 - tc[j] * tc[j]);
                da[j] = dc * cand * i * (1.0 - i);
                da[h + j] = dc * c_prev[j] * f * (1.0 - f);
                da[2 * h + j] = d_o * o * (1.0 - o);
                da[3 * h + j] = dc * i * (1.0 - cand * cand);
                dcp[j] = dc * f;
            }
        }
        grad.weight.add_matmul_tn(&d_pre, &cache.concat)?;
        grad.bias.add_assign(&d_pre.sum_rows())?;
        let d_concat = d_pre.matmul(&self.weight)?;
        let dx = d_concat.slice_cols(0, self.input_size);
        let dh_prev = d_concat.slice_cols(self.input_size, self.input_size + h);
        Ok((dx, dh_prev, d_cell_prev))
    }

    /// Unrolls the cell over `inputs` (each `B × in`) from `initial`, or a
    /// zero state.
    pub fn forward_sequence(&self, inputs: &[Matrix], initial: Option<LstmState>) -> Result<LstmTrace> {
        let batch = inputs.first().map_or(1, Matrix::rows);
        let mut state = initial.unwrap_or_else(|| LstmState::zeros(batch, self.hidden_size));
        let mut outputs = Vec::with_capacity(inputs.len());
        let mut caches = Vec::with_capacity(inputs.len());
        for x in inputs {
            let (next, cache) = self.step(x, &state)?;
            outputs.push(next.hidden.clone());
            caches.push(cache);
            state = next;
        }
        Ok(LstmTrace {
            outputs,
            final_state: state,
            caches,
        })
    }

    /// Reverse-mode pass through the whole unrolled trace. `upstream[t]` is
    /// the gradient on the output at step `t`; parameter gradients are
    /// accumulated into `grad` and per-step input gradients returned.
    pub fn backward_sequence(
        &self,
        trace: &LstmTrace,
        upstream: &[Matrix],
        grad: &mut LstmCell,
    ) -> Result<Vec<Matrix>> {
        if upstream.len() != trace.steps() {
            return Err(Error::invalid(format!(
                "BPTT got {} upstream gradients for {} recorded steps",
                upstream.len(),
                trace.steps()
            )));
        }
        let Some(first) = trace.caches.first() else {
            return Ok(Vec::new());
        };
        let batch = first.concat.rows();
        let mut dh_next = Matrix::zeros(batch, self.hidden_size);
        let mut dc_next = Matrix::zeros(batch, self.hidden_size);
        let mut dxs = vec![Matrix::zeros(0, 0); trace.steps()];
        for t in (0..trace.steps()).rev() {
            let dh = upstream[t].add(&dh_next)?;
            let (dx, dh_prev, dc_prev) = self.step_backward(&trace.caches[t], &dh, &dc_next, grad)?;
            dxs[t] = dx;
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
        Ok(dxs)
    }
}

/// Single-sample step: returns the output `h'` and the next state.
pub fn lstm_step(cell: &LstmCell, x: &Matrix, state: &LstmState) -> Result<(Matrix, LstmState)> {
    let (next, _) = cell.step(x, state)?;
    Ok((next.hidden.clone(), next))
}

/// BPTT over a recorded trace; returns parameter gradients and input gradients.
pub fn bptt_backward(cell: &LstmCell, trace: &LstmTrace, upstream: &[Matrix]) -> Result<(LstmCell, Vec<Matrix>)> {
    let mut grad = cell.zeros_like();
    let dxs = cell.backward_sequence(trace, upstream, &mut grad)?;
    Ok((grad, dxs))
}
