use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Recurrent;
use crate::layers::{AffineLayer, LstmCell, LstmState, LstmTrace};
use crate::{Error, Matrix, Result};

/// Multi-modal LSTM.
///
/// At every frame each modality goes through its own LSTM; the `M` hidden
/// states are stacked into `D` (`M × H`) and pooled to `O` (`1 × H`) by the
/// first FC-Pool. A fusion LSTM consumes `O`; its output is stacked on top of
/// `D` (skip connection, `(M+1) × H`) and pooled again by the second FC-Pool
/// into the final representation, which feeds the classifier. The
/// intermediate classifier reads the fusion LSTM output and only takes part
/// in training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmLstm {
    pub modality_lstms: Vec<LstmCell>,
    pub fc_pool_1: AffineLayer,
    pub fusion_lstm: LstmCell,
    pub fc_pool_2: AffineLayer,
    pub final_classifier: AffineLayer,
    pub intermediate_classifier: AffineLayer,
}

/// Carried recurrent state of every LSTM in the network.
#[derive(Debug, Clone, PartialEq)]
pub struct MmState {
    pub modality: Vec<LstmState>,
    pub fusion: LstmState,
}

pub struct MmTrace {
    modality: Vec<LstmTrace>,
    stacked: Vec<Matrix>,
    fusion: LstmTrace,
    skip: Vec<Matrix>,
    representation: Vec<Matrix>,
}

impl MmLstm {
    pub fn init<R: Rng + ?Sized>(input_dims: &[usize], hidden: usize, classes: usize, rng: &mut R) -> Result<Self> {
        if input_dims.is_empty() {
            return Err(Error::config("MM-LSTM needs at least one modality"));
        }
        let m = input_dims.len();
        let modality_lstms = input_dims.iter().map(|&d| LstmCell::init(d, hidden, rng)).collect();
        Ok(Self {
            modality_lstms,
            fc_pool_1: AffineLayer::init(m * hidden, hidden, rng),
            fusion_lstm: LstmCell::init(hidden, hidden, rng),
            fc_pool_2: AffineLayer::init((m + 1) * hidden, hidden, rng),
            final_classifier: AffineLayer::init(hidden, classes, rng),
            intermediate_classifier: AffineLayer::init(hidden, classes, rng),
        })
    }

    pub fn num_modalities(&self) -> usize {
        self.modality_lstms.len()
    }

    pub fn hidden(&self) -> usize {
        self.fusion_lstm.hidden_size()
    }

    pub fn zero_state(&self, batch: usize) -> MmState {
        let h = self.hidden();
        MmState {
            modality: vec![LstmState::zeros(batch, h); self.num_modalities()],
            fusion: LstmState::zeros(batch, h),
        }
    }

    /// One frame for a batch: `inputs[m]` is `B × dim_m`. Returns final
    /// logits, intermediate logits and the next state.
    pub fn forward_step(&self, inputs: &[Matrix], state: &MmState) -> Result<(Matrix, Matrix, MmState)> {
        if inputs.len() != self.num_modalities() {
            return Err(Error::invalid(format!(
                "expected {} modality inputs, got {}",
                self.num_modalities(),
                inputs.len()
            )));
        }
        let mut next_modality = Vec::with_capacity(inputs.len());
        for ((cell, x), s) in self.modality_lstms.iter().zip(inputs).zip(&state.modality) {
            next_modality.push(cell.step(x, s)?.0);
        }
        let hiddens: Vec<&Matrix> = next_modality.iter().map(|s| &s.hidden).collect();
        let stacked = Matrix::hstack(&hiddens)?;
        let pooled = self.fc_pool_1.forward(&stacked)?;
        let (fusion, _) = self.fusion_lstm.step(&pooled, &state.fusion)?;
        let skip = Matrix::hstack(&[&fusion.hidden, &stacked])?;
        let representation = self.fc_pool_2.forward(&skip)?;
        let final_logits = self.final_classifier.forward(&representation)?;
        let intermediate_logits = self.intermediate_classifier.forward(&fusion.hidden)?;
        Ok((
            final_logits,
            intermediate_logits,
            MmState {
                modality: next_modality,
                fusion,
            },
        ))
    }

    pub(crate) fn named_params(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for (i, cell) in self.modality_lstms.iter().enumerate() {
            out.extend(cell.named_params(&format!("modality{i}.lstm")));
        }
        out.extend(self.fc_pool_1.named_params("fc_pool_1"));
        out.extend(self.fusion_lstm.named_params("fusion.lstm"));
        out.extend(self.fc_pool_2.named_params("fc_pool_2"));
        out.extend(self.final_classifier.named_params("final_classifier"));
        out.extend(self.intermediate_classifier.named_params("intermediate_classifier"));
        out
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        for cell in &mut self.modality_lstms {
            out.extend(cell.params_mut());
        }
        out.extend(self.fc_pool_1.params_mut());
        out.extend(self.fusion_lstm.params_mut());
        out.extend(self.fc_pool_2.params_mut());
        out.extend(self.final_classifier.params_mut());
        out.extend(self.intermediate_classifier.params_mut());
        out
    }

    pub(crate) fn zeros_like(&self) -> Self {
        Self {
            modality_lstms: self.modality_lstms.iter().map(LstmCell::zeros_like).collect(),
            fc_pool_1: self.fc_pool_1.zeros_like(),
            fusion_lstm: self.fusion_lstm.zeros_like(),
            fc_pool_2: self.fc_pool_2.zeros_like(),
            final_classifier: self.final_classifier.zeros_like(),
            intermediate_classifier: self.intermediate_classifier.zeros_like(),
        }
    }
}

impl Recurrent for MmLstm {
    type Trace = MmTrace;

    fn run(
        &self,
        streams: &[Vec<Matrix>],
        with_intermediate: bool,
    ) -> Result<(MmTrace, Vec<Matrix>, Option<Vec<Matrix>>)> {
        let modality = self
            .modality_lstms
            .iter()
            .zip(streams)
            .map(|(cell, xs)| cell.forward_sequence(xs, None))
            .collect::<Result<Vec<_>>>()?;
        let frames = modality[0].outputs.len();
        let mut stacked = Vec::with_capacity(frames);
        let mut pooled = Vec::with_capacity(frames);
        for t in 0..frames {
            let hs: Vec<&Matrix> = modality.iter().map(|tr| &tr.outputs[t]).collect();
            let d = Matrix::hstack(&hs)?;
            pooled.push(self.fc_pool_1.forward(&d)?);
            stacked.push(d);
        }
        let fusion = self.fusion_lstm.forward_sequence(&pooled, None)?;
        let mut skip = Vec::with_capacity(frames);
        let mut representation = Vec::with_capacity(frames);
        let mut final_logits = Vec::with_capacity(frames);
        for t in 0..frames {
            let s = Matrix::hstack(&[&fusion.outputs[t], &stacked[t]])?;
            let f = self.fc_pool_2.forward(&s)?;
            final_logits.push(self.final_classifier.forward(&f)?);
            skip.push(s);
            representation.push(f);
        }
        let intermediate = if with_intermediate {
            Some(
                fusion
                    .outputs
                    .iter()
                    .map(|u| self.intermediate_classifier.forward(u))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        let trace = MmTrace {
            modality,
            stacked,
            fusion,
            skip,
            representation,
        };
        Ok((trace, final_logits, intermediate))
    }

    fn backprop(
        &self,
        trace: &MmTrace,
        d_final: &[Matrix],
        d_intermediate: Option<&[Matrix]>,
        grad: &mut Self,
    ) -> Result<()> {
        let h = self.hidden();
        let frames = trace.stacked.len();
        let mut d_fusion_out = Vec::with_capacity(frames);
        let mut d_stacked = Vec::with_capacity(frames);
        for t in 0..frames {
            let d_rep =
                self.final_classifier
                    .backward(&trace.representation[t], &d_final[t], &mut grad.final_classifier)?;
            let d_skip = self.fc_pool_2.backward(&trace.skip[t], &d_rep, &mut grad.fc_pool_2)?;
            let mut du = d_skip.slice_cols(0, h);
            if let Some(d_inter) = d_intermediate {
                let extra = self.intermediate_classifier.backward(
                    &trace.fusion.outputs[t],
                    &d_inter[t],
                    &mut grad.intermediate_classifier,
                )?;
                du.add_assign(&extra)?;
            }
            d_fusion_out.push(du);
            d_stacked.push(d_skip.slice_cols(h, d_skip.cols()));
        }
        let d_pooled = self
            .fusion_lstm
            .backward_sequence(&trace.fusion, &d_fusion_out, &mut grad.fusion_lstm)?;
        for t in 0..frames {
            let extra = self
                .fc_pool_1
                .backward(&trace.stacked[t], &d_pooled[t], &mut grad.fc_pool_1)?;
            d_stacked[t].add_assign(&extra)?;
        }
        for (m, (cell, tr)) in self.modality_lstms.iter().zip(&trace.modality).enumerate() {
            let upstream: Vec<Matrix> = d_stacked.iter().map(|d| d.slice_cols(m * h, (m + 1) * h)).collect();
            cell.backward_sequence(tr, &upstream, &mut grad.modality_lstms[m])?;
        }
        Ok(())
    }
}
