use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Recurrent;
use crate::layers::{AffineLayer, LstmCell, LstmTrace};
use crate::{Error, Matrix, Result};

/// One LSTM over the per-frame concatenation of every input stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleStream {
    pub lstm: LstmCell,
    pub classifier: AffineLayer,
}

/// Two successive LSTM stages: stage 1 reads group A; stage 2 reads the
/// stage-1 output concatenated with group B. The intermediate classifier sits
/// on stage 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStage {
    pub groups: [Vec<usize>; 2],
    pub stage1: LstmCell,
    pub stage2: LstmCell,
    pub final_classifier: AffineLayer,
    pub intermediate_classifier: AffineLayer,
}

pub struct SingleTrace {
    lstm: LstmTrace,
}

pub struct TwoStageTrace {
    stage1: LstmTrace,
    stage2: LstmTrace,
}

fn concat_streams(streams: &[Vec<Matrix>], select: impl Iterator<Item = usize> + Clone) -> Result<Vec<Matrix>> {
    let frames = streams.first().map_or(0, Vec::len);
    (0..frames)
        .map(|t| {
            let parts: Vec<&Matrix> = select.clone().map(|i| &streams[i][t]).collect();
            Matrix::hstack(&parts)
        })
        .collect()
}

impl SingleStream {
    pub fn init<R: Rng + ?Sized>(input_dims: &[usize], hidden: usize, classes: usize, rng: &mut R) -> Result<Self> {
        let width: usize = input_dims.iter().sum();
        if width == 0 {
            return Err(Error::config("single-stream baseline needs at least one input feature"));
        }
        Ok(Self {
            lstm: LstmCell::init(width, hidden, rng),
            classifier: AffineLayer::init(hidden, classes, rng),
        })
    }

    pub(crate) fn named_params(&self) -> Vec<(String, &Matrix)> {
        let mut out = self.lstm.named_params("lstm");
        out.extend(self.classifier.named_params("classifier"));
        out
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = self.lstm.params_mut().into();
        out.extend(self.classifier.params_mut());
        out
    }

    pub(crate) fn zeros_like(&self) -> Self {
        Self {
            lstm: self.lstm.zeros_like(),
            classifier: self.classifier.zeros_like(),
        }
    }
}

impl Recurrent for SingleStream {
    type Trace = SingleTrace;

    fn run(
        &self,
        streams: &[Vec<Matrix>],
        _with_intermediate: bool,
    ) -> Result<(SingleTrace, Vec<Matrix>, Option<Vec<Matrix>>)> {
        let inputs = concat_streams(streams, 0..streams.len())?;
        let lstm = self.lstm.forward_sequence(&inputs, None)?;
        let logits = lstm
            .outputs
            .iter()
            .map(|h| self.classifier.forward(h))
            .collect::<Result<_>>()?;
        Ok((SingleTrace { lstm }, logits, None))
    }

    fn backprop(
        &self,
        trace: &SingleTrace,
        d_final: &[Matrix],
        _d_inter: Option<&[Matrix]>,
        grad: &mut Self,
    ) -> Result<()> {
        let upstream = trace
            .lstm
            .outputs
            .iter()
            .zip(d_final)
            .map(|(h, d)| self.classifier.backward(h, d, &mut grad.classifier))
            .collect::<Result<Vec<_>>>()?;
        self.lstm.backward_sequence(&trace.lstm, &upstream, &mut grad.lstm)?;
        Ok(())
    }
}

impl TwoStage {
    pub fn init<R: Rng + ?Sized>(
        input_dims: &[usize],
        groups: [Vec<usize>; 2],
        hidden: usize,
        classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        for g in &groups {
            if g.is_empty() || g.iter().any(|&i| i >= input_dims.len()) {
                return Err(Error::config(format!(
                    "two-stage group {g:?} must name existing streams among {}",
                    input_dims.len()
                )));
            }
        }
        let width_a: usize = groups[0].iter().map(|&i| input_dims[i]).sum();
        let width_b: usize = groups[1].iter().map(|&i| input_dims[i]).sum();
        Ok(Self {
            stage1: LstmCell::init(width_a, hidden, rng),
            stage2: LstmCell::init(hidden + width_b, hidden, rng),
            final_classifier: AffineLayer::init(hidden, classes, rng),
            intermediate_classifier: AffineLayer::init(hidden, classes, rng),
            groups,
        })
    }

    pub(crate) fn named_params(&self) -> Vec<(String, &Matrix)> {
        let mut out = self.stage1.named_params("stage1.lstm");
        out.extend(self.stage2.named_params("stage2.lstm"));
        out.extend(self.final_classifier.named_params("final_classifier"));
        out.extend(self.intermediate_classifier.named_params("intermediate_classifier"));
        out
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = self.stage1.params_mut().into();
        out.extend(self.stage2.params_mut());
        out.extend(self.final_classifier.params_mut());
        out.extend(self.intermediate_classifier.params_mut());
        out
    }

    pub(crate) fn zeros_like(&self) -> Self {
        Self {
            groups: self.groups.clone(),
            stage1: self.stage1.zeros_like(),
            stage2: self.stage2.zeros_like(),
            final_classifier: self.final_classifier.zeros_like(),
            intermediate_classifier: self.intermediate_classifier.zeros_like(),
        }
    }
}

impl Recurrent for TwoStage {
    type Trace = TwoStageTrace;

    fn run(
        &self,
        streams: &[Vec<Matrix>],
        with_intermediate: bool,
    ) -> Result<(TwoStageTrace, Vec<Matrix>, Option<Vec<Matrix>>)> {
        let a = concat_streams(streams, self.groups[0].iter().copied())?;
        let b = concat_streams(streams, self.groups[1].iter().copied())?;
        let stage1 = self.stage1.forward_sequence(&a, None)?;
        let stage2_in = stage1
            .outputs
            .iter()
            .zip(&b)
            .map(|(h, x)| Matrix::hstack(&[h, x]))
            .collect::<Result<Vec<_>>>()?;
        let stage2 = self.stage2.forward_sequence(&stage2_in, None)?;
        let logits = stage2
            .outputs
            .iter()
            .map(|h| self.final_classifier.forward(h))
            .collect::<Result<_>>()?;
        let intermediate = if with_intermediate {
            Some(
                stage1
                    .outputs
                    .iter()
                    .map(|h| self.intermediate_classifier.forward(h))
                    .collect::<Result<_>>()?,
            )
        } else {
            None
        };
        Ok((TwoStageTrace { stage1, stage2 }, logits, intermediate))
    }

    fn backprop(
        &self,
        trace: &TwoStageTrace,
        d_final: &[Matrix],
        d_inter: Option<&[Matrix]>,
        grad: &mut Self,
    ) -> Result<()> {
        let h = self.stage1.hidden_size();
        let upstream2 = trace
            .stage2
            .outputs
            .iter()
            .zip(d_final)
            .map(|(o, d)| self.final_classifier.backward(o, d, &mut grad.final_classifier))
            .collect::<Result<Vec<_>>>()?;
        let d_in2 = self
            .stage2
            .backward_sequence(&trace.stage2, &upstream2, &mut grad.stage2)?;
        let mut upstream1 = Vec::with_capacity(d_in2.len());
        for (t, d) in d_in2.iter().enumerate() {
            let mut dh = d.slice_cols(0, h);
            if let Some(di) = d_inter {
                let extra = self.intermediate_classifier.backward(
                    &trace.stage1.outputs[t],
                    &di[t],
                    &mut grad.intermediate_classifier,
                )?;
                dh.add_assign(&extra)?;
            }
            upstream1.push(dh);
        }
        self.stage1
            .backward_sequence(&trace.stage1, &upstream1, &mut grad.stage1)?;
        Ok(())
    }
}
