//! MM-LSTM, the two baselines, temporal average pooling and SGD training.

mod baselines;
mod mmlstm;
mod timeline;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use baselines::{SingleStream, TwoStage};
pub use mmlstm::{MmLstm, MmState};
pub use timeline::PredictionTimeline;

use crate::layers::{AffineLayer, NamedTensor};
use crate::loss::{anticipation_loss, softmax_backward, stagewise_total, LossConfig};
use crate::{Error, Matrix, Result};

/// Which network sits behind a [`Model`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    MmLstm,
    SingleStream,
    /// Stream indices feeding stage 1 and stage 2, in that fixed order.
    TwoStage {
        groups: [Vec<usize>; 2],
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    /// Width of each input stream, in stream order.
    pub input_dims: Vec<usize>,
    pub hidden: usize,
    pub num_classes: usize,
    pub loss: LossConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dims.is_empty() {
            return Err(Error::config("at least one input stream is required"));
        }
        if self.input_dims.contains(&0) {
            return Err(Error::config("input stream widths must be positive"));
        }
        if self.hidden == 0 || self.num_classes == 0 {
            return Err(Error::config("hidden size and class count must be positive"));
        }
        if self.loss.num_classes != self.num_classes {
            return Err(Error::config("loss and model disagree on the class count"));
        }
        self.loss.validate()
    }
}

/// Baseline constructors.
#[derive(Debug, Clone, PartialEq)]
pub enum BaselineKind {
    SingleStream,
    /// Exactly two stream groups, in stage order.
    MsLstmTwoStage {
        groups: Vec<Vec<usize>>,
    },
}

/// One training or evaluation sample: a `T × dim` matrix per input stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub inputs: Vec<Matrix>,
    pub label: usize,
}

impl Example {
    pub fn frames(&self) -> usize {
        self.inputs.first().map_or(0, Matrix::rows)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
enum Network {
    MmLstm(MmLstm),
    SingleStream(SingleStream),
    TwoStage(TwoStage),
}

/// A configured network with its parameters.
///
/// A `Model` also serves as the gradient container for itself.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    net: Network,
}

/// Loss and gradient norm reported by [`training_step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub loss: f64,
    pub grad_norm: f64,
}

pub(crate) trait Recurrent {
    type Trace;

    /// Runs the network over `streams[s][t]` (each `B × dim_s`), returning the
    /// trace, final logits per frame and, when requested and available,
    /// intermediate logits per frame.
    fn run(
        &self,
        streams: &[Vec<Matrix>],
        with_intermediate: bool,
    ) -> Result<(Self::Trace, Vec<Matrix>, Option<Vec<Matrix>>)>;

    fn backprop(
        &self,
        trace: &Self::Trace,
        d_final: &[Matrix],
        d_intermediate: Option<&[Matrix]>,
        grad: &mut Self,
    ) -> Result<()>;
}

impl Model {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let dims = &config.input_dims;
        let (h, c) = (config.hidden, config.num_classes);
        let net = match &config.architecture {
            Architecture::MmLstm => Network::MmLstm(MmLstm::init(dims, h, c, rng)?),
            Architecture::SingleStream => Network::SingleStream(SingleStream::init(dims, h, c, rng)?),
            Architecture::TwoStage { groups } => Network::TwoStage(TwoStage::init(dims, groups.clone(), h, c, rng)?),
        };
        Ok(Self { config, net })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn loss_config(&self) -> &LossConfig {
        &self.config.loss
    }

    pub fn as_mm_lstm(&self) -> Option<&MmLstm> {
        match &self.net {
            Network::MmLstm(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_single_stream(&self) -> Option<&SingleStream> {
        match &self.net {
            Network::SingleStream(m) => Some(m),
            _ => None,
        }
    }

    /// The auxiliary classifier used only for stage-wise supervision.
    pub fn intermediate_classifier_mut(&mut self) -> Option<&mut AffineLayer> {
        match &mut self.net {
            Network::MmLstm(m) => Some(&mut m.intermediate_classifier),
            Network::TwoStage(m) => Some(&mut m.intermediate_classifier),
            Network::SingleStream(_) => None,
        }
    }

    /// Frobenius norm of each modality's column block in the first FC-Pool.
    pub fn modality_block_norms(&self) -> Option<Vec<f64>> {
        let mm = self.as_mm_lstm()?;
        let h = mm.hidden();
        let w = &mm.fc_pool_1.weight;
        Some(
            (0..mm.num_modalities())
                .map(|m| w.slice_cols(m * h, (m + 1) * h).frobenius_norm())
                .collect(),
        )
    }

    pub fn named_params(&self) -> Vec<(String, &Matrix)> {
        match &self.net {
            Network::MmLstm(m) => m.named_params(),
            Network::SingleStream(m) => m.named_params(),
            Network::TwoStage(m) => m.named_params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        match &mut self.net {
            Network::MmLstm(m) => m.params_mut(),
            Network::SingleStream(m) => m.params_mut(),
            Network::TwoStage(m) => m.params_mut(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.named_params().iter().map(|(_, m)| m.len()).sum()
    }

    /// Same-shaped model with every parameter zero.
    pub fn zeros_like(&self) -> Model {
        let net = match &self.net {
            Network::MmLstm(m) => Network::MmLstm(m.zeros_like()),
            Network::SingleStream(m) => Network::SingleStream(m.zeros_like()),
            Network::TwoStage(m) => Network::TwoStage(m.zeros_like()),
        };
        Model {
            config: self.config.clone(),
            net,
        }
    }

    /// All parameters concatenated in `named_params` order as `1 × n`.
    pub fn flat_params(&self) -> Matrix {
        let mut data = Vec::with_capacity(self.num_params());
        for (_, m) in self.named_params() {
            data.extend_from_slice(m.data());
        }
        Matrix::row_vector(data)
    }

    pub fn set_flat_params(&mut self, flat: &Matrix) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::invalid(format!(
                "{} values for {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        for p in self.params_mut() {
            let n = p.len();
            p.data_mut().copy_from_slice(&flat.data()[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Replaces every parameter from named tensors (e.g. an `MMW1` file).
    pub fn load_tensors(&mut self, tensors: &[NamedTensor]) -> Result<()> {
        let by_name: BTreeMap<&str, &Matrix> = tensors.iter().map(|(n, m)| (n.as_str(), m)).collect();
        let names: Vec<String> = self.named_params().into_iter().map(|(n, _)| n).collect();
        for (name, p) in names.iter().zip(self.params_mut()) {
            let src = by_name
                .get(name.as_str())
                .ok_or_else(|| Error::invalid(format!("missing tensor {name}")))?;
            if src.shape() != p.shape() {
                return Err(Error::ShapeMismatch {
                    op: "load_tensors",
                    lhs: p.shape(),
                    rhs: src.shape(),
                });
            }
            p.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    fn check_example(&self, ex: &Example) -> Result<()> {
        let dims = &self.config.input_dims;
        if ex.inputs.len() != dims.len() {
            return Err(Error::invalid(format!(
                "expected {} input streams, got {}",
                dims.len(),
                ex.inputs.len()
            )));
        }
        let frames = ex.frames();
        if frames == 0 {
            return Err(Error::invalid("sequence has no frames"));
        }
        for (i, (m, &d)) in ex.inputs.iter().zip(dims).enumerate() {
            if m.cols() != d || m.rows() != frames {
                return Err(Error::ShapeMismatch {
                    op: "model input",
                    lhs: m.shape(),
                    rhs: (frames, d),
                });
            }
            if !m.is_finite() {
                return Err(Error::NonFinite(format!("input stream {i}")));
            }
        }
        if ex.label >= self.config.num_classes {
            return Err(Error::invalid(format!("label {} out of range", ex.label)));
        }
        Ok(())
    }

    fn run(&self, streams: &[Vec<Matrix>]) -> Result<Vec<Matrix>> {
        Ok(match &self.net {
            Network::MmLstm(m) => m.run(streams, false)?.1,
            Network::SingleStream(m) => m.run(streams, false)?.1,
            Network::TwoStage(m) => m.run(streams, false)?.1,
        })
    }

    /// Per-frame softmax of the final classifier and its running average.
    pub fn predict_timeline(&self, inputs: &[Matrix]) -> Result<PredictionTimeline> {
        let ex = Example {
            inputs: inputs.to_vec(),
            label: 0,
        };
        Ok(self.predict_timelines(&[&ex])?.remove(0))
    }

    /// Timelines for many samples; equal-length samples are batched together.
    /// Labels are ignored.
    pub fn predict_timelines(&self, examples: &[&Example]) -> Result<Vec<PredictionTimeline>> {
        const CHUNK: usize = 32;
        for ex in examples {
            self.check_example(&Example {
                inputs: ex.inputs.clone(),
                label: 0,
            })?;
        }
        let mut out: Vec<Option<PredictionTimeline>> = vec![None; examples.len()];
        for (_, indices) in group_by_length(examples) {
            for chunk in indices.chunks(CHUNK) {
                let members: Vec<&Example> = chunk.iter().map(|&i| examples[i]).collect();
                let logits = self.run(&gather_streams(&members))?;
                let frames = logits.len();
                for (b, &i) in chunk.iter().enumerate() {
                    let mut per_frame = Matrix::zeros(frames, self.config.num_classes);
                    for (t, z) in logits.iter().enumerate() {
                        per_frame.row_mut(t).copy_from_slice(z.row(b));
                    }
                    out[i] = Some(PredictionTimeline::from_per_frame(per_frame.softmax_rows())?);
                }
            }
        }
        Ok(out.into_iter().map(|t| t.expect("every index is covered")).collect())
    }

    /// Mean stage-wise loss over `batch` and its exact gradient.
    pub fn loss_and_gradients(&self, batch: &[&Example]) -> Result<(f64, Model)> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        for ex in batch {
            self.check_example(ex)?;
        }
        let scale = 1.0 / batch.len() as f64;
        let mut grad = self.zeros_like();
        let (mut final_sum, mut inter_sum) = (0.0, 0.0);
        for (_, indices) in group_by_length(batch) {
            let members: Vec<&Example> = indices.iter().map(|&i| batch[i]).collect();
            let (f, i) = match (&self.net, &mut grad.net) {
                (Network::MmLstm(n), Network::MmLstm(g)) => group_loss(n, g, &members, &self.config.loss, scale)?,
                (Network::SingleStream(n), Network::SingleStream(g)) => {
                    group_loss(n, g, &members, &self.config.loss, scale)?
                }
                (Network::TwoStage(n), Network::TwoStage(g)) => group_loss(n, g, &members, &self.config.loss, scale)?,
                _ => unreachable!("gradient container mirrors the model"),
            };
            final_sum += f;
            inter_sum += i;
        }
        let total = stagewise_total(final_sum * scale, inter_sum * scale, &self.config.loss)?;
        Ok((total, grad))
    }

    /// Mean loss without gradients.
    pub fn loss(&self, batch: &[&Example]) -> Result<f64> {
        Ok(self.loss_and_gradients(batch)?.0)
    }
}

fn group_by_length(examples: &[&Example]) -> BTreeMap<usize, Vec<usize>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, ex) in examples.iter().enumerate() {
        groups.entry(ex.frames()).or_default().push(i);
    }
    groups
}

/// `streams[s][t]` is the `B × dim_s` batch of frame `t` of stream `s`.
fn gather_streams(members: &[&Example]) -> Vec<Vec<Matrix>> {
    let frames = members[0].frames();
    (0..members[0].inputs.len())
        .map(|s| {
            let dim = members[0].inputs[s].cols();
            (0..frames)
                .map(|t| {
                    let mut m = Matrix::zeros(members.len(), dim);
                    for (b, ex) in members.iter().enumerate() {
                        m.row_mut(b).copy_from_slice(ex.inputs[s].row(t));
                    }
                    m
                })
                .collect()
        })
        .collect()
}

/// Loss sums (final, intermediate) of one equal-length group; gradients of
/// `scale · (final + λ · intermediate)` are accumulated into `grad`.
fn group_loss<N: Recurrent>(
    net: &N,
    grad: &mut N,
    members: &[&Example],
    cfg: &LossConfig,
    scale: f64,
) -> Result<(f64, f64)> {
    let lambda = cfg.intermediate_loss_weight;
    let (trace, logits, inter) = net.run(&gather_streams(members), lambda > 0.0)?;

    let head = |logits: &[Matrix], weight: f64| -> Result<(f64, Vec<Matrix>)> {
        let frames = logits.len();
        let classes = logits[0].cols();
        let mut d = vec![Matrix::zeros(members.len(), classes); frames];
        let mut sum = 0.0;
        for (b, ex) in members.iter().enumerate() {
            let mut z = Matrix::zeros(frames, classes);
            for (t, l) in logits.iter().enumerate() {
                z.row_mut(t).copy_from_slice(l.row(b));
            }
            let probs = z.softmax_rows();
            let (value, d_probs) = anticipation_loss(&probs, ex.label, cfg)?;
            let dz = softmax_backward(&probs, &d_probs)?;
            sum += value;
            for (t, dt) in d.iter_mut().enumerate() {
                for (o, &g) in dt.row_mut(b).iter_mut().zip(dz.row(t)) {
                    *o = g * weight;
                }
            }
        }
        Ok((sum, d))
    };

    let (final_sum, d_final) = head(&logits, scale)?;
    let (inter_sum, d_inter) = match &inter {
        Some(l) => {
            let (s, d) = head(l, scale * lambda)?;
            (s, Some(d))
        }
        None => (0.0, None),
    };
    net.backprop(&trace, &d_final, d_inter.as_deref(), grad)?;
    Ok((final_sum, inter_sum))
}

pub fn build_baseline<R: Rng + ?Sized>(kind: BaselineKind, config: &ModelConfig, rng: &mut R) -> Result<Model> {
    let architecture = match kind {
        BaselineKind::SingleStream => Architecture::SingleStream,
        BaselineKind::MsLstmTwoStage { groups } => {
            let groups: [Vec<usize>; 2] = groups.try_into().map_err(|g: Vec<Vec<usize>>| {
                Error::config(format!(
                    "two-stage baseline needs exactly 2 modality groups, got {}",
                    g.len()
                ))
            })?;
            Architecture::TwoStage { groups }
        }
    };
    Model::new(
        ModelConfig {
            architecture,
            ..config.clone()
        },
        rng,
    )
}

/// One SGD step on the mean batch loss, with global gradient-norm clipping.
///
/// A non-finite loss or gradient rejects the step and leaves `model` intact.
pub fn training_step(
    model: &mut Model,
    batch: &[&Example],
    learning_rate: f64,
    clip_norm: Option<f64>,
) -> Result<StepReport> {
    let (loss, mut grad) = model.loss_and_gradients(batch)?;
    let grad_norm = grad
        .named_params()
        .iter()
        .map(|(_, g)| g.sum_of_squares())
        .sum::<f64>()
        .sqrt();
    if !loss.is_finite() || !grad_norm.is_finite() {
        return Err(Error::NonFinite(format!(
            "training loss {loss}, gradient norm {grad_norm}"
        )));
    }
    if let Some(max) = clip_norm {
        if grad_norm > max {
            let k = max / grad_norm;
            grad.params_mut().into_iter().for_each(|g| g.scale_in_place(k));
        }
    }
    if learning_rate != 0.0 {
        for (p, (_, g)) in model.params_mut().into_iter().zip(grad.named_params()) {
            p.axpy(-learning_rate, g)?;
        }
    }
    Ok(StepReport { loss, grad_norm })
}
