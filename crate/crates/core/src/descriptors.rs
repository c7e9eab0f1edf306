//! Vehicle-dynamics triples and the dynamics-embedding LSTM.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::layers::{AffineLayer, LstmCell, NamedTensor};
use crate::loss::{LossConfig, Weighting};
use crate::model::{training_step, Architecture, Example, Model, ModelConfig};
use crate::{Error, Matrix, Result};

/// Width of a dynamics triple: value, velocity, acceleration.
pub const TRIPLE_WIDTH: usize = 3;

/// Per-frame `(s_t, s_t − s_{t−δ}, s_t − 2s_{t−δ} + s_{t−2δ})`.
///
/// Frames before the start of the signal repeat `s_0`.
pub fn dynamics_triples(signal: &[f64], delta: usize) -> Result<Matrix> {
    if signal.is_empty() {
        return Err(Error::invalid("dynamics signal is empty"));
    }
    if delta == 0 {
        return Err(Error::invalid("frame gap must be at least 1"));
    }
    let at = |t: isize| signal[t.max(0) as usize];
    let mut out = Matrix::zeros(signal.len(), TRIPLE_WIDTH);
    for t in 0..signal.len() {
        let (s0, s1, s2) = (
            at(t as isize),
            at(t as isize - delta as isize),
            at(t as isize - 2 * delta as isize),
        );
        out.row_mut(t).copy_from_slice(&[s0, s0 - s1, s0 - 2.0 * s1 + s2]);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    pub hidden: usize,
    pub num_classes: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub clip_norm: Option<f64>,
    pub weighting: Weighting,
    pub fps: f64,
    pub seed: u64,
}

impl EmbedderConfig {
    pub fn new(num_classes: usize) -> Self {
        EmbedderConfig {
            hidden: 64,
            num_classes,
            epochs: 20,
            learning_rate: 0.05,
            batch_size: 16,
            clip_norm: Some(5.0),
            weighting: Weighting::default(),
            fps: 30.0,
            seed: 0,
        }
    }

    fn model_config(&self) -> ModelConfig {
        let mut loss = LossConfig::new(self.num_classes, self.weighting);
        loss.fps = self.fps;
        ModelConfig {
            architecture: Architecture::SingleStream,
            input_dims: vec![TRIPLE_WIDTH],
            hidden: self.hidden,
            num_classes: self.num_classes,
            loss,
        }
    }
}

/// An LSTM over standardized dynamics triples plus the classifier it was
/// trained with. Embeddings are the LSTM hidden states.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsEmbedder {
    config: EmbedderConfig,
    model: Model,
    /// Per-channel mean and inverse standard deviation of the training triples.
    input_mean: [f64; TRIPLE_WIDTH],
    input_scale: [f64; TRIPLE_WIDTH],
}

impl DynamicsEmbedder {
    /// Freshly initialized, with identity standardization.
    pub fn init(config: &EmbedderConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(DynamicsEmbedder {
            config: config.clone(),
            model: Model::new(config.model_config(), &mut rng)?,
            input_mean: [0.0; TRIPLE_WIDTH],
            input_scale: [1.0; TRIPLE_WIDTH],
        })
    }

    pub fn config(&self) -> &EmbedderConfig {
        &self.config
    }

    pub fn hidden(&self) -> usize {
        self.model.config().hidden
    }

    pub fn num_classes(&self) -> usize {
        self.model.config().num_classes
    }

    pub fn lstm(&self) -> &LstmCell {
        &self.model.as_single_stream().expect("embedder is single-stream").lstm
    }

    pub fn classifier(&self) -> &AffineLayer {
        &self
            .model
            .as_single_stream()
            .expect("embedder is single-stream")
            .classifier
    }

    fn standardize(&self, triples: &Matrix) -> Result<Matrix> {
        if triples.cols() != TRIPLE_WIDTH {
            return Err(Error::ShapeMismatch {
                op: "embed",
                lhs: triples.shape(),
                rhs: (triples.rows(), TRIPLE_WIDTH),
            });
        }
        let mut x = triples.clone();
        for r in 0..x.rows() {
            for (c, v) in x.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.input_mean[c]) * self.input_scale[c];
            }
        }
        Ok(x)
    }

    /// `T × hidden` hidden states of the LSTM; the classifier is not used.
    pub fn embed(&self, triples: &Matrix) -> Result<Matrix> {
        let x = self.standardize(triples)?;
        let inputs: Vec<Matrix> = (0..x.rows()).map(|t| x.slice_rows(t, t + 1)).collect();
        let trace = self.lstm().forward_sequence(&inputs, None)?;
        let rows: Vec<&Matrix> = trace.outputs.iter().collect();
        Matrix::vstack(&rows)
    }

    /// Pooled class prediction after the whole sequence.
    pub fn classify(&self, triples: &Matrix) -> Result<usize> {
        let x = self.standardize(triples)?;
        let timeline = self.model.predict_timeline(&[x])?;
        Ok(timeline.predicted_class_at(timeline.frames() - 1))
    }

    pub fn named_tensors(&self, prefix: &str) -> Vec<NamedTensor> {
        let mut out: Vec<NamedTensor> = self
            .model
            .named_params()
            .into_iter()
            .map(|(n, m)| (format!("{prefix}.{n}"), m.clone()))
            .collect();
        out.push((
            format!("{prefix}.input_mean"),
            Matrix::row_vector(self.input_mean.to_vec()),
        ));
        out.push((
            format!("{prefix}.input_scale"),
            Matrix::row_vector(self.input_scale.to_vec()),
        ));
        out
    }

    /// Rebuilds an embedder saved with [`DynamicsEmbedder::named_tensors`].
    pub fn from_tensors(config: &EmbedderConfig, prefix: &str, tensors: &[NamedTensor]) -> Result<Self> {
        let mut e = DynamicsEmbedder::init(config)?;
        let dotted = format!("{prefix}.");
        let own: Vec<NamedTensor> = tensors
            .iter()
            .filter_map(|(n, m)| n.strip_prefix(&dotted).map(|rest| (rest.to_string(), m.clone())))
            .collect();
        e.model.load_tensors(&own)?;
        let channel = |name: &str| -> Result<[f64; TRIPLE_WIDTH]> {
            let m = own
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, m)| m)
                .ok_or_else(|| Error::invalid(format!("missing tensor {prefix}.{name}")))?;
            m.data()
                .try_into()
                .map_err(|_| Error::invalid(format!("{prefix}.{name} must have {TRIPLE_WIDTH} entries")))
        };
        e.input_mean = channel("input_mean")?;
        e.input_scale = channel("input_scale")?;
        Ok(e)
    }
}

/// Per-epoch mean training loss; entry 0 is the loss before any update.
pub type EmbedderLog = Vec<f64>;

/// Trains an embedder on `(triples, label)` pairs with the anticipation loss.
///
/// Inputs are standardized per channel with statistics of the training data.
pub fn train_embedder(data: &[(Matrix, usize)], config: &EmbedderConfig) -> Result<(DynamicsEmbedder, EmbedderLog)> {
    if data.is_empty() {
        return Err(Error::invalid("no embedder training data"));
    }
    if config.batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    let first = data[0].1;
    if data.iter().all(|(_, y)| *y == first) {
        log::warn!("embedder training data holds a single class ({first}); the classifier learns nothing useful");
    }

    let mut embedder = DynamicsEmbedder::init(config)?;
    let (mut sum, mut sq, mut n) = ([0.0; TRIPLE_WIDTH], [0.0; TRIPLE_WIDTH], 0.0);
    for (m, _) in data {
        if m.cols() != TRIPLE_WIDTH {
            return Err(Error::ShapeMismatch {
                op: "train_embedder",
                lhs: m.shape(),
                rhs: (m.rows(), TRIPLE_WIDTH),
            });
        }
        for r in 0..m.rows() {
            for (c, &v) in m.row(r).iter().enumerate() {
                sum[c] += v;
                sq[c] += v * v;
            }
            n += 1.0;
        }
    }
    for c in 0..TRIPLE_WIDTH {
        let mean = sum[c] / n;
        let var = (sq[c] / n - mean * mean).max(0.0);
        embedder.input_mean[c] = mean;
        embedder.input_scale[c] = if var > 1e-12 { 1.0 / var.sqrt() } else { 1.0 };
    }

    let examples: Vec<Example> = data
        .iter()
        .map(|(m, y)| {
            Ok(Example {
                inputs: vec![embedder.standardize(m)?],
                label: *y,
            })
        })
        .collect::<Result<_>>()?;
    let all: Vec<&Example> = examples.iter().collect();
    let mut log = vec![embedder.model.loss(&all)?];

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
            let step = training_step(&mut embedder.model, &batch, config.learning_rate, config.clip_norm)?;
            total += step.loss * batch.len() as f64;
        }
        log.push(total / examples.len() as f64);
    }
    Ok((embedder, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn constant_signal_has_no_dynamics() {
        let m = dynamics_triples(&[5.0; 6], 1).unwrap();
        for t in 0..6 {
            assert_eq!(m.row(t), &[5.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn worked_examples() {
        let lin: Vec<f64> = (0..5).map(|t| 2.0 * t as f64).collect();
        assert_eq!(dynamics_triples(&lin, 1).unwrap().row(2), &[4.0, 2.0, 0.0]);
        assert_eq!(dynamics_triples(&[0.0, 1.0, 4.0], 1).unwrap().row(2), &[4.0, 3.0, 2.0]);
    }

    #[test]
    fn edge_padding_and_errors() {
        let m = dynamics_triples(&[3.0, 7.0], 1).unwrap();
        assert_eq!(m.row(0), &[3.0, 0.0, 0.0]);
        // s_{-1} = s_0 = 3: velocity 4, acceleration 7 − 6 + 3.
        assert_eq!(m.row(1), &[7.0, 4.0, 4.0]);
        assert!(dynamics_triples(&[], 1).is_err());
        assert!(dynamics_triples(&[1.0], 0).is_err());
    }

    proptest! {
        #[test]
        fn triples_match_direct_formula(signal in prop::collection::vec(-1000i32..1000, 1..40), delta in 1usize..5) {
            let s: Vec<f64> = signal.iter().map(|&v| v as f64).collect();
            let m = dynamics_triples(&s, delta).unwrap();
            for t in 0..s.len() {
                let back = |k: usize| if t >= k { s[t - k] } else { s[0] };
                prop_assert_eq!(m.get(t, 0), s[t]);
                prop_assert_eq!(m.get(t, 1), s[t] - back(delta));
                prop_assert_eq!(m.get(t, 2), s[t] - 2.0 * back(delta) + back(2 * delta));
            }
        }
    }

    fn small_config(classes: usize) -> EmbedderConfig {
        EmbedderConfig {
            hidden: 8,
            ..EmbedderConfig::new(classes)
        }
    }

    #[test]
    fn zero_parameters_embed_to_zero() {
        let cfg = small_config(2);
        let e = DynamicsEmbedder::init(&cfg).unwrap();
        // Zero every network parameter; keep the standardization at identity.
        let zeroed: Vec<NamedTensor> = e
            .named_tensors("e")
            .into_iter()
            .map(|(n, m)| {
                if n.starts_with("e.input") {
                    (n, m)
                } else {
                    (n, Matrix::zeros(m.rows(), m.cols()))
                }
            })
            .collect();
        let z = DynamicsEmbedder::from_tensors(&cfg, "e", &zeroed).unwrap();
        let out = z.embed(&dynamics_triples(&[1.0, 5.0, -2.0], 1).unwrap()).unwrap();
        assert_eq!(out.shape(), (3, 8));
        assert_eq!(out.max_abs(), 0.0);
    }

    #[test]
    fn embedding_shapes_and_causality() {
        let e = DynamicsEmbedder::init(&small_config(2)).unwrap();
        let tr = dynamics_triples(&[0.5, 1.0, 3.0, 2.0, 2.0, 7.0], 1).unwrap();
        assert_eq!(e.embed(&tr.slice_rows(0, 1)).unwrap().shape(), (1, 8));
        let full = e.embed(&tr).unwrap();
        for t in 1..=6 {
            assert_eq!(e.embed(&tr.slice_rows(0, t)).unwrap(), full.slice_rows(0, t));
        }
        assert!(e.embed(&Matrix::zeros(4, 2)).is_err());
    }

    #[test]
    fn identical_runs_give_identical_embeddings() {
        let e = DynamicsEmbedder::init(&small_config(2)).unwrap();
        let tr = dynamics_triples(&[1.0, 2.0, 4.0], 1).unwrap();
        assert_eq!(e.embed(&tr).unwrap(), e.embed(&tr).unwrap());
    }

    /// Steering ramp (class 1) vs flat steering (class 0), both noisy.
    fn ramp_vs_flat(n: usize, rng: &mut ChaCha8Rng) -> Vec<(Matrix, usize)> {
        (0..n)
            .map(|i| {
                let label = i % 2;
                let slope = if label == 1 { rng.random_range(0.5..1.5) } else { 0.0 };
                let signal: Vec<f64> = (0..30)
                    .map(|t| slope * t as f64 + rng.random_range(-1.0..1.0))
                    .collect();
                (dynamics_triples(&signal, 1).unwrap(), label)
            })
            .collect()
    }

    #[test]
    fn separates_ramp_from_flat() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let train = ramp_vs_flat(80, &mut rng);
        let test = ramp_vs_flat(40, &mut rng);
        let (e, log) = train_embedder(&train, &small_config(2)).unwrap();
        assert_eq!(log.len(), 21);
        assert!(log[20] < log[0], "{log:?}");
        let correct = test.iter().filter(|(m, y)| e.classify(m).unwrap() == *y).count();
        assert!(correct as f64 / test.len() as f64 >= 0.95, "{correct}/40");
    }

    #[test]
    fn zero_epochs_returns_initialized_embedder() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = ramp_vs_flat(6, &mut rng);
        let cfg = EmbedderConfig {
            epochs: 0,
            ..small_config(2)
        };
        let (e, log) = train_embedder(&data, &cfg).unwrap();
        assert_eq!(log.len(), 1);
        assert_eq!(e.lstm(), DynamicsEmbedder::init(&cfg).unwrap().lstm());
    }

    #[test]
    fn single_class_still_trains() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data: Vec<_> = ramp_vs_flat(10, &mut rng).into_iter().map(|(m, _)| (m, 0)).collect();
        let (e, _) = train_embedder(
            &data,
            &EmbedderConfig {
                epochs: 3,
                ..small_config(2)
            },
        )
        .unwrap();
        assert!(data.iter().all(|(m, _)| e.classify(m).unwrap() == 0));
    }

    #[test]
    fn training_is_deterministic_and_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = ramp_vs_flat(12, &mut rng);
        let cfg = EmbedderConfig {
            epochs: 2,
            ..small_config(2)
        };
        let (a, la) = train_embedder(&data, &cfg).unwrap();
        let (b, lb) = train_embedder(&data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
        let back = DynamicsEmbedder::from_tensors(&cfg, "steer", &a.named_tensors("steer")).unwrap();
        assert_eq!(back, a);
    }
}
