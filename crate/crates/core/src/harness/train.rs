//! Training: dynamics embedders first, then the classifier network with
//! best-on-validation snapshot selection.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eval::horizon_frames;
use super::{default_horizons, ModalitySource, Pipeline};
use crate::datagen::{self, Sequence, SplitSpec};
use crate::descriptors::{dynamics_triples, train_embedder, EmbedderConfig};
use crate::loss::{LossConfig, Weighting};
use crate::model::{training_step, Architecture, Example, Model, ModelConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Model input streams, in order.
    pub sources: Vec<ModalitySource>,
    /// Two-stage group indices refer to positions in `sources`.
    pub architecture: Architecture,
    pub hidden: usize,
    pub weighting: Weighting,
    pub intermediate_loss_weight: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub clip_norm: Option<f64>,
    pub seed: u64,
    /// Share of each training class held out for snapshot selection.
    pub validation_fraction: f64,
    pub horizons: Vec<f64>,
    /// Frame gap of the dynamics triples.
    pub delta: usize,
    /// `num_classes`, `fps` and `seed` are filled in from the data and `seed`.
    pub embedder: EmbedderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            sources: ModalitySource::all(),
            architecture: Architecture::MmLstm,
            hidden: 1024,
            weighting: Weighting::default(),
            intermediate_loss_weight: 1.0,
            epochs: 30,
            learning_rate: 0.001,
            batch_size: 16,
            clip_norm: Some(5.0),
            seed: 0,
            validation_fraction: 0.1,
            horizons: default_horizons(),
            delta: 1,
            embedder: EmbedderConfig::new(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training loss over the epoch's batches, each taken before its update.
    pub train_loss: f64,
    /// Validation accuracy per horizon after the epoch.
    pub heldout_accuracy: Vec<f64>,
    pub heldout_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub config: TrainConfig,
    pub seed: u64,
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters were kept; `None` without validation data or epochs.
    pub best_epoch: Option<usize>,
    pub steering_embedder_loss: Vec<f64>,
    pub speed_embedder_loss: Vec<f64>,
    pub wall_clock_s: f64,
}

impl TrainLog {
    /// Equality ignoring wall-clock time.
    pub fn same_run(&self, other: &TrainLog) -> bool {
        TrainLog {
            wall_clock_s: 0.0,
            ..self.clone()
        } == TrainLog {
            wall_clock_s: 0.0,
            ..other.clone()
        }
    }
}

/// Splits `data`, then trains on the training part. The test part is not touched.
pub fn train(cfg: &TrainConfig, data: &[Sequence], split: &SplitSpec) -> Result<(Pipeline, TrainLog)> {
    let parts = datagen::split(data, split)?;
    let train_set: Vec<&Sequence> = parts.train.iter().map(|&i| &data[i]).collect();
    train_on(cfg, &train_set)
}

/// Stratified validation carve-out; returns `(fit, validation)`.
fn carve_validation<'a>(seqs: &[&'a Sequence], fraction: f64, seed: u64) -> (Vec<&'a Sequence>, Vec<&'a Sequence>) {
    let mut by_class: BTreeMap<usize, Vec<&Sequence>> = BTreeMap::new();
    for s in seqs {
        by_class.entry(s.class_label).or_default().push(s);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut fit, mut val) = (Vec::new(), Vec::new());
    for (_, mut members) in by_class {
        members.shuffle(&mut rng);
        let k = (members.len() as f64 * fraction).round() as usize;
        let k = k.min(members.len().saturating_sub(1));
        val.extend_from_slice(&members[..k]);
        fit.extend_from_slice(&members[k..]);
    }
    (fit, val)
}

fn check_config(cfg: &TrainConfig) -> Result<()> {
    if cfg.sources.is_empty() {
        return Err(Error::config("at least one modality source is required"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    if !(cfg.learning_rate >= 0.0 && cfg.learning_rate.is_finite()) {
        return Err(Error::config("learning rate must be a non-negative number"));
    }
    if !(0.0..1.0).contains(&cfg.validation_fraction) {
        return Err(Error::config("validation_fraction must lie in [0, 1)"));
    }
    if cfg.horizons.is_empty() || cfg.horizons.iter().any(|h| !(*h > 0.0)) {
        return Err(Error::config("horizons must be positive"));
    }
    Ok(())
}

/// Trains on `train_set` (validation is carved from it).
pub fn train_on(cfg: &TrainConfig, train_set: &[&Sequence]) -> Result<(Pipeline, TrainLog)> {
    check_config(cfg)?;
    let start = Instant::now();
    let first = *train_set.first().ok_or_else(|| Error::invalid("empty training set"))?;
    let fps = first.fps;
    if train_set.iter().any(|s| s.fps != fps) {
        return Err(Error::invalid("training sequences must share one frame rate"));
    }
    let num_classes = train_set.iter().map(|s| s.class_label).max().unwrap_or(0) + 1;
    let (fit, val) = carve_validation(train_set, cfg.validation_fraction, cfg.seed ^ 0x5EED_0001);

    let embedder_cfg = |offset: u64| EmbedderConfig {
        num_classes,
        fps,
        seed: cfg.seed.wrapping_add(offset),
        ..cfg.embedder.clone()
    };
    let mut log = TrainLog {
        config: cfg.clone(),
        seed: cfg.seed,
        epochs: Vec::new(),
        best_epoch: None,
        steering_embedder_loss: Vec::new(),
        speed_embedder_loss: Vec::new(),
        wall_clock_s: 0.0,
    };
    let triples = |signal: fn(&Sequence) -> &[f64]| -> Result<Vec<_>> {
        fit.iter()
            .map(|s| Ok((dynamics_triples(signal(s), cfg.delta)?, s.class_label)))
            .collect()
    };
    let mut steering = None;
    if cfg.sources.contains(&ModalitySource::Steering) {
        let (e, l) = train_embedder(&triples(|s| &s.raw_steering)?, &embedder_cfg(1))?;
        log::info!("steering embedder loss {:.4} -> {:.4}", l[0], l[l.len() - 1]);
        log.steering_embedder_loss = l;
        steering = Some(e);
    }
    let mut speed = None;
    if cfg.sources.contains(&ModalitySource::Speed) {
        let (e, l) = train_embedder(&triples(|s| &s.raw_speed)?, &embedder_cfg(2))?;
        log::info!("speed embedder loss {:.4} -> {:.4}", l[0], l[l.len() - 1]);
        log.speed_embedder_loss = l;
        speed = Some(e);
    }

    // Placeholder network until the input widths are known.
    let mut pipeline = Pipeline {
        sources: cfg.sources.clone(),
        delta: cfg.delta,
        steering,
        speed,
        model: Model::new(tiny_config(num_classes), &mut ChaCha8Rng::seed_from_u64(0))?,
    };
    let fit_examples: Vec<Example> = fit
        .iter()
        .map(|s| pipeline.streams(s, s.frames))
        .collect::<Result<_>>()?;
    let val_examples: Vec<Example> = val
        .iter()
        .map(|s| pipeline.streams(s, s.frames))
        .collect::<Result<_>>()?;
    let input_dims: Vec<usize> = fit_examples[0].inputs.iter().map(|m| m.cols()).collect();

    let mut loss = LossConfig::new(num_classes, cfg.weighting);
    loss.intermediate_loss_weight = cfg.intermediate_loss_weight;
    loss.fps = fps;
    let model_cfg = ModelConfig {
        architecture: cfg.architecture.clone(),
        input_dims,
        hidden: cfg.hidden,
        num_classes,
        loss,
    };
    let mut model = Model::new(model_cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let mut best: Option<(f64, Model)> = None;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(3));
    let mut order: Vec<usize> = (0..fit_examples.len()).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &fit_examples[i]).collect();
            let step = training_step(&mut model, &batch, cfg.learning_rate, cfg.clip_norm).map_err(|e| match e {
                Error::NonFinite(msg) => Error::NonFinite(format!("epoch {epoch}, batch {b}: {msg}")),
                other => other,
            })?;
            total += step.loss * chunk.len() as f64;
        }
        let train_loss = total / fit_examples.len() as f64;
        let heldout_accuracy = if val_examples.is_empty() {
            Vec::new()
        } else {
            heldout_accuracy(&model, &val_examples, &cfg.horizons, fps)?
        };
        let heldout_mean = if heldout_accuracy.is_empty() {
            f64::NAN
        } else {
            heldout_accuracy.iter().sum::<f64>() / heldout_accuracy.len() as f64
        };
        log::info!("epoch {epoch}: loss {train_loss:.4}, held-out {heldout_accuracy:.3?}");
        if !val_examples.is_empty() && best.as_ref().is_none_or(|(m, _)| heldout_mean > *m) {
            best = Some((heldout_mean, model.clone()));
            log.best_epoch = Some(epoch);
        }
        log.epochs.push(EpochLog {
            epoch,
            train_loss,
            heldout_accuracy,
            heldout_mean,
        });
    }
    pipeline.model = best.map_or(model, |(_, m)| m);
    log.wall_clock_s = start.elapsed().as_secs_f64();
    Ok((pipeline, log))
}

fn tiny_config(num_classes: usize) -> ModelConfig {
    ModelConfig {
        architecture: Architecture::SingleStream,
        input_dims: vec![1],
        hidden: 1,
        num_classes,
        loss: LossConfig::new(num_classes, Weighting::default()),
    }
}

/// Pooled accuracy at each horizon. The network is causal, so reading the
/// full-sequence timeline at frame `⌈h·fps⌉ − 1` equals running it on the
/// truncated input.
fn heldout_accuracy(model: &Model, val: &[Example], horizons: &[f64], fps: f64) -> Result<Vec<f64>> {
    let refs: Vec<&Example> = val.iter().collect();
    let timelines = model.predict_timelines(&refs)?;
    horizons
        .iter()
        .map(|&h| {
            let n = horizon_frames(h, fps);
            let mut correct = 0;
            for (ex, tl) in val.iter().zip(&timelines) {
                if n == 0 || n > tl.frames() {
                    return Err(Error::invalid(format!("horizon {h}s exceeds the validation sequences")));
                }
                correct += usize::from(tl.predicted_class_at(n - 1) == ex.label);
            }
            Ok(correct as f64 / val.len() as f64)
        })
        .collect()
}
