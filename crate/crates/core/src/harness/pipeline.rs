//! Sequence → model input streams → prediction timeline.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::Sequence;
use crate::descriptors::{dynamics_triples, DynamicsEmbedder, EmbedderConfig};
use crate::layers::{read_mmw1, write_mmw1, NamedTensor};
use crate::model::{Example, Model, ModelConfig, PredictionTimeline};
use crate::{Error, Matrix, Result};

pub const WEIGHTS_FILE: &str = "model.mmw";
pub const SIDECAR_FILE: &str = "model.json";

/// Where a model input stream comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModalitySource {
    /// A precomputed feature block (0 = appearance, 1 = motion).
    Feature(usize),
    /// Embedded steering dynamics.
    Steering,
    /// Embedded speed dynamics.
    Speed,
}

impl ModalitySource {
    /// Appearance, motion, steering, speed.
    pub fn all() -> Vec<ModalitySource> {
        vec![
            ModalitySource::Feature(0),
            ModalitySource::Feature(1),
            ModalitySource::Steering,
            ModalitySource::Speed,
        ]
    }

    pub fn name(self) -> String {
        match self {
            ModalitySource::Feature(0) => "appearance".into(),
            ModalitySource::Feature(1) => "motion".into(),
            ModalitySource::Feature(i) => format!("feature{i}"),
            ModalitySource::Steering => "steering".into(),
            ModalitySource::Speed => "speed".into(),
        }
    }
}

/// Frozen dynamics embedders plus the classifier network.
#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    pub sources: Vec<ModalitySource>,
    /// Frame gap of the dynamics triples.
    pub delta: usize,
    pub steering: Option<DynamicsEmbedder>,
    pub speed: Option<DynamicsEmbedder>,
    pub model: Model,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    format: String,
    sources: Vec<ModalitySource>,
    delta: usize,
    model: ModelConfig,
    steering_embedder: Option<EmbedderConfig>,
    speed_embedder: Option<EmbedderConfig>,
}

const SIDECAR_FORMAT: &str = "mmlstm-pipeline-1";

impl Pipeline {
    /// Model input streams for the first `frames` frames of `seq`.
    ///
    /// Only those frames are read, so nothing later can leak into the result.
    pub fn streams(&self, seq: &Sequence, frames: usize) -> Result<Example> {
        if frames == 0 || frames > seq.frames {
            return Err(Error::invalid(format!(
                "{}: cannot take {frames} frames of a {}-frame sequence",
                seq.id, seq.frames
            )));
        }
        let embed = |e: &Option<DynamicsEmbedder>, signal: &[f64], what: &str| {
            let e = e
                .as_ref()
                .ok_or_else(|| Error::config(format!("pipeline has no {what} embedder")))?;
            e.embed(&dynamics_triples(&signal[..frames], self.delta)?)
        };
        let inputs = self
            .sources
            .iter()
            .map(|s| match *s {
                ModalitySource::Feature(i) => seq
                    .modality_features
                    .get(i)
                    .map(|m| m.slice_rows(0, frames))
                    .ok_or_else(|| Error::invalid(format!("{}: no feature block {i}", seq.id))),
                ModalitySource::Steering => embed(&self.steering, &seq.raw_steering, "steering"),
                ModalitySource::Speed => embed(&self.speed, &seq.raw_speed, "speed"),
            })
            .collect::<Result<_>>()?;
        Ok(Example {
            inputs,
            label: seq.class_label,
        })
    }

    pub fn predict_timeline(&self, seq: &Sequence) -> Result<PredictionTimeline> {
        Ok(self.predict_timelines(&[seq], None)?.remove(0))
    }

    /// Timelines over the first `frames` frames (all frames when `None`).
    pub fn predict_timelines(&self, seqs: &[&Sequence], frames: Option<usize>) -> Result<Vec<PredictionTimeline>> {
        let examples: Vec<Example> = seqs
            .iter()
            .map(|s| self.streams(s, frames.unwrap_or(s.frames)))
            .collect::<Result<_>>()?;
        let refs: Vec<&Example> = examples.iter().collect();
        self.model.predict_timelines(&refs)
    }

    fn tensors(&self) -> Vec<NamedTensor> {
        let mut out: Vec<NamedTensor> = self
            .model
            .named_params()
            .into_iter()
            .map(|(n, m)| (format!("model.{n}"), m.clone()))
            .collect();
        if let Some(e) = &self.steering {
            out.extend(e.named_tensors("steering_embedder"));
        }
        if let Some(e) = &self.speed {
            out.extend(e.named_tensors("speed_embedder"));
        }
        out
    }

    /// Writes `model.mmw` and the `model.json` sidecar into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let tensors = self.tensors();
        let refs: Vec<(String, &Matrix)> = tensors.iter().map(|(n, m)| (n.clone(), m)).collect();
        write_mmw1(dir.join(WEIGHTS_FILE), &refs)?;
        let sidecar = Sidecar {
            format: SIDECAR_FORMAT.into(),
            sources: self.sources.clone(),
            delta: self.delta,
            model: self.model.config().clone(),
            steering_embedder: self.steering.as_ref().map(|e| e.config().clone()),
            speed_embedder: self.speed.as_ref().map(|e| e.config().clone()),
        };
        let path = dir.join(SIDECAR_FILE);
        fs::write(&path, serde_json::to_string_pretty(&sidecar)? + "\n").map_err(|e| Error::io(&path, e))
    }

    /// Reads a pipeline written by [`Pipeline::save`]. Parameters come back
    /// rounded to `f32`.
    pub fn load(dir: impl AsRef<Path>) -> Result<Pipeline> {
        let dir = dir.as_ref();
        let path = dir.join(SIDECAR_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let sidecar: Sidecar = serde_json::from_str(&text)?;
        if sidecar.format != SIDECAR_FORMAT {
            return Err(Error::Malformed {
                path,
                reason: format!("unknown format {:?}", sidecar.format),
            });
        }
        let tensors = read_mmw1(dir.join(WEIGHTS_FILE))?;
        let model_tensors: Vec<NamedTensor> = tensors
            .iter()
            .filter_map(|(n, m)| n.strip_prefix("model.").map(|r| (r.to_string(), m.clone())))
            .collect();
        // Initial values are overwritten by the stored tensors.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = Model::new(sidecar.model, &mut rng)?;
        model.load_tensors(&model_tensors)?;
        let embedder = |cfg: Option<EmbedderConfig>, prefix: &str| {
            cfg.map(|c| DynamicsEmbedder::from_tensors(&c, prefix, &tensors))
                .transpose()
        };
        Ok(Pipeline {
            sources: sidecar.sources,
            delta: sidecar.delta,
            steering: embedder(sidecar.steering_embedder, "steering_embedder")?,
            speed: embedder(sidecar.speed_embedder, "speed_embedder")?,
            model,
        })
    }
}
