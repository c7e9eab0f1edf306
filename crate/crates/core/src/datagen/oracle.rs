//! Brute-force nearest-template classifier used to verify the generator.
//!
//! The oracle knows each sequence's latents (onset, conditions, kinematic
//! amplitudes) and renders the noise-free signal every class would have
//! produced. It picks the class whose rendering is closest, with squared
//! distances scaled by each modality's noise variance. Preparatory cues are
//! not part of the renderings, so the oracle measures what the action
//! templates alone reveal.

use serde::{Deserialize, Serialize};

use super::{kinematics_at, render_features, sequence_id, GeneratorConfig, Latents, Sequence, TemplateBank};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OracleModality {
    Appearance,
    Motion,
    Steering,
    Speed,
}

impl OracleModality {
    pub const ALL: [OracleModality; 4] = [
        OracleModality::Appearance,
        OracleModality::Motion,
        OracleModality::Steering,
        OracleModality::Speed,
    ];
}

/// Frames the oracle may look at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleWindow {
    /// Frames before each sequence's onset.
    PreOnset,
    /// The whole clip.
    Full,
    /// The first `n` frames.
    Prefix(usize),
}

/// Accuracy of the oracle over `sequences`, which must be the generator's
/// output for `cfg` in order (sequence `i` has index `i`).
pub fn oracle_accuracy(
    cfg: &GeneratorConfig,
    sequences: &[Sequence],
    modalities: &[OracleModality],
    window: OracleWindow,
) -> Result<f64> {
    if sequences.is_empty() || modalities.is_empty() {
        return Err(Error::invalid("oracle needs sequences and at least one modality"));
    }
    cfg.validate()?;
    let bank = TemplateBank::new(cfg);
    let var = |sd: f64| if sd > 0.0 { sd * sd } else { 1.0 };
    let mut correct = 0usize;
    for (i, seq) in sequences.iter().enumerate() {
        if seq.id != sequence_id(cfg.scenario, i) || seq.frames != cfg.frames {
            return Err(Error::invalid(format!(
                "sequence {i} ({}) is not generator output for this config",
                seq.id
            )));
        }
        let lat = Latents::draw(cfg, i);
        let end = match window {
            OracleWindow::PreOnset => lat.onset,
            OracleWindow::Full => cfg.frames,
            OracleWindow::Prefix(n) => n.min(cfg.frames),
        };
        let mut best = (f64::INFINITY, 0);
        for k in 0..cfg.num_classes {
            let mut d = 0.0;
            for &m in modalities {
                match m {
                    OracleModality::Appearance | OracleModality::Motion => {
                        let idx = if m == OracleModality::Appearance { 0 } else { 1 };
                        let clean = render_features(cfg, &bank, &lat, idx, k, false);
                        let x = &seq.modality_features[idx];
                        let s: f64 = x.data()[..end * x.cols()]
                            .iter()
                            .zip(&clean.data()[..end * x.cols()])
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum();
                        d += s / var(cfg.noise_sigma);
                    }
                    OracleModality::Steering | OracleModality::Speed => {
                        let profile = cfg.scenario.kinematics(k);
                        let (series, sd) = if m == OracleModality::Steering {
                            (&seq.raw_steering, cfg.steering_noise)
                        } else {
                            (&seq.raw_speed, cfg.speed_noise)
                        };
                        let s: f64 = (0..end)
                            .map(|t| {
                                let (st, sp) = kinematics_at(profile, &lat, t);
                                let clean = if m == OracleModality::Steering { st } else { sp };
                                (series[t] - clean).powi(2)
                            })
                            .sum();
                        d += s / var(sd);
                    }
                }
            }
            if d < best.0 {
                best = (d, k);
            }
        }
        if best.1 == seq.class_label {
            correct += 1;
        }
    }
    Ok(correct as f64 / sequences.len() as f64)
}
