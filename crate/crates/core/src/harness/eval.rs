//! Accuracy after each observed second.

use serde::{Deserialize, Serialize};

use super::Pipeline;
use crate::datagen::Sequence;
use crate::model::PredictionTimeline;
use crate::{Error, Result};

/// Default sustain window for [`time_to_first_sustained_correct`].
pub const DEFAULT_SUSTAIN: usize = 10;

/// How a timeline becomes a class decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionRule {
    /// Argmax of the running average from frame 0.
    #[default]
    Pooled,
    /// Argmax of the last frame's own prediction.
    PerFrame,
}

impl DecisionRule {
    pub fn decide(self, timeline: &PredictionTimeline, t: usize) -> usize {
        match self {
            DecisionRule::Pooled => timeline.predicted_class_at(t),
            DecisionRule::PerFrame => timeline.frame_class_at(t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub horizons: Vec<f64>,
    pub num_classes: usize,
    pub accuracy_at: Vec<f64>,
    /// `[horizon][class]`; `None` when the test set has no sample of the class.
    pub per_class_accuracy_at: Vec<Vec<Option<f64>>>,
    /// `[horizon][actual][predicted]` counts.
    pub confusion_at: Vec<Vec<Vec<usize>>>,
    pub num_test_sequences: usize,
}

impl EvalReport {
    /// Assembles accuracies from confusion matrices.
    pub fn from_confusions(horizons: Vec<f64>, confusion_at: Vec<Vec<Vec<usize>>>) -> Result<Self> {
        if horizons.len() != confusion_at.len() || horizons.is_empty() {
            return Err(Error::invalid("need one confusion matrix per horizon"));
        }
        let num_classes = confusion_at[0].len();
        let total: usize = confusion_at[0].iter().flatten().sum();
        if total == 0 {
            return Err(Error::invalid("empty test set"));
        }
        let mut accuracy_at = Vec::new();
        let mut per_class_accuracy_at = Vec::new();
        for cm in &confusion_at {
            if cm.len() != num_classes || cm.iter().any(|r| r.len() != num_classes) {
                return Err(Error::invalid("confusion matrices must be square and equally sized"));
            }
            if cm.iter().flatten().sum::<usize>() != total {
                return Err(Error::invalid("confusion matrices disagree on the test-set size"));
            }
            let trace: usize = (0..num_classes).map(|c| cm[c][c]).sum();
            accuracy_at.push(trace as f64 / total as f64);
            per_class_accuracy_at.push(
                cm.iter()
                    .enumerate()
                    .map(|(c, row)| {
                        let n: usize = row.iter().sum();
                        (n > 0).then(|| row[c] as f64 / n as f64)
                    })
                    .collect(),
            );
        }
        Ok(EvalReport {
            horizons,
            num_classes,
            accuracy_at,
            per_class_accuracy_at,
            confusion_at,
            num_test_sequences: total,
        })
    }

    pub fn mean_accuracy(&self) -> f64 {
        self.accuracy_at.iter().sum::<f64>() / self.accuracy_at.len() as f64
    }
}

/// Frames observed after `horizon` seconds: `⌈horizon·fps⌉`.
pub fn horizon_frames(horizon: f64, fps: f64) -> usize {
    let x = horizon * fps;
    // Guards against products such as 0.1·30 landing just above an integer.
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as usize
    } else {
        x.ceil() as usize
    }
}

pub fn default_horizons() -> Vec<f64> {
    vec![1.0, 2.0, 3.0, 4.0, 5.0]
}

/// Confusion matrices and accuracies at each horizon. Every sequence is cut to
/// the horizon before the model sees it.
pub fn evaluate(pipeline: &Pipeline, test: &[&Sequence], horizons: &[f64]) -> Result<EvalReport> {
    evaluate_with(pipeline, test, horizons, DecisionRule::Pooled)
}

pub fn evaluate_with(
    pipeline: &Pipeline,
    test: &[&Sequence],
    horizons: &[f64],
    rule: DecisionRule,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    if horizons.is_empty() {
        return Err(Error::invalid("no horizons requested"));
    }
    let classes = pipeline.model.config().num_classes;
    let mut confusions = Vec::with_capacity(horizons.len());
    for &h in horizons {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::invalid(format!("horizon must be positive, got {h}")));
        }
        let mut cm = vec![vec![0usize; classes]; classes];
        let mut by_frames: std::collections::BTreeMap<usize, Vec<&Sequence>> = Default::default();
        for s in test {
            let n = horizon_frames(h, s.fps);
            if n == 0 || n > s.frames {
                return Err(Error::invalid(format!(
                    "horizon {h}s needs {n} frames but {} has {}",
                    s.id, s.frames
                )));
            }
            if s.class_label >= classes {
                return Err(Error::invalid(format!(
                    "{}: label {} out of range",
                    s.id, s.class_label
                )));
            }
            by_frames.entry(n).or_default().push(s);
        }
        for (n, seqs) in by_frames {
            let timelines = pipeline.predict_timelines(&seqs, Some(n))?;
            for (s, tl) in seqs.iter().zip(&timelines) {
                cm[s.class_label][rule.decide(tl, n - 1)] += 1;
            }
        }
        confusions.push(cm);
    }
    EvalReport::from_confusions(horizons.to_vec(), confusions)
}

/// Earliest frame from which the pooled prediction equals `label` for
/// `sustain` consecutive frames, all inside the timeline.
pub fn time_to_first_sustained_correct(timeline: &PredictionTimeline, label: usize, sustain: usize) -> Option<usize> {
    let sustain = sustain.max(1);
    let mut run = 0;
    for t in 0..timeline.frames() {
        if timeline.predicted_class_at(t) == label {
            run += 1;
            if run == sustain {
                return Some(t + 1 - sustain);
            }
        } else {
            run = 0;
        }
    }
    None
}
