use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Daytime, Sequence, Weather};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    /// Seeded per-class shuffle, then a `train_fraction` cut.
    Random,
    /// Day trains, night tests.
    Daytime,
    /// Clear trains, adverse tests.
    Weather,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub kind: SplitKind,
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn random(seed: u64) -> Self {
        SplitSpec {
            kind: SplitKind::Random,
            train_fraction: 0.7,
            seed,
        }
    }

    pub fn of_kind(kind: SplitKind, seed: u64) -> Self {
        SplitSpec {
            kind,
            ..SplitSpec::random(seed)
        }
    }
}

/// Indices into the partitioned sequence list, each in ascending order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Partitions `sequences` into disjoint, exhaustive train and test sets.
pub fn split(sequences: &[Sequence], spec: &SplitSpec) -> Result<Split> {
    if sequences.is_empty() {
        return Err(Error::invalid("cannot split an empty dataset"));
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    match spec.kind {
        SplitKind::Random => {
            if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
                return Err(Error::config(format!(
                    "train_fraction must lie in (0, 1), got {}",
                    spec.train_fraction
                )));
            }
            let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (i, s) in sequences.iter().enumerate() {
                by_class.entry(s.class_label).or_default().push(i);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            for (_, mut members) in by_class {
                members.shuffle(&mut rng);
                let cut = (members.len() as f64 * spec.train_fraction).round() as usize;
                train.extend_from_slice(&members[..cut]);
                test.extend_from_slice(&members[cut..]);
            }
        }
        SplitKind::Daytime | SplitKind::Weather => {
            let is_train = |s: &Sequence| match spec.kind {
                SplitKind::Daytime => s.metadata.daytime == Daytime::Day,
                _ => s.metadata.weather == Weather::Clear,
            };
            for (i, s) in sequences.iter().enumerate() {
                if is_train(s) {
                    train.push(i);
                } else {
                    test.push(i);
                }
            }
            if train.is_empty() || test.is_empty() {
                let tag = if spec.kind == SplitKind::Daytime {
                    "day and night"
                } else {
                    "clear and adverse"
                };
                return Err(Error::invalid(format!(
                    "{tag} sequences are both required for this split"
                )));
            }
        }
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}
