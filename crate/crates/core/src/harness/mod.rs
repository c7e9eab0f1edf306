//! Training, per-second evaluation, CSV reports and the gradient-check suite.

mod eval;
pub mod gradcheck;
mod pipeline;
mod report;
mod train;

pub use eval::{
    default_horizons, evaluate, evaluate_with, horizon_frames, time_to_first_sustained_correct, DecisionRule,
    EvalReport, DEFAULT_SUSTAIN,
};
pub use pipeline::{ModalitySource, Pipeline, SIDECAR_FILE, WEIGHTS_FILE};
pub use report::{confusion_file, read_report, write_report, ACCURACY_FILE, PER_CLASS_FILE};
pub use train::{train, train_on, EpochLog, TrainConfig, TrainLog};
