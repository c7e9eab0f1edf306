use serde::{Deserialize, Serialize};

use crate::numerics::argmax;
use crate::{Error, Matrix, Result};

/// Per-frame class distributions and their running temporal averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionTimeline {
    per_frame: Matrix,
    pooled: Matrix,
}

impl PredictionTimeline {
    /// Builds the pooled track: `pooled[t]` is the mean of `per_frame[0..=t]`.
    pub fn from_per_frame(per_frame: Matrix) -> Result<Self> {
        if per_frame.rows() == 0 || per_frame.cols() == 0 {
            return Err(Error::invalid("timeline needs at least one frame and one class"));
        }
        let mut pooled = Matrix::zeros(per_frame.rows(), per_frame.cols());
        let mut acc = vec![0.0; per_frame.cols()];
        for t in 0..per_frame.rows() {
            let n = (t + 1) as f64;
            for ((a, &p), out) in acc.iter_mut().zip(per_frame.row(t)).zip(pooled.row_mut(t)) {
                *a += p;
                *out = *a / n;
            }
        }
        Ok(Self { per_frame, pooled })
    }

    pub fn frames(&self) -> usize {
        self.per_frame.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.per_frame.cols()
    }

    pub fn per_frame(&self) -> &Matrix {
        &self.per_frame
    }

    pub fn pooled(&self) -> &Matrix {
        &self.pooled
    }

    /// Argmax of the pooled distribution at frame `t`, ties to the lowest class.
    pub fn predicted_class_at(&self, t: usize) -> usize {
        argmax(self.pooled.row(t))
    }

    /// Argmax of the raw per-frame distribution at `t`.
    pub fn frame_class_at(&self, t: usize) -> usize {
        argmax(self.per_frame.row(t))
    }

    pub fn predicted_classes(&self) -> Vec<usize> {
        (0..self.frames()).map(|t| self.predicted_class_at(t)).collect()
    }

    /// The timeline restricted to its first `frames` frames.
    pub fn prefix(&self, frames: usize) -> PredictionTimeline {
        PredictionTimeline {
            per_frame: self.per_frame.slice_rows(0, frames),
            pooled: self.pooled.slice_rows(0, frames),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_distribution_pools_to_itself() {
        let d = [0.2, 0.3, 0.5];
        let m = Matrix::from_rows(&vec![d.to_vec(); 7]).unwrap();
        let tl = PredictionTimeline::from_per_frame(m).unwrap();
        for t in 0..7 {
            for (c, &want) in d.iter().enumerate() {
                assert!((tl.pooled().get(t, c) - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn pooled_tie_resolves_to_lowest_class() {
        let m = Matrix::from_rows(&[vec![0.8, 0.2], vec![0.2, 0.8]]).unwrap();
        let tl = PredictionTimeline::from_per_frame(m).unwrap();
        assert_eq!(tl.pooled().row(1), &[0.5, 0.5]);
        assert_eq!(tl.predicted_class_at(1), 0);
        assert_eq!(tl.predicted_class_at(0), 0);
        assert_eq!(tl.frame_class_at(1), 1);
    }

    #[test]
    fn empty_timeline_is_rejected() {
        assert!(PredictionTimeline::from_per_frame(Matrix::zeros(0, 3)).is_err());
    }
}
