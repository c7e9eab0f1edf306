//! Time-weighted anticipation loss.
//!
//! For one sequence with one-hot label `y` and per-frame class distributions
//! `ŷ` (clipped to `[ε, 1−ε]`):
//!
//! ```text
//! L = −Σ_t Σ_c [ y_c log ŷ_c(t) + w(t) (1 − y_c) log(1 − ŷ_c(t)) ]
//! ```
//!
//! averaged over the sequences of a mini-batch. The first term rewards the
//! correct class at every frame; the second penalises confident wrong classes
//! with a weight that grows over the clip.
//!
//! Frame `i` (0-based) sits at `t = (i + 1) / fps` seconds, so a clip of `T`
//! frames spans `(0, T/fps]` and its last frame has `t` equal to the clip
//! duration.

use serde::{Deserialize, Serialize};

use crate::numerics::logistic;
use crate::{Error, Matrix, Result};

/// Weight applied to the wrong-class term as a function of time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Weighting {
    /// `w(t) = t / T`.
    Linear,
    /// `w(t) = e^{αt−β} / (1 + e^{αt−β})`.
    Sigmoid { alpha: f64, beta: f64 },
    /// `w(t) = 1`.
    Uniform,
}

impl Default for Weighting {
    fn default() -> Self {
        Weighting::Sigmoid { alpha: 3.0, beta: 6.0 }
    }
}

impl Weighting {
    /// Weight at `t` seconds into a clip lasting `duration` seconds.
    pub fn weight_at(&self, t: f64, duration: f64) -> Result<f64> {
        const SLACK: f64 = 1e-9;
        if !(duration > 0.0) || !(t >= -SLACK && t <= duration + SLACK) {
            return Err(Error::invalid(format!("t = {t} outside [0, {duration}]")));
        }
        Ok(match *self {
            Weighting::Linear => t / duration,
            Weighting::Sigmoid { alpha, beta } => logistic(alpha * t - beta),
            Weighting::Uniform => 1.0,
        })
    }

    /// Weights for every frame of a `frames`-long clip at `fps`.
    pub fn frame_weights(&self, frames: usize, fps: f64) -> Result<Vec<f64>> {
        let duration = frames as f64 / fps;
        (0..frames)
            .map(|i| self.weight_at((i + 1) as f64 / fps, duration))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub num_classes: usize,
    pub clip_epsilon: f64,
    pub weighting: Weighting,
    pub intermediate_loss_weight: f64,
    pub fps: f64,
}

impl LossConfig {
    pub fn new(num_classes: usize, weighting: Weighting) -> Self {
        Self {
            num_classes,
            clip_epsilon: 1e-7,
            weighting,
            intermediate_loss_weight: 1.0,
            fps: 30.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::config("num_classes must be positive"));
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon <= 0.01) {
            return Err(Error::config(format!(
                "clip_epsilon {} not in (0, 0.01]",
                self.clip_epsilon
            )));
        }
        if !(self.intermediate_loss_weight >= 0.0 && self.intermediate_loss_weight.is_finite()) {
            return Err(Error::config(format!(
                "intermediate_loss_weight must be a nonnegative number, got {}",
                self.intermediate_loss_weight
            )));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::config(format!("fps must be positive, got {}", self.fps)));
        }
        if let Weighting::Sigmoid { alpha, beta } = self.weighting {
            if !alpha.is_finite() || !beta.is_finite() {
                return Err(Error::config("sigmoid weighting needs finite alpha and beta"));
            }
        }
        Ok(())
    }
}

/// Loss of one sequence under explicit per-frame weights.
///
/// Returns the value and `∂L/∂ŷ` (zero wherever clipping is active).
pub fn weighted_anticipation_loss(
    predictions: &Matrix,
    label: usize,
    frame_weights: &[f64],
    clip_epsilon: f64,
) -> Result<(f64, Matrix)> {
    let (frames, classes) = predictions.shape();
    if label >= classes {
        return Err(Error::invalid(format!(
            "label {label} out of range for {classes} classes"
        )));
    }
    if frame_weights.len() != frames {
        return Err(Error::invalid(format!(
            "{} frame weights for {frames} frames",
            frame_weights.len()
        )));
    }
    let lo = clip_epsilon;
    let hi = 1.0 - clip_epsilon;
    let mut value = 0.0;
    let mut grad = Matrix::zeros(frames, classes);
    for t in 0..frames {
        let row = predictions.row(t);
        let sum: f64 = row.iter().sum();
        if !(sum - 1.0).abs().le(&1e-6) || row.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid(format!(
                "frame {t} is not a probability distribution (sum {sum})"
            )));
        }
        let w = frame_weights[t];
        let g = grad.row_mut(t);
        for (c, &p) in row.iter().enumerate() {
            let clipped = p.clamp(lo, hi);
            let active = p > lo && p < hi;
            if c == label {
                value -= clipped.ln();
                if active {
                    g[c] = -1.0 / p;
                }
            } else {
                value -= w * (1.0 - clipped).ln();
                if active {
                    g[c] = w / (1.0 - p);
                }
            }
        }
    }
    Ok((value, grad))
}

/// Loss of one sequence (`N = 1`) with weights derived from `cfg`.
pub fn anticipation_loss(predictions: &Matrix, label: usize, cfg: &LossConfig) -> Result<(f64, Matrix)> {
    cfg.validate()?;
    if predictions.cols() != cfg.num_classes {
        return Err(Error::invalid(format!(
            "predictions have {} classes, config says {}",
            predictions.cols(),
            cfg.num_classes
        )));
    }
    let weights = cfg.weighting.frame_weights(predictions.rows(), cfg.fps)?;
    weighted_anticipation_loss(predictions, label, &weights, cfg.clip_epsilon)
}

/// Mean loss over a mini-batch and the per-sequence gradients of that mean.
pub fn batch_anticipation_loss(batch: &[(&Matrix, usize)], cfg: &LossConfig) -> Result<(f64, Vec<Matrix>)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(batch.len());
    for &(pred, label) in batch {
        let (v, g) = anticipation_loss(pred, label, cfg)?;
        total += v;
        grads.push(g.scale(scale));
    }
    Ok((total * scale, grads))
}

/// `final + λ · intermediate`.
pub fn stagewise_total(final_loss: f64, intermediate_loss: f64, cfg: &LossConfig) -> Result<f64> {
    if !(cfg.intermediate_loss_weight >= 0.0) {
        return Err(Error::config(format!(
            "intermediate_loss_weight must be nonnegative, got {}",
            cfg.intermediate_loss_weight
        )));
    }
    Ok(final_loss + cfg.intermediate_loss_weight * intermediate_loss)
}

/// Pulls `∂L/∂p` back through a row-wise softmax `p = softmax(z)`.
pub fn softmax_backward(probs: &Matrix, d_probs: &Matrix) -> Result<Matrix> {
    if probs.shape() != d_probs.shape() {
        return Err(Error::ShapeMismatch {
            op: "softmax_backward",
            lhs: probs.shape(),
            rhs: d_probs.shape(),
        });
    }
    let mut out = Matrix::zeros(probs.rows(), probs.cols());
    for r in 0..probs.rows() {
        let p = probs.row(r);
        let g = d_probs.row(r);
        let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        for (o, (&pi, &gi)) in out.row_mut(r).iter_mut().zip(p.iter().zip(g)) {
            *o = pi * (gi - dot);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_difference_check, softmax};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn sigmoid_reference_values() {
        let w = Weighting::default();
        assert_eq!(w.weight_at(2.0, 5.0).unwrap(), 0.5);
        let direct = (-6.0f64).exp() / (1.0 + (-6.0f64).exp());
        assert!((w.weight_at(0.0, 5.0).unwrap() - direct).abs() < 1e-12);
        assert!((direct - 0.002_472_623_156_634_775).abs() < 1e-15);
        assert_eq!(Weighting::Linear.weight_at(5.0, 5.0).unwrap(), 1.0);
        assert!(w.weight_at(5.5, 5.0).is_err());
        assert!(Weighting::Linear.weight_at(-1.0, 5.0).is_err());
    }

    #[test]
    fn last_frame_sits_at_clip_duration() {
        let w = Weighting::Linear.frame_weights(150, 30.0).unwrap();
        assert_eq!(w[149], 1.0);
        assert!((w[0] - 1.0 / 150.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_two_class_frame_by_hand() {
        let pred = Matrix::row_vector(vec![0.5, 0.5]);
        let cfg = LossConfig::new(2, Weighting::Linear);
        // One frame: t = 1/fps equals the clip duration, so w = 1.
        let (v, _) = anticipation_loss(&pred, 0, &cfg).unwrap();
        assert!((v - 2.0 * LN2).abs() < 1e-12);
        assert!((v - 1.386_294_361_119_890_6).abs() < 1e-12);

        let w0 = Weighting::default().weight_at(0.0, 5.0).unwrap();
        let (v, _) = weighted_anticipation_loss(&pred, 0, &[w0], 1e-7).unwrap();
        assert!((v - (LN2 + w0 * LN2)).abs() < 1e-12);
        assert!((v - (LN2 + 0.002_472_623_156_634_775 * LN2)).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_costs_almost_nothing() {
        let (frames, classes, eps) = (10, 4, 1e-7);
        let mut pred = Matrix::zeros(frames, classes);
        for t in 0..frames {
            pred.set(t, 2, 1.0);
        }
        let mut cfg = LossConfig::new(classes, Weighting::Uniform);
        cfg.clip_epsilon = eps;
        let (v, g) = anticipation_loss(&pred, 2, &cfg).unwrap();
        assert!(v <= (classes * frames) as f64 * (1.0 - eps).ln().abs());
        // Every entry sits on a clip boundary.
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn malformed_inputs() {
        let cfg = LossConfig::new(2, Weighting::Linear);
        assert!(anticipation_loss(&Matrix::row_vector(vec![0.7, 0.7]), 0, &cfg).is_err());
        assert!(anticipation_loss(&Matrix::row_vector(vec![0.5, 0.5]), 2, &cfg).is_err());
        let mut bad = cfg.clone();
        bad.clip_epsilon = 0.5;
        assert!(anticipation_loss(&Matrix::row_vector(vec![0.5, 0.5]), 0, &bad).is_err());
    }

    #[test]
    fn stagewise_combination() {
        let mut cfg = LossConfig::new(2, Weighting::Linear);
        cfg.intermediate_loss_weight = 0.0;
        assert_eq!(stagewise_total(1.0, 0.5, &cfg).unwrap(), 1.0);
        cfg.intermediate_loss_weight = 1.0;
        assert_eq!(stagewise_total(1.0, 0.5, &cfg).unwrap(), 1.5);
        cfg.intermediate_loss_weight = -1.0;
        assert!(stagewise_total(1.0, 0.5, &cfg).is_err());
    }

    #[test]
    fn batch_mean() {
        let cfg = LossConfig::new(2, Weighting::Linear);
        let a = Matrix::row_vector(vec![0.5, 0.5]);
        let b = Matrix::row_vector(vec![0.9, 0.1]);
        let (va, ga) = anticipation_loss(&a, 0, &cfg).unwrap();
        let (vb, _) = anticipation_loss(&b, 1, &cfg).unwrap();
        let (v, g) = batch_anticipation_loss(&[(&a, 0), (&b, 1)], &cfg).unwrap();
        assert!((v - (va + vb) / 2.0).abs() < 1e-15);
        assert_eq!(g[0], ga.scale(0.5));
    }

    fn random_distributions(frames: usize, classes: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let mut m = Matrix::zeros(frames, classes);
        for t in 0..frames {
            let logits: Vec<f64> = (0..classes).map(|_| rng.random_range(-1.5..1.5)).collect();
            m.row_mut(t).copy_from_slice(&softmax(&logits));
        }
        m
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (frames, classes) = (rng.random_range(1..8), rng.random_range(2..7));
            let label = rng.random_range(0..classes);
            let pred = random_distributions(frames, classes, &mut rng);
            let weights: Vec<f64> = (0..frames).map(|_| rng.random_range(0.0..1.0)).collect();
            let (_, grad) = weighted_anticipation_loss(&pred, label, &weights, 1e-7).unwrap();
            // Perturbing single entries leaves the simplex, so the objective is
            // evaluated on the raw formula rather than the validated entry point.
            let raw = |p: &Matrix| {
                let mut v = 0.0;
                for t in 0..frames {
                    for c in 0..classes {
                        let q = p.get(t, c);
                        v -= if c == label {
                            q.ln()
                        } else {
                            weights[t] * (1.0 - q).ln()
                        };
                    }
                }
                v
            };
            let r = finite_difference_check(raw, &pred, &grad, 1e-5, 1e-6).unwrap();
            assert!(r.passed, "seed {seed}: {r:?}");
        }
    }

    #[test]
    fn softmax_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let logits = Matrix::from_vec(3, 4, (0..12).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let cfg = LossConfig::new(4, Weighting::default());
        let (_, dp) = anticipation_loss(&logits.softmax_rows(), 1, &cfg).unwrap();
        let dz = softmax_backward(&logits.softmax_rows(), &dp).unwrap();
        let r = finite_difference_check(
            |z| anticipation_loss(&z.softmax_rows(), 1, &cfg).unwrap().0,
            &logits,
            &dz,
            1e-5,
            1e-5,
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn late_mistakes_cost_more() {
        let w = Weighting::default();
        let pred = Matrix::row_vector(vec![0.2, 0.7, 0.1]);
        for (early, late) in [(0.5, 4.0), (1.9, 2.1), (0.0, 5.0)] {
            let we = w.weight_at(early, 5.0).unwrap();
            let wl = w.weight_at(late, 5.0).unwrap();
            let (le, _) = weighted_anticipation_loss(&pred, 0, &[we], 1e-7).unwrap();
            let (ll, _) = weighted_anticipation_loss(&pred, 0, &[wl], 1e-7).unwrap();
            assert!(ll > le);
        }
    }

    proptest! {
        #[test]
        fn sigmoid_is_symmetric_about_its_midpoint(d in -2.0f64..2.0) {
            let w = Weighting::default();
            let mid = 6.0 / 3.0;
            let s = w.weight_at(mid - d, 5.0).unwrap() + w.weight_at(mid + d, 5.0).unwrap();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }

        #[test]
        fn moving_toward_one_hot_lowers_the_loss(seed in any::<u64>(), lambda in 0.01f64..0.99) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (frames, classes) = (rng.random_range(1..6), rng.random_range(2..6));
            let label = rng.random_range(0..classes);
            let pred = random_distributions(frames, classes, &mut rng);
            let mut target = Matrix::zeros(frames, classes);
            for t in 0..frames {
                target.set(t, label, 1.0);
            }
            let moved = pred.scale(1.0 - lambda).add(&target.scale(lambda)).unwrap();
            let cfg = LossConfig::new(classes, Weighting::default());
            let before = anticipation_loss(&pred, label, &cfg).unwrap().0;
            let after = anticipation_loss(&moved, label, &cfg).unwrap().0;
            prop_assert!(after < before);
        }
    }

    #[test]
    fn weightings_are_monotone() {
        for w in [Weighting::Linear, Weighting::default(), Weighting::Uniform] {
            let mut prev = f64::NEG_INFINITY;
            for i in 0..=5000 {
                let t = 5.0 * i as f64 / 5000.0;
                let v = w.weight_at(t, 5.0).unwrap();
                assert!(v >= prev);
                prev = v;
            }
        }
        let s = Weighting::default();
        assert!(s.weight_at(1.0, 5.0).unwrap() < s.weight_at(1.001, 5.0).unwrap());
    }
}
