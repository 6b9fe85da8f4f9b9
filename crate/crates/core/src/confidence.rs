//! Utterance-level confidence: L2-regularized logistic regression on
//! standardized decoder features, predicting whether a hypothesis is exact.
//! Scores are scaled to `[0, 1000]` and split into ten bins.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decoder::{ConfidenceFeatures, NUM_CONFIDENCE_FEATURES};
use crate::numeric::sigmoid;

pub const NUM_BINS: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum ConfidenceError {
    #[error("confidence training needs at least 2 examples of each class, got {positives} correct and {negatives} incorrect")]
    SingleClass { positives: usize, negatives: usize },
    #[error("{features} feature vectors but {targets} targets")]
    LengthMismatch { features: usize, targets: usize },
    #[error("non-finite feature in utterance {0}")]
    NonFinite(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfidenceTrainConfig {
    pub l2: f64,
    pub learning_rate: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for ConfidenceTrainConfig {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            learning_rate: 1.0,
            max_iterations: 5000,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceModel {
    pub weights: [f64; NUM_CONFIDENCE_FEATURES],
    pub bias: f64,
    pub mean: [f64; NUM_CONFIDENCE_FEATURES],
    /// Zero-variance features get a standard deviation of 1.
    pub std: [f64; NUM_CONFIDENCE_FEATURES],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRecord {
    pub id: String,
    pub score: f64,
    pub scaled_score: u32,
    pub bin: usize,
}

impl ConfidenceRecord {
    pub fn from_score(id: impl Into<String>, score: f64) -> Self {
        let score = score.clamp(0.0, 1.0);
        let scaled_score = (score * 1000.0).round() as u32;
        Self {
            id: id.into(),
            score,
            scaled_score,
            bin: bin_of(scaled_score),
        }
    }
}

/// Ten left-closed bins of width 100 over `[0, 1000]`; 1000 falls in bin 9.
pub fn bin_of(scaled_score: u32) -> usize {
    ((scaled_score / 100) as usize).min(NUM_BINS - 1)
}

/// Training trace, one loss per accepted iteration.
#[derive(Debug, Clone)]
pub struct ConfidenceFit {
    pub model: ConfidenceModel,
    pub losses: Vec<f64>,
    pub iterations: usize,
}

impl ConfidenceModel {
    /// Zero weights: every score is 0.5.
    pub fn neutral() -> Self {
        Self {
            weights: [0.0; NUM_CONFIDENCE_FEATURES],
            bias: 0.0,
            mean: [0.0; NUM_CONFIDENCE_FEATURES],
            std: [1.0; NUM_CONFIDENCE_FEATURES],
        }
    }

    fn standardize(&self, x: &[f64; NUM_CONFIDENCE_FEATURES]) -> [f64; NUM_CONFIDENCE_FEATURES] {
        std::array::from_fn(|k| (x[k] - self.mean[k]) / self.std[k])
    }

    pub fn probability(&self, features: &ConfidenceFeatures) -> f64 {
        let z = self.standardize(&features.values);
        let logit = self.bias + z.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>();
        sigmoid(logit)
    }

    pub fn score(&self, features: &ConfidenceFeatures) -> ConfidenceRecord {
        ConfidenceRecord::from_score(features.id.clone(), self.probability(features))
    }
}

fn objective(
    xs: &[[f64; NUM_CONFIDENCE_FEATURES]],
    ys: &[bool],
    w: &[f64; NUM_CONFIDENCE_FEATURES],
    b: f64,
    l2: f64,
) -> (f64, [f64; NUM_CONFIDENCE_FEATURES], f64) {
    let n = xs.len() as f64;
    let mut loss = 0.0;
    let mut gw = [0.0; NUM_CONFIDENCE_FEATURES];
    let mut gb = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let z = b + x.iter().zip(w).map(|(a, c)| a * c).sum::<f64>();
        // Stable binary cross-entropy on the logit.
        let t = if y { 1.0 } else { 0.0 };
        loss += z.max(0.0) - z * t + (-z.abs()).exp().ln_1p();
        let d = sigmoid(z) - t;
        for k in 0..NUM_CONFIDENCE_FEATURES {
            gw[k] += d * x[k];
        }
        gb += d;
    }
    loss /= n;
    gb /= n;
    for k in 0..NUM_CONFIDENCE_FEATURES {
        gw[k] = gw[k] / n + l2 * w[k];
        loss += 0.5 * l2 * w[k] * w[k];
    }
    (loss, gw, gb)
}

/// Full-batch gradient descent with step halving whenever a step would raise
/// the loss. `correct[i]` is true when utterance `i` was recognized exactly.
pub fn train_confidence(
    features: &[ConfidenceFeatures],
    correct: &[bool],
    cfg: &ConfidenceTrainConfig,
) -> Result<ConfidenceFit, ConfidenceError> {
    if features.len() != correct.len() {
        return Err(ConfidenceError::LengthMismatch {
            features: features.len(),
            targets: correct.len(),
        });
    }
    let positives = correct.iter().filter(|&&c| c).count();
    let negatives = correct.len() - positives;
    if positives < 2 || negatives < 2 {
        return Err(ConfidenceError::SingleClass { positives, negatives });
    }
    if let Some(f) = features.iter().find(|f| f.values.iter().any(|v| !v.is_finite())) {
        return Err(ConfidenceError::NonFinite(f.id.clone()));
    }
    let n = features.len() as f64;
    let mut mean = [0.0; NUM_CONFIDENCE_FEATURES];
    for f in features {
        for k in 0..NUM_CONFIDENCE_FEATURES {
            mean[k] += f.values[k] / n;
        }
    }
    let mut std = [0.0; NUM_CONFIDENCE_FEATURES];
    for f in features {
        for k in 0..NUM_CONFIDENCE_FEATURES {
            std[k] += (f.values[k] - mean[k]).powi(2) / n;
        }
    }
    for s in &mut std {
        *s = s.sqrt();
        if !(*s > 1e-12) {
            *s = 1.0;
        }
    }
    let mut model = ConfidenceModel {
        weights: [0.0; NUM_CONFIDENCE_FEATURES],
        bias: 0.0,
        mean,
        std,
    };
    let xs: Vec<_> = features.iter().map(|f| model.standardize(&f.values)).collect();

    let mut step = cfg.learning_rate;
    let (mut loss, mut gw, mut gb) = objective(&xs, correct, &model.weights, model.bias, cfg.l2);
    let mut losses = vec![loss];
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        let gnorm = (gw.iter().map(|g| g * g).sum::<f64>() + gb * gb).sqrt();
        if gnorm < cfg.tolerance || step < 1e-12 {
            break;
        }
        iterations += 1;
        let w: [f64; NUM_CONFIDENCE_FEATURES] = std::array::from_fn(|k| model.weights[k] - step * gw[k]);
        let b = model.bias - step * gb;
        let (l, ngw, ngb) = objective(&xs, correct, &w, b, cfg.l2);
        if l > loss {
            step *= 0.5;
            continue;
        }
        model.weights = w;
        model.bias = b;
        loss = l;
        gw = ngw;
        gb = ngb;
        losses.push(loss);
    }
    Ok(ConfidenceFit {
        model,
        losses,
        iterations,
    })
}

/// Empirical exact-match rate of one confidence bin.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationRow {
    pub bin: usize,
    pub count: usize,
    pub accuracy: f64,
    pub mean_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationReport {
    /// Only bins that received at least one utterance, in bin order.
    pub rows: Vec<CalibrationRow>,
    /// Whether accuracy is non-decreasing across populated bins.
    pub monotone: bool,
}

pub fn calibration_report(model: &ConfidenceModel, features: &[ConfidenceFeatures], correct: &[bool]) -> CalibrationReport {
    let mut acc = [(0usize, 0usize, 0.0f64); NUM_BINS];
    for (f, &c) in features.iter().zip(correct) {
        let r = model.score(f);
        let e = &mut acc[r.bin];
        e.0 += 1;
        e.1 += usize::from(c);
        e.2 += r.score;
    }
    let rows: Vec<CalibrationRow> = acc
        .iter()
        .enumerate()
        .filter(|(_, e)| e.0 > 0)
        .map(|(bin, e)| CalibrationRow {
            bin,
            count: e.0,
            accuracy: e.1 as f64 / e.0 as f64,
            mean_score: e.2 / e.0 as f64,
        })
        .collect();
    let monotone = rows.windows(2).all(|w| w[0].accuracy <= w[1].accuracy);
    CalibrationReport { rows, monotone }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feat(id: &str, v: [f64; NUM_CONFIDENCE_FEATURES]) -> ConfidenceFeatures {
        ConfidenceFeatures { id: id.into(), values: v }
    }

    #[test]
    fn neutral_model_scores_half() {
        let r = ConfidenceModel::neutral().score(&feat("u", [3.0; 8]));
        assert_eq!(r.score, 0.5);
        assert_eq!(r.scaled_score, 500);
        assert_eq!(r.bin, 5);
    }

    #[test]
    fn binning_rule() {
        assert_eq!(ConfidenceRecord::from_score("a", 0.0).bin, 0);
        let top = ConfidenceRecord::from_score("a", 0.9999);
        assert_eq!((top.scaled_score, top.bin), (1000, 9));
        let mid = ConfidenceRecord::from_score("a", 0.55);
        assert_eq!((mid.scaled_score, mid.bin), (550, 5));
        assert_eq!(bin_of(99), 0);
        assert_eq!(bin_of(100), 1);
        assert_eq!(bin_of(999), 9);
    }

    #[test]
    fn single_class_rejected() {
        let fs = vec![feat("a", [0.0; 8]), feat("b", [1.0; 8]), feat("c", [2.0; 8])];
        assert!(matches!(
            train_confidence(&fs, &[true, true, false], &ConfidenceTrainConfig::default()),
            Err(ConfidenceError::SingleClass { .. })
        ));
    }

    #[test]
    fn positive_weight_is_monotone() {
        let mut m = ConfidenceModel::neutral();
        m.weights[2] = 0.8;
        let lo = m.probability(&feat("a", [0.0, 0.0, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0]));
        let hi = m.probability(&feat("a", [0.0, 0.0, 0.2, 0.0, 0.0, 0.0, 0.0, 0.0]));
        assert!(hi > lo);
    }

    #[test]
    fn empty_calibration_report() {
        let r = calibration_report(&ConfidenceModel::neutral(), &[], &[]);
        assert!(r.rows.is_empty());
    }
}
