//! Minibatch training: frame-level cross-entropy (seed model) and CTC.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ctc::{ctc_loss_and_grad, LabelSequence, LogProbMatrix, LossGrad};
use crate::model::{FeatureMatrix, ModelError, ModelParams};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("utterance {0} has no frame-level labels")]
    MissingFrameLabels(String),
    #[error("utterance {id} has {labels} frame labels for {frames} frames")]
    FrameLabelLength { id: String, labels: usize, frames: usize },
    #[error("frame label {label} out of range in utterance {id}")]
    FrameLabelRange { id: String, label: usize },
    #[error("all {0} utterances have targets that cannot be aligned to their frames")]
    AllInfeasible(usize),
    #[error("training set is empty")]
    Empty,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

/// Learning-rate schedule over the whole run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine decay from `learning_rate` to zero at the last update.
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: Optimizer,
    /// Global gradient-norm clip; non-positive disables clipping.
    pub clip_norm: f64,
    pub schedule: LrSchedule,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            batch_size: 8,
            epochs: 10,
            optimizer: Optimizer::Sgd,
            clip_norm: 5.0,
            schedule: LrSchedule::Constant,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(TrainError::InvalidConfig(format!(
                "learning_rate must be non-negative and finite, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// One utterance with per-frame targets for the cross-entropy stage.
#[derive(Debug, Clone, Copy)]
pub struct CeExample<'a> {
    pub id: &'a str,
    pub features: &'a FeatureMatrix,
    pub frame_labels: Option<&'a [usize]>,
}

/// One utterance with a collapsed target for CTC training.
#[derive(Debug, Clone, Copy)]
pub struct CtcExample<'a> {
    pub id: &'a str,
    pub features: &'a FeatureMatrix,
    pub target: &'a LabelSequence,
    /// Multiplies this utterance's loss term.
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Mean training loss per epoch (per frame for CE, per utterance for CTC).
    pub loss_curve: Vec<f64>,
    /// Utterances excluded because their target cannot fit their frames.
    pub skipped: usize,
}

struct OptimizerState {
    kind: Optimizer,
    lr: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl OptimizerState {
    fn new(cfg: &TrainConfig, n: usize) -> Self {
        let adam = cfg.optimizer == Optimizer::Adam;
        Self {
            kind: cfg.optimizer,
            lr: cfg.learning_rate,
            step: 0,
            m: if adam { vec![0.0; n] } else { Vec::new() },
            v: if adam { vec![0.0; n] } else { Vec::new() },
        }
    }

    fn apply(&mut self, params: &mut [f64], grad: &[f64]) {
        match self.kind {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            Optimizer::Adam => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                self.step += 1;
                let c1 = 1.0 - B1.powi(self.step as i32);
                let c2 = 1.0 - B2.powi(self.step as i32);
                for i in 0..params.len() {
                    self.m[i] = B1 * self.m[i] + (1.0 - B1) * grad[i];
                    self.v[i] = B2 * self.v[i] + (1.0 - B2) * grad[i] * grad[i];
                    params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + EPS);
                }
            }
        }
    }
}

/// Scales `grad` down so its L2 norm is at most `max_norm`.
pub fn clip_gradient(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// Shared epoch/minibatch loop. `step` returns `(loss, normalizer)` for one
/// example after adding its gradient.
fn run_epochs<T, F>(
    mut params: ModelParams,
    examples: &[T],
    cfg: &TrainConfig,
    mut step: F,
) -> Result<(ModelParams, Vec<f64>), TrainError>
where
    F: FnMut(&ModelParams, &T, &mut [f64]) -> Result<(f64, f64), TrainError>,
{
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = OptimizerState::new(cfg, params.num_params());
    let mut grad = vec![0.0; params.num_params()];
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let total_updates = (cfg.epochs * examples.len().div_ceil(cfg.batch_size)) as f64;
    let mut update = 0usize;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut norm_sum) = (0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            grad.fill(0.0);
            for &i in batch {
                let (loss, norm) = step(&params, &examples[i], &mut grad)?;
                loss_sum += loss;
                norm_sum += norm;
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            clip_gradient(&mut grad, cfg.clip_norm);
            opt.lr = match cfg.schedule {
                LrSchedule::Constant => cfg.learning_rate,
                LrSchedule::Cosine => {
                    0.5 * cfg.learning_rate * (1.0 + (std::f64::consts::PI * update as f64 / total_updates).cos())
                }
            };
            update += 1;
            opt.apply(params.flat_mut(), &grad);
        }
        curve.push(if norm_sum > 0.0 { loss_sum / norm_sum } else { 0.0 });
    }
    Ok((params, curve))
}

/// Frame-level cross-entropy against `labels`, with the gradient on the logits.
pub fn frame_cross_entropy(post: &LogProbMatrix, labels: &[usize]) -> LossGrad {
    let mut grad: Vec<f64> = post.values().iter().map(|v| v.exp()).collect();
    let z = post.num_labels();
    let mut loss = 0.0;
    for (t, &l) in labels.iter().enumerate() {
        loss -= post.get(t, l);
        grad[t * z + l] -= 1.0;
    }
    LossGrad { loss, grad }
}

/// Cross-entropy training on generator-provided frame labels.
pub fn train_ce(params: ModelParams, data: &[CeExample<'_>], cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    let num_labels = params.config().num_labels;
    for ex in data {
        let labels = ex
            .frame_labels
            .ok_or_else(|| TrainError::MissingFrameLabels(ex.id.to_string()))?;
        if labels.len() != ex.features.frames() {
            return Err(TrainError::FrameLabelLength {
                id: ex.id.to_string(),
                labels: labels.len(),
                frames: ex.features.frames(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_labels) {
            return Err(TrainError::FrameLabelRange {
                id: ex.id.to_string(),
                label,
            });
        }
    }
    if data.is_empty() {
        return Err(TrainError::Empty);
    }
    let (params, loss_curve) = run_epochs(params, data, cfg, |p, ex, grad| {
        let labels = ex.frame_labels.expect("checked above");
        let loss = p.accumulate_gradient(ex.features, grad, |post| Ok(frame_cross_entropy(post, labels)))?;
        Ok((loss, labels.len() as f64))
    })?;
    Ok(TrainOutcome {
        params,
        loss_curve,
        skipped: 0,
    })
}

/// CTC training. Utterances whose targets cannot be aligned are skipped and counted.
pub fn train_ctc(
    params: ModelParams,
    data: &[CtcExample<'_>],
    blank: usize,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    if data.is_empty() {
        return Err(TrainError::Empty);
    }
    let usable: Vec<CtcExample<'_>> = data
        .iter()
        .filter(|ex| ex.features.frames() > 0 && ex.target.min_frames() <= ex.features.frames())
        .copied()
        .collect();
    let skipped = data.len() - usable.len();
    if usable.is_empty() {
        return Err(TrainError::AllInfeasible(data.len()));
    }
    let (params, loss_curve) = run_epochs(params, &usable, cfg, |p, ex, grad| {
        let weight = ex.weight;
        let loss = p.accumulate_gradient(ex.features, grad, |post| {
            let mut lg = ctc_loss_and_grad(post, ex.target, blank).map_err(ModelError::from)?;
            if weight != 1.0 {
                lg.loss *= weight;
                lg.grad.iter_mut().for_each(|g| *g *= weight);
            }
            Ok(lg)
        })?;
        Ok((loss, 1.0))
    })?;
    Ok(TrainOutcome {
        params,
        loss_curve,
        skipped,
    })
}

/// Summed (weighted) CTC loss of a model over a dataset; infeasible targets are skipped.
pub fn dataset_ctc_loss(params: &ModelParams, data: &[CtcExample<'_>], blank: usize) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for ex in data {
        if ex.target.min_frames() > ex.features.frames() {
            continue;
        }
        let post = params.forward(ex.features)?;
        let lg = ctc_loss_and_grad(&post, ex.target, blank).map_err(ModelError::from)?;
        total += ex.weight * lg.loss;
    }
    Ok(total)
}
