//! Knowledge distillation for CTC students.
//!
//! The sequence-level objective sums teacher-weighted student log-likelihoods
//! over every label sequence. That sum is replaced by the single sequence the
//! teacher's best path collapses to, so the student's loss on an unlabelled
//! utterance is the ordinary CTC loss `-ln P_S(collapse(argmax_t P_T) | X)`.
//! Pseudo-labelled utterances then join the labelled ones in a single CTC
//! training set whose loss is the plain sum over both parts.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ctc::{LabelSequence, LogProbMatrix, LossGrad};
use crate::decoder::greedy_decode;
use crate::model::{FeatureMatrix, ModelError, ModelParams};
use crate::train::CtcExample;

#[derive(Debug, Error)]
pub enum KdError {
    #[error("teacher and student posteriors differ in shape: {teacher:?} vs {student:?}")]
    ShapeMismatch {
        teacher: (usize, usize),
        student: (usize, usize),
    },
    #[error("training set is empty")]
    EmptyUnion,
    #[error("utterance {0} is in both the labelled and unlabelled pools")]
    OverlappingPools(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Which model produced a pseudo-label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Teacher,
    SelfTraining,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Teacher => "teacher",
            Provenance::SelfTraining => "self-training",
        }
    }
}

/// One line of the pseudo-label manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabeledUtterance {
    pub id: String,
    pub pseudo_label: LabelSequence,
    pub teacher_path_log_score: f64,
    pub provenance: Provenance,
}

/// Borrowed view of an utterance to be labelled.
#[derive(Debug, Clone, Copy)]
pub struct UnlabelledRef<'a> {
    pub id: &'a str,
    pub features: &'a FeatureMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabels {
    pub labels: Vec<PseudoLabeledUtterance>,
    /// Utterances whose best path was all blank.
    pub dropped: usize,
}

fn label_with(
    model: &ModelParams,
    utterances: &[UnlabelledRef<'_>],
    blank: usize,
    provenance: Provenance,
) -> Result<PseudoLabels, KdError> {
    let mut labels = Vec::with_capacity(utterances.len());
    let mut dropped = 0;
    for u in utterances {
        let post = model.forward(u.features)?;
        match label_posteriors(u.id, &post, blank, provenance) {
            Some(l) => labels.push(l),
            None => dropped += 1,
        }
    }
    Ok(PseudoLabels { labels, dropped })
}

/// Pseudo-label of one posterior matrix, or `None` when the best path is all blank.
pub fn label_posteriors(id: &str, post: &LogProbMatrix, blank: usize, provenance: Provenance) -> Option<PseudoLabeledUtterance> {
    let decode = greedy_decode(post, blank);
    if decode.hypothesis.is_empty() {
        return None;
    }
    Some(PseudoLabeledUtterance {
        id: id.to_string(),
        pseudo_label: decode.hypothesis,
        teacher_path_log_score: decode.path_log_score,
        provenance,
    })
}

/// Teacher pseudo-labels: per-frame argmax of the teacher posteriors, collapsed.
/// Empty results are dropped and counted.
pub fn generate_pseudo_labels(
    teacher: &ModelParams,
    utterances: &[UnlabelledRef<'_>],
    blank: usize,
) -> Result<PseudoLabels, KdError> {
    label_with(teacher, utterances, blank, Provenance::Teacher)
}

/// Same procedure driven by a student-capacity model trained on labelled data only.
pub fn self_training_labels(
    model: &ModelParams,
    utterances: &[UnlabelledRef<'_>],
    blank: usize,
) -> Result<PseudoLabels, KdError> {
    label_with(model, utterances, blank, Provenance::SelfTraining)
}

/// Frame-level distillation: `-sum_t sum_k P_T(k|t) ln P_S(k|t)`, with the
/// gradient `softmax(student logits) - P_T` per frame.
pub fn frame_kd_loss(teacher: &LogProbMatrix, student: &LogProbMatrix) -> Result<LossGrad, KdError> {
    let t_shape = (teacher.frames(), teacher.num_labels());
    let s_shape = (student.frames(), student.num_labels());
    if t_shape != s_shape {
        return Err(KdError::ShapeMismatch {
            teacher: t_shape,
            student: s_shape,
        });
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(teacher.values().len());
    for (&tl, &sl) in teacher.values().iter().zip(student.values()) {
        let pt = tl.exp();
        if pt > 0.0 {
            loss -= pt * sl;
        }
        grad.push(sl.exp() - pt);
    }
    Ok(LossGrad { loss, grad })
}

/// A labelled utterance in the pool.
#[derive(Debug, Clone, Copy)]
pub struct LabelledRef<'a> {
    pub id: &'a str,
    pub features: &'a FeatureMatrix,
    pub reference: &'a LabelSequence,
}

/// Labelled data, raw unlabelled data, and pseudo-labels for (part of) the latter.
#[derive(Debug, Clone)]
pub struct DataPool<'a> {
    pub labelled: Vec<LabelledRef<'a>>,
    pub unlabelled: Vec<UnlabelledRef<'a>>,
    pub pseudo_labelled: Vec<PseudoLabeledUtterance>,
}

impl<'a> DataPool<'a> {
    pub fn new(labelled: Vec<LabelledRef<'a>>, unlabelled: Vec<UnlabelledRef<'a>>) -> Result<Self, KdError> {
        let ids: std::collections::HashSet<&str> = labelled.iter().map(|l| l.id).collect();
        if let Some(u) = unlabelled.iter().find(|u| ids.contains(u.id)) {
            return Err(KdError::OverlappingPools(u.id.to_string()));
        }
        Ok(Self {
            labelled,
            unlabelled,
            pseudo_labelled: Vec::new(),
        })
    }
}

/// Labelled utterances followed by pseudo-labelled ones, unshuffled. Pseudo
/// labels are matched to unlabelled features by id; unmatched ids are ignored.
pub fn concatenated_training_set<'p>(pool: &'p DataPool<'_>, unlabelled_weight: f64) -> Vec<CtcExample<'p>> {
    let by_id: std::collections::HashMap<&str, &FeatureMatrix> =
        pool.unlabelled.iter().map(|u| (u.id, u.features)).collect();
    let mut out: Vec<CtcExample<'p>> = pool
        .labelled
        .iter()
        .map(|l| CtcExample {
            id: l.id,
            features: l.features,
            target: l.reference,
            weight: 1.0,
        })
        .collect();
    for p in &pool.pseudo_labelled {
        if let Some(&features) = by_id.get(p.id.as_str()) {
            out.push(CtcExample {
                id: &p.id,
                features,
                target: &p.pseudo_label,
                weight: unlabelled_weight,
            });
        }
    }
    out
}

/// The combined labelled + pseudo-labelled CTC set, interleaved by a seeded
/// shuffle. `unlabelled_weight` scales the pseudo-labelled loss terms; 1.0
/// gives the plain sum.
pub fn ssl_training_set<'p>(
    pool: &'p DataPool<'_>,
    unlabelled_weight: f64,
    seed: u64,
) -> Result<Vec<CtcExample<'p>>, KdError> {
    let mut out = concatenated_training_set(pool, unlabelled_weight);
    if out.is_empty() {
        return Err(KdError::EmptyUnion);
    }
    out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(out)
}
