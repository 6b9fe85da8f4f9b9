//! Training, decoding and scoring steps shared by the subcommands and the grid.

use std::collections::HashMap;

use ctcssl::corpus::SyntheticUtterance;
use ctcssl::decoder::{extract_confidence_features, greedy_decode, prefix_beam_decode, ConfidenceFeatures};
use ctcssl::kd::{ssl_training_set, DataPool, LabelledRef, PseudoLabeledUtterance, UnlabelledRef};
use ctcssl::metrics::{wer, EvalItem, EvalReport};
use ctcssl::train::{train_ce, train_ctc, CeExample, CtcExample, TrainConfig, TrainOutcome};
use ctcssl::{LabelSequence, ModelConfig, ModelParams};

use crate::error::CliError;

/// Derives an independent seed for a named sub-stream.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn ce_examples(utts: &[SyntheticUtterance]) -> Vec<CeExample<'_>> {
    utts.iter()
        .map(|u| CeExample {
            id: u.id(),
            features: &u.features,
            frame_labels: Some(&u.frame_labels),
        })
        .collect()
}

pub fn ctc_examples(utts: &[SyntheticUtterance]) -> Vec<CtcExample<'_>> {
    utts.iter()
        .map(|u| CtcExample {
            id: u.id(),
            features: &u.features,
            target: &u.reference,
            weight: 1.0,
        })
        .collect()
}

/// Result of the cross-entropy then CTC staging.
pub struct StagedModel {
    /// Parameters after the cross-entropy stage.
    pub ce_params: ModelParams,
    pub params: ModelParams,
    pub ce_curve: Vec<f64>,
    pub ctc_curve: Vec<f64>,
    pub skipped: usize,
}

pub fn train_staged(
    config: ModelConfig,
    labelled: &[SyntheticUtterance],
    blank: usize,
    ce: &TrainConfig,
    ctc: &TrainConfig,
) -> Result<StagedModel, CliError> {
    let init = ModelParams::init(config).map_err(|e| CliError::Config(e.to_string()))?;
    let ce_out = train_ce(init, &ce_examples(labelled), ce)?;
    let ctc_out = train_ctc(ce_out.params.clone(), &ctc_examples(labelled), blank, ctc)?;
    Ok(StagedModel {
        ce_params: ce_out.params,
        params: ctc_out.params,
        ce_curve: ce_out.loss_curve,
        ctc_curve: ctc_out.loss_curve,
        skipped: ctc_out.skipped,
    })
}

/// Epoch count giving at least `min_updates` minibatch updates.
pub fn epochs_for(cfg: &TrainConfig, examples: usize, min_updates: usize) -> usize {
    let per_epoch = examples.div_ceil(cfg.batch_size).max(1);
    cfg.epochs.max(min_updates.div_ceil(per_epoch))
}

/// CTC training of `init` on labelled data plus the given pseudo-labels.
pub fn train_student(
    init: &ModelParams,
    labelled: &[SyntheticUtterance],
    unlabelled: &[SyntheticUtterance],
    pseudo: Vec<PseudoLabeledUtterance>,
    blank: usize,
    cfg: &TrainConfig,
    min_updates: usize,
    unlabelled_weight: f64,
) -> Result<TrainOutcome, CliError> {
    let lab = labelled
        .iter()
        .map(|u| LabelledRef {
            id: u.id(),
            features: &u.features,
            reference: &u.reference,
        })
        .collect();
    let un = unlabelled
        .iter()
        .map(|u| UnlabelledRef {
            id: u.id(),
            features: &u.features,
        })
        .collect();
    let mut pool = DataPool::new(lab, un)?;
    pool.pseudo_labelled = pseudo;
    let set = ssl_training_set(&pool, unlabelled_weight, cfg.seed)?;
    let cfg = TrainConfig {
        epochs: epochs_for(cfg, set.len(), min_updates),
        ..cfg.clone()
    };
    Ok(train_ctc(init.clone(), &set, blank, &cfg)?)
}

pub fn greedy_hypotheses(model: &ModelParams, utts: &[SyntheticUtterance], blank: usize) -> Result<HashMap<String, LabelSequence>, CliError> {
    utts.iter()
        .map(|u| {
            let post = model.forward(&u.features).map_err(|e| CliError::Data(e.to_string()))?;
            Ok((u.id().to_string(), greedy_decode(&post, blank).hypothesis))
        })
        .collect()
}

pub fn evaluate(model: &ModelParams, utts: &[SyntheticUtterance], blank: usize) -> Result<EvalReport, CliError> {
    let hyps = greedy_hypotheses(model, utts, blank)?;
    score(utts, &hyps)
}

pub fn score(utts: &[SyntheticUtterance], hyps: &HashMap<String, LabelSequence>) -> Result<EvalReport, CliError> {
    Ok(wer(
        utts.iter().map(|u| EvalItem {
            id: u.id(),
            domain: &u.info.domain,
            reference: &u.reference,
        }),
        hyps,
    )?)
}

/// Beam-decodes every utterance and returns its confidence features and
/// 1-best hypothesis.
pub fn confidence_inputs(
    model: &ModelParams,
    utts: &[SyntheticUtterance],
    blank: usize,
    beam_width: usize,
) -> Result<Vec<(ConfidenceFeatures, LabelSequence)>, CliError> {
    utts.iter()
        .map(|u| {
            let post = model.forward(&u.features).map_err(|e| CliError::Data(e.to_string()))?;
            let decode = prefix_beam_decode(&post, blank, beam_width);
            let feats = extract_confidence_features(u.id(), &post, &decode, blank);
            Ok((feats, decode.hypothesis))
        })
        .collect()
}
