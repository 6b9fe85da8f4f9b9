//! Greedy (best-path) and prefix beam decoding, and the utterance-level
//! features the confidence model consumes.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::ctc::{collapse, LabelSequence, LogProbMatrix, Path};
use crate::numeric::{argmax, log_add};

/// Number of entries in [`ConfidenceFeatures::values`].
pub const NUM_CONFIDENCE_FEATURES: usize = 8;

/// Human-readable names in feature order.
pub const CONFIDENCE_FEATURE_NAMES: [&str; NUM_CONFIDENCE_FEATURES] = [
    "mean_max_log_posterior",
    "best_sequence_log_score",
    "nbest_gap",
    "nbest_depth",
    "hypothesis_length",
    "frames",
    "blank_fraction",
    "mean_entropy",
];

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    /// Per-frame argmax labels.
    pub best_path: Path,
    /// `collapse(best_path)`.
    pub hypothesis: LabelSequence,
    /// Sum over frames of the per-frame maximum log-posterior.
    pub path_log_score: f64,
    /// Distinct label sequences with their log-scores, best first. Empty for
    /// greedy decoding.
    pub nbest: Vec<(LabelSequence, f64)>,
}

/// Best-path decoding: per-frame argmax (ties to the lowest index), then collapse.
pub fn greedy_decode(post: &LogProbMatrix, blank: usize) -> DecodeResult {
    let mut frames = Vec::with_capacity(post.frames());
    let mut score = 0.0;
    for row in post.rows() {
        let k = argmax(row);
        score += row[k];
        frames.push(k);
    }
    let hypothesis = collapse(&frames, blank);
    DecodeResult {
        best_path: Path::from_frames(frames),
        hypothesis,
        path_log_score: score,
        nbest: Vec::new(),
    }
}

#[derive(Clone, Copy)]
struct PrefixScore {
    blank: f64,
    non_blank: f64,
}

impl PrefixScore {
    const EMPTY: Self = Self {
        blank: f64::NEG_INFINITY,
        non_blank: f64::NEG_INFINITY,
    };

    fn total(self) -> f64 {
        log_add(self.blank, self.non_blank)
    }
}

fn rank(beam: &mut Vec<(Vec<usize>, PrefixScore)>) {
    beam.sort_by(|a, b| b.1.total().total_cmp(&a.1.total()).then_with(|| a.0.cmp(&b.0)));
}

/// CTC prefix beam search without a language model. With a beam at least as
/// wide as the number of reachable prefixes the scores are exact sequence
/// log-probabilities.
pub fn prefix_beam_decode(post: &LogProbMatrix, blank: usize, beam_width: usize) -> DecodeResult {
    let beam_width = beam_width.max(1);
    let mut greedy = greedy_decode(post, blank);
    let mut beam: Vec<(Vec<usize>, PrefixScore)> = vec![(
        Vec::new(),
        PrefixScore {
            blank: 0.0,
            non_blank: f64::NEG_INFINITY,
        },
    )];
    for row in post.rows() {
        let mut next: HashMap<Vec<usize>, PrefixScore> = HashMap::with_capacity(beam.len() * row.len());
        for (prefix, score) in &beam {
            let total = score.total();
            // Stay on the same prefix by emitting blank.
            let entry = next.entry(prefix.clone()).or_insert(PrefixScore::EMPTY);
            entry.blank = log_add(entry.blank, total + row[blank]);
            let last = prefix.last().copied();
            for (k, &lp) in row.iter().enumerate() {
                if k == blank {
                    continue;
                }
                if Some(k) == last {
                    // Repeat without a blank collapses into the same prefix.
                    let entry = next.get_mut(prefix).expect("inserted above");
                    entry.non_blank = log_add(entry.non_blank, score.non_blank + lp);
                    // A new copy of `k` requires the previous frame to end in blank.
                    let mut extended = prefix.clone();
                    extended.push(k);
                    let entry = next.entry(extended).or_insert(PrefixScore::EMPTY);
                    entry.non_blank = log_add(entry.non_blank, score.blank + lp);
                } else {
                    let mut extended = prefix.clone();
                    extended.push(k);
                    let entry = next.entry(extended).or_insert(PrefixScore::EMPTY);
                    entry.non_blank = log_add(entry.non_blank, total + lp);
                }
            }
        }
        // Zero-probability prefixes never recover; dropping them keeps scores finite.
        beam = next.into_iter().filter(|(_, s)| s.total() > f64::NEG_INFINITY).collect();
        rank(&mut beam);
        beam.truncate(beam_width);
    }
    greedy.nbest = beam
        .into_iter()
        .map(|(p, s)| (LabelSequence::from_symbols(p), s.total()))
        .collect();
    greedy
}

/// Decoder-derived utterance features, in the fixed order of
/// [`CONFIDENCE_FEATURE_NAMES`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceFeatures {
    pub id: String,
    pub values: [f64; NUM_CONFIDENCE_FEATURES],
}

/// Builds the 8-feature vector from a posterior matrix and its decode result.
/// If `decode` carries no n-best list the greedy path score stands in for the
/// 1-best sequence score.
pub fn extract_confidence_features(
    id: impl Into<String>,
    post: &LogProbMatrix,
    decode: &DecodeResult,
    blank: usize,
) -> ConfidenceFeatures {
    let frames = post.frames();
    let n = frames.max(1) as f64;
    let mut entropy = 0.0;
    for row in post.rows() {
        entropy -= row
            .iter()
            .filter(|v| v.is_finite())
            .map(|&lp| lp.exp() * lp)
            .sum::<f64>();
    }
    let blank_frames = decode.best_path.frames().iter().filter(|&&l| l == blank).count();
    let best = decode.nbest.first().map_or(decode.path_log_score, |e| e.1);
    let gap = match (decode.nbest.first(), decode.nbest.get(1)) {
        (Some(a), Some(b)) => a.1 - b.1,
        _ => 0.0,
    };
    let values = [
        decode.path_log_score / n,
        best,
        gap,
        decode.nbest.len() as f64,
        decode.hypothesis.len() as f64,
        frames as f64,
        blank_frames as f64 / n,
        entropy / n,
    ];
    ConfidenceFeatures { id: id.into(), values }
}
