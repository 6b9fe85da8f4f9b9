//! Edit distance, word error rate and relative WER reduction.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;
use thiserror::Error;

use crate::ctc::LabelSequence;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no hypothesis for utterance {0}")]
    MissingHypothesis(String),
    #[error("baseline WER is zero; relative reduction is undefined")]
    ZeroBaseline,
}

/// Substitution, deletion and insertion counts of one alignment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EditCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
}

impl EditCounts {
    pub fn total(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

impl std::ops::AddAssign for EditCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.substitutions += rhs.substitutions;
        self.deletions += rhs.deletions;
        self.insertions += rhs.insertions;
    }
}

/// Unit-cost Levenshtein alignment. Among minimum-cost alignments the one with
/// the most substitutions (fewest insert/delete pairs) is reported.
pub fn edit_distance(reference: &LabelSequence, hypothesis: &LabelSequence) -> EditCounts {
    let (r, h) = (reference.symbols(), hypothesis.symbols());
    let cols = h.len() + 1;
    // Each cell holds (total edits, insertions + deletions), compared lexicographically.
    let mut prev: Vec<(usize, usize)> = (0..cols).map(|j| (j, j)).collect();
    let mut cur = vec![(0usize, 0usize); cols];
    for i in 1..=r.len() {
        cur[0] = (i, i);
        for j in 1..cols {
            let diag = if r[i - 1] == h[j - 1] {
                prev[j - 1]
            } else {
                (prev[j - 1].0 + 1, prev[j - 1].1)
            };
            let del = (prev[j].0 + 1, prev[j].1 + 1);
            let ins = (cur[j - 1].0 + 1, cur[j - 1].1 + 1);
            cur[j] = diag.min(del).min(ins);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let (total, indels) = prev[cols - 1];
    // deletions - insertions is fixed by the length difference.
    let diff = r.len() as isize - h.len() as isize;
    let deletions = ((indels as isize + diff) / 2) as usize;
    let insertions = indels - deletions;
    EditCounts {
        substitutions: total - indels,
        deletions,
        insertions,
    }
}

/// Micro-averaged WER report with a per-domain breakdown.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    /// Percent.
    pub wer: f64,
    pub per_domain: BTreeMap<String, f64>,
    pub utterances: usize,
    pub reference_tokens: usize,
    pub edits: EditCounts,
    pub domain_counts: BTreeMap<String, DomainCounts>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DomainCounts {
    pub utterances: usize,
    pub reference_tokens: usize,
    pub edits: EditCounts,
}

/// One scored reference.
#[derive(Debug, Clone)]
pub struct EvalItem<'a> {
    pub id: &'a str,
    pub domain: &'a str,
    pub reference: &'a LabelSequence,
}

fn percent(edits: usize, tokens: usize) -> f64 {
    if tokens == 0 {
        if edits == 0 {
            0.0
        } else {
            100.0 * edits as f64
        }
    } else {
        100.0 * edits as f64 / tokens as f64
    }
}

/// WER over `items`, looking up each hypothesis by utterance id.
pub fn wer<'a>(
    items: impl IntoIterator<Item = EvalItem<'a>>,
    hypotheses: &HashMap<String, LabelSequence>,
) -> Result<EvalReport, MetricsError> {
    let mut edits = EditCounts::default();
    let mut tokens = 0;
    let mut utterances = 0;
    let mut domains: BTreeMap<String, DomainCounts> = BTreeMap::new();
    for item in items {
        let hyp = hypotheses
            .get(item.id)
            .ok_or_else(|| MetricsError::MissingHypothesis(item.id.to_string()))?;
        let e = edit_distance(item.reference, hyp);
        let d = domains.entry(item.domain.to_string()).or_default();
        d.utterances += 1;
        d.reference_tokens += item.reference.len();
        d.edits += e;
        edits += e;
        tokens += item.reference.len();
        utterances += 1;
    }
    Ok(EvalReport {
        wer: percent(edits.total(), tokens),
        per_domain: domains
            .iter()
            .map(|(k, d)| (k.clone(), percent(d.edits.total(), d.reference_tokens)))
            .collect(),
        utterances,
        reference_tokens: tokens,
        edits,
        domain_counts: domains,
    })
}

/// Relative WER reduction in percent; negative when the model is worse.
pub fn werr(baseline_wer: f64, model_wer: f64) -> Result<f64, MetricsError> {
    if baseline_wer == 0.0 {
        return Err(MetricsError::ZeroBaseline);
    }
    Ok((baseline_wer - model_wer) / baseline_wer * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(v: &[usize]) -> LabelSequence {
        LabelSequence::from_symbols(v.to_vec())
    }

    #[test]
    fn identical_sequences() {
        assert_eq!(edit_distance(&seq(&[1, 2, 3]), &seq(&[1, 2, 3])), EditCounts::default());
    }

    #[test]
    fn single_deletion() {
        let e = edit_distance(&seq(&[1, 2, 3]), &seq(&[1, 3]));
        assert_eq!((e.substitutions, e.deletions, e.insertions), (0, 1, 0));
    }

    #[test]
    fn empty_hypothesis_deletes_everything() {
        let e = edit_distance(&seq(&[1, 2]), &seq(&[]));
        assert_eq!((e.substitutions, e.deletions, e.insertions), (0, 2, 0));
    }

    #[test]
    fn substitution_preferred_over_indel_pair() {
        let e = edit_distance(&seq(&[1, 2]), &seq(&[1, 3]));
        assert_eq!((e.substitutions, e.deletions, e.insertions), (1, 0, 0));
    }

    #[test]
    fn wer_one_missing_token() {
        let r = seq(&[1, 2, 3]);
        let items = vec![EvalItem {
            id: "u1",
            domain: "D1",
            reference: &r,
        }];
        let hyps = HashMap::from([("u1".to_string(), seq(&[1, 3]))]);
        let rep = wer(items, &hyps).unwrap();
        assert!((rep.wer - 100.0 / 3.0).abs() < 1e-9);
        assert!((rep.per_domain["D1"] - 100.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn wer_missing_hypothesis_errors() {
        let r = seq(&[1]);
        let items = vec![EvalItem {
            id: "u1",
            domain: "D1",
            reference: &r,
        }];
        assert_eq!(
            wer(items, &HashMap::new()),
            Err(MetricsError::MissingHypothesis("u1".into()))
        );
    }

    #[test]
    fn werr_arithmetic() {
        assert_eq!(werr(10.0, 5.0).unwrap(), 50.0);
        assert_eq!(werr(7.0, 7.0).unwrap(), 0.0);
        assert!(werr(10.0, 10.41).unwrap() < 0.0);
        assert_eq!(werr(0.0, 1.0), Err(MetricsError::ZeroBaseline));
    }
}
