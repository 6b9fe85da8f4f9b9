//! Alphabet, path and label-sequence types, the CTC collapse mapping, and the
//! log-space forward-backward likelihood and gradient.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{log_add, log_softmax_in_place, logsumexp};

/// Tolerance used when checking that a row of log-probabilities is normalized.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CtcError {
    #[error("invalid alphabet: {0}")]
    InvalidAlphabet(String),
    #[error("label {label} is out of range for an alphabet of size {size}")]
    LabelOutOfRange { label: usize, size: usize },
    #[error("label sequence contains the blank symbol at position {position}")]
    BlankInTarget { position: usize },
    #[error("target of length {target_len} needs {required} frames but only {frames} are available")]
    Infeasible {
        target_len: usize,
        required: usize,
        frames: usize,
    },
    #[error("matrix shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },
    #[error("frame {frame} is not a normalized log-distribution (logsumexp = {lse})")]
    NotNormalized { frame: usize, lse: f64 },
    #[error("brute-force enumeration is limited to 10 frames and 5 labels, got {frames} x {labels}")]
    SizeGuard { frames: usize, labels: usize },
}

/// Ordered set of symbols including exactly one blank.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alphabet {
    labels: Vec<String>,
    blank: usize,
}

impl Alphabet {
    pub fn new(labels: Vec<String>, blank: usize) -> Result<Self, CtcError> {
        if labels.len() < 2 {
            return Err(CtcError::InvalidAlphabet(format!(
                "need at least one symbol plus blank, got {} labels",
                labels.len()
            )));
        }
        if blank >= labels.len() {
            return Err(CtcError::InvalidAlphabet(format!(
                "blank index {blank} outside 0..{}",
                labels.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(CtcError::InvalidAlphabet(format!("duplicate label {l:?}")));
            }
        }
        Ok(Self { labels, blank })
    }

    /// Blank `_` at index 0 followed by `symbols` non-blank labels named `a`, `b`, ...
    pub fn synthetic(symbols: usize) -> Result<Self, CtcError> {
        let mut labels = vec!["_".to_string()];
        for i in 0..symbols {
            labels.push(symbol_name(i));
        }
        Self::new(labels, 0)
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn blank(&self) -> usize {
        self.blank
    }

    pub fn label(&self, index: usize) -> Option<&str> {
        self.labels.get(index).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Non-blank indices in alphabet order.
    pub fn symbols(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.size()).filter(move |&i| i != self.blank)
    }
}

fn symbol_name(i: usize) -> String {
    let letters = b"abcdefghijklmnopqrstuvwxyz";
    if i < letters.len() {
        (letters[i] as char).to_string()
    } else {
        format!("s{i}")
    }
}

/// One label index per frame, blanks included.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Path(Vec<usize>);

impl Path {
    pub fn new(frames: Vec<usize>, alphabet: &Alphabet) -> Result<Self, CtcError> {
        if let Some(&label) = frames.iter().find(|&&l| l >= alphabet.size()) {
            return Err(CtcError::LabelOutOfRange {
                label,
                size: alphabet.size(),
            });
        }
        Ok(Self(frames))
    }

    /// Wraps frame labels without validating them against an alphabet.
    pub fn from_frames(frames: Vec<usize>) -> Self {
        Self(frames)
    }

    pub fn frames(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Collapsed transcript: non-blank label indices, possibly empty.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelSequence(Vec<usize>);

impl LabelSequence {
    pub fn new(symbols: Vec<usize>, alphabet: &Alphabet) -> Result<Self, CtcError> {
        for (position, &s) in symbols.iter().enumerate() {
            if s >= alphabet.size() {
                return Err(CtcError::LabelOutOfRange {
                    label: s,
                    size: alphabet.size(),
                });
            }
            if s == alphabet.blank() {
                return Err(CtcError::BlankInTarget { position });
            }
        }
        Ok(Self(symbols))
    }

    /// Wraps symbols without validation. Callers guarantee no blank is present.
    pub fn from_symbols(symbols: Vec<usize>) -> Self {
        Self(symbols)
    }

    pub fn symbols(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Minimum number of frames needed to emit this sequence: one per symbol
    /// plus a separating blank between adjacent repeats.
    pub fn min_frames(&self) -> usize {
        let repeats = self.0.windows(2).filter(|w| w[0] == w[1]).count();
        self.0.len() + repeats
    }

    /// Space-separated label names, e.g. `"a b b"`.
    pub fn render(&self, alphabet: &Alphabet) -> String {
        self.0
            .iter()
            .map(|&s| alphabet.label(s).unwrap_or("?"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// The CTC mapping: merge adjacent repeats, then drop blanks.
pub fn collapse(path: &[usize], blank: usize) -> LabelSequence {
    let mut out = Vec::new();
    let mut prev: Option<usize> = None;
    for &l in path {
        if prev != Some(l) && l != blank {
            out.push(l);
        }
        prev = Some(l);
    }
    LabelSequence(out)
}

/// Per-frame natural-log posteriors, `frames x labels`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LogProbMatrix {
    frames: usize,
    labels: usize,
    values: Vec<f64>,
}

impl LogProbMatrix {
    /// Validates that every row is a normalized log-distribution.
    pub fn from_log_probs(frames: usize, labels: usize, values: Vec<f64>) -> Result<Self, CtcError> {
        check_shape(frames, labels, values.len())?;
        for t in 0..frames {
            let row = &values[t * labels..(t + 1) * labels];
            let lse = logsumexp(row);
            if !(lse.abs() <= NORMALIZATION_TOLERANCE) || row.iter().any(|&v| v > 0.0 || v.is_nan()) {
                return Err(CtcError::NotNormalized { frame: t, lse });
            }
        }
        Ok(Self {
            frames,
            labels,
            values,
        })
    }

    /// Applies a row-wise log-softmax to unnormalized scores.
    pub fn from_logits(frames: usize, labels: usize, mut logits: Vec<f64>) -> Result<Self, CtcError> {
        check_shape(frames, labels, logits.len())?;
        if labels > 0 {
            for row in logits.chunks_mut(labels) {
                log_softmax_in_place(row);
            }
        }
        Ok(Self {
            frames,
            labels,
            values: logits,
        })
    }

    pub fn uniform(frames: usize, labels: usize) -> Self {
        let v = -(labels as f64).ln();
        Self {
            frames,
            labels,
            values: vec![v; frames * labels],
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn num_labels(&self) -> usize {
        self.labels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.labels..(t + 1) * self.labels]
    }

    pub fn get(&self, t: usize, label: usize) -> f64 {
        self.values[t * self.labels + label]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.labels.max(1)).take(self.frames)
    }
}

fn check_shape(frames: usize, labels: usize, len: usize) -> Result<(), CtcError> {
    if frames * labels != len {
        return Err(CtcError::ShapeMismatch {
            expected: format!("{frames}x{labels} = {}", frames * labels),
            actual: format!("{len} values"),
        });
    }
    Ok(())
}

/// Outcome of a likelihood evaluation. Targets that no path can produce are
/// tagged rather than reported as an error so batch loops can skip them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LogLikelihood {
    Feasible(f64),
    Infeasible,
}

impl LogLikelihood {
    /// The log-probability, with `-inf` for infeasible targets.
    pub fn value(self) -> f64 {
        match self {
            LogLikelihood::Feasible(v) => v,
            LogLikelihood::Infeasible => f64::NEG_INFINITY,
        }
    }

    pub fn is_feasible(self) -> bool {
        matches!(self, LogLikelihood::Feasible(_))
    }
}

/// A scalar loss with its gradient over a `frames x labels` logit matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// Blank-augmented target: `_ h1 _ h2 _ ... hL _`.
struct Lattice {
    states: Vec<usize>,
    /// `skip[s]` is true when state `s` may be entered from `s - 2`.
    skip: Vec<bool>,
}

impl Lattice {
    fn new(target: &[usize], blank: usize) -> Self {
        let mut states = Vec::with_capacity(2 * target.len() + 1);
        states.push(blank);
        for &l in target {
            states.push(l);
            states.push(blank);
        }
        let skip = (0..states.len())
            .map(|s| s >= 2 && states[s] != blank && states[s] != states[s - 2])
            .collect();
        Self { states, skip }
    }

    fn len(&self) -> usize {
        self.states.len()
    }
}

fn validate_target(post: &LogProbMatrix, target: &LabelSequence, blank: usize) -> Result<(), CtcError> {
    let size = post.num_labels();
    if blank >= size {
        return Err(CtcError::LabelOutOfRange { label: blank, size });
    }
    for (position, &s) in target.symbols().iter().enumerate() {
        if s >= size {
            return Err(CtcError::LabelOutOfRange { label: s, size });
        }
        if s == blank {
            return Err(CtcError::BlankInTarget { position });
        }
    }
    Ok(())
}

/// Log-space alpha recursion. Returns the `frames x states` table.
fn forward_table(post: &LogProbMatrix, lattice: &Lattice) -> Vec<f64> {
    let t_len = post.frames();
    let s_len = lattice.len();
    let mut alpha = vec![f64::NEG_INFINITY; t_len * s_len];
    if t_len == 0 {
        return alpha;
    }
    alpha[0] = post.get(0, lattice.states[0]);
    if s_len > 1 {
        alpha[1] = post.get(0, lattice.states[1]);
    }
    for t in 1..t_len {
        let (prev, cur) = alpha.split_at_mut(t * s_len);
        let prev = &prev[(t - 1) * s_len..];
        let cur = &mut cur[..s_len];
        let row = post.row(t);
        // States below this bound cannot reach the final states in time.
        let lo = s_len.saturating_sub(2 * (t_len - t));
        for s in lo..s_len.min(2 * (t + 1)) {
            let mut acc = prev[s];
            if s >= 1 {
                acc = log_add(acc, prev[s - 1]);
            }
            if lattice.skip[s] {
                acc = log_add(acc, prev[s - 2]);
            }
            if acc != f64::NEG_INFINITY {
                cur[s] = acc + row[lattice.states[s]];
            }
        }
    }
    alpha
}

/// Log-space beta recursion, excluding the emission at frame `t` itself.
fn backward_table(post: &LogProbMatrix, lattice: &Lattice) -> Vec<f64> {
    let t_len = post.frames();
    let s_len = lattice.len();
    let mut beta = vec![f64::NEG_INFINITY; t_len * s_len];
    if t_len == 0 {
        return beta;
    }
    let last = (t_len - 1) * s_len;
    beta[last + s_len - 1] = 0.0;
    if s_len > 1 {
        beta[last + s_len - 2] = 0.0;
    }
    for t in (0..t_len - 1).rev() {
        let (cur, next) = beta.split_at_mut((t + 1) * s_len);
        let cur = &mut cur[t * s_len..];
        let next = &next[..s_len];
        let row = post.row(t + 1);
        for s in 0..s_len {
            let mut acc = next[s] + row[lattice.states[s]];
            if s + 1 < s_len {
                acc = log_add(acc, next[s + 1] + row[lattice.states[s + 1]]);
            }
            if s + 2 < s_len && lattice.skip[s + 2] {
                acc = log_add(acc, next[s + 2] + row[lattice.states[s + 2]]);
            }
            cur[s] = acc;
        }
    }
    beta
}

fn total_from_alpha(alpha: &[f64], frames: usize, states: usize) -> f64 {
    let last = &alpha[(frames - 1) * states..frames * states];
    if states > 1 {
        log_add(last[states - 1], last[states - 2])
    } else {
        last[0]
    }
}

/// `ln P(target | X)`, summed over every path that collapses to `target`.
pub fn ctc_log_likelihood(
    post: &LogProbMatrix,
    target: &LabelSequence,
    blank: usize,
) -> Result<LogLikelihood, CtcError> {
    validate_target(post, target, blank)?;
    if target.min_frames() > post.frames() {
        return Ok(LogLikelihood::Infeasible);
    }
    if post.frames() == 0 {
        // Only the empty target survives the check above.
        return Ok(LogLikelihood::Feasible(0.0));
    }
    let lattice = Lattice::new(target.symbols(), blank);
    let alpha = forward_table(post, &lattice);
    let total = total_from_alpha(&alpha, post.frames(), lattice.len());
    if total == f64::NEG_INFINITY {
        return Ok(LogLikelihood::Infeasible);
    }
    Ok(LogLikelihood::Feasible(total))
}

/// `-ln P(target | X)` and its gradient with respect to the logits that produced
/// `post` (i.e. `softmax(logits) - gamma`).
pub fn ctc_loss_and_grad(post: &LogProbMatrix, target: &LabelSequence, blank: usize) -> Result<LossGrad, CtcError> {
    validate_target(post, target, blank)?;
    let frames = post.frames();
    let infeasible = || CtcError::Infeasible {
        target_len: target.len(),
        required: target.min_frames(),
        frames,
    };
    if target.min_frames() > frames || frames == 0 {
        return Err(infeasible());
    }
    let labels = post.num_labels();
    let lattice = Lattice::new(target.symbols(), blank);
    let s_len = lattice.len();
    let alpha = forward_table(post, &lattice);
    let total = total_from_alpha(&alpha, frames, s_len);
    if total == f64::NEG_INFINITY {
        return Err(infeasible());
    }
    let beta = backward_table(post, &lattice);

    let mut grad = Vec::with_capacity(frames * labels);
    let mut occupancy = vec![f64::NEG_INFINITY; labels];
    for t in 0..frames {
        occupancy.iter_mut().for_each(|v| *v = f64::NEG_INFINITY);
        let a = &alpha[t * s_len..(t + 1) * s_len];
        let b = &beta[t * s_len..(t + 1) * s_len];
        for s in 0..s_len {
            let k = lattice.states[s];
            occupancy[k] = log_add(occupancy[k], a[s] + b[s]);
        }
        for (k, &lp) in post.row(t).iter().enumerate() {
            grad.push(lp.exp() - (occupancy[k] - total).exp());
        }
    }
    Ok(LossGrad { loss: -total, grad })
}

/// Exact likelihood by enumerating all `labels^frames` paths. Test oracle only.
pub fn brute_force_log_likelihood(
    post: &LogProbMatrix,
    target: &LabelSequence,
    blank: usize,
) -> Result<f64, CtcError> {
    let (frames, labels) = (post.frames(), post.num_labels());
    if frames > 10 || labels > 5 {
        return Err(CtcError::SizeGuard { frames, labels });
    }
    validate_target(post, target, blank)?;
    let mut path = vec![0usize; frames];
    let mut acc = f64::NEG_INFINITY;
    loop {
        if collapse(&path, blank) == *target {
            let score: f64 = path.iter().enumerate().map(|(t, &l)| post.get(t, l)).sum();
            acc = log_add(acc, score);
        }
        // Odometer increment over all paths.
        let mut i = 0;
        loop {
            if i == frames {
                return Ok(acc);
            }
            path[i] += 1;
            if path[i] < labels {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}
