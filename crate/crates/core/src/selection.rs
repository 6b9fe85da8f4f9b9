//! Unlabelled-data selection: wake word / content / device filters,
//! confidence-bin quotas (natural, uniform, weighted) and domain sampling.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::confidence::NUM_BINS;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelectionError {
    #[error("weighted sampling needs non-negative weights with a positive sum, got {0:?}")]
    InvalidWeights(Vec<f64>),
    #[error("unknown domain {requested:?}; known domains: {}", known.join(", "))]
    UnknownDomain { requested: String, known: Vec<String> },
    #[error("no domain requested")]
    NoDomain,
    #[error("duplicate utterance id {0}")]
    DuplicateId(String),
    #[error("invalid utterance metadata for {id}: {reason}")]
    InvalidMeta { id: String, reason: String },
    #[error("invalid selection config: {0}")]
    InvalidConfig(String),
}

/// Selection-time view of one unlabelled utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceMeta {
    pub id: String,
    pub device: String,
    pub speaker: String,
    pub domain: String,
    /// 1-best recognition result, used for the per-content cap.
    pub hypothesis: String,
    pub bin: usize,
    /// Length in frames.
    pub duration: usize,
    pub wakeword_only: bool,
}

impl UtteranceMeta {
    pub fn validate(&self) -> Result<(), SelectionError> {
        let bad = |reason: &str| {
            Err(SelectionError::InvalidMeta {
                id: self.id.clone(),
                reason: reason.into(),
            })
        };
        if self.id.is_empty() || self.device.is_empty() || self.speaker.is_empty() {
            return bad("ids must be non-empty");
        }
        if self.bin >= NUM_BINS {
            return bad("bin must be in 0..=9");
        }
        if self.duration == 0 {
            return bad("duration must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Budget {
    Utterances(usize),
    Frames(usize),
}

impl Budget {
    pub fn amount(self) -> usize {
        match self {
            Budget::Utterances(n) | Budget::Frames(n) => n,
        }
    }

    /// Budget units one utterance consumes.
    pub fn cost(self, meta: &UtteranceMeta) -> usize {
        match self {
            Budget::Utterances(_) => 1,
            Budget::Frames(_) => meta.duration,
        }
    }
}

/// How a budget is spread over confidence bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    /// Proportional to the filtered pool's own bin sizes.
    #[serde(rename = "ND")]
    Natural,
    /// Equal share per bin.
    #[serde(rename = "UD")]
    Uniform,
    /// Proportional to `ws_weights`.
    #[serde(rename = "WS")]
    Weighted,
}

impl Strategy {
    pub fn code(self) -> &'static str {
        match self {
            Strategy::Natural => "ND",
            Strategy::Uniform => "UD",
            Strategy::Weighted => "WS",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = SelectionError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "ND" => Ok(Strategy::Natural),
            "UD" => Ok(Strategy::Uniform),
            "WS" => Ok(Strategy::Weighted),
            other => Err(SelectionError::InvalidConfig(format!(
                "unknown strategy {other:?} (expected ND, UD or WS)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub max_per_content: usize,
    pub max_per_device: usize,
    pub exclude_wakeword_only: bool,
    pub budget: Budget,
    pub strategy: Strategy,
    pub ws_weights: Vec<f64>,
    pub domains: Option<Vec<String>>,
    pub seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            max_per_content: 50,
            max_per_device: 50,
            exclude_wakeword_only: true,
            budget: Budget::Utterances(1000),
            strategy: Strategy::Uniform,
            ws_weights: vec![1.0; NUM_BINS],
            domains: None,
            seed: 0,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<(), SelectionError> {
        if self.max_per_content == 0 || self.max_per_device == 0 {
            return Err(SelectionError::InvalidConfig("caps must be at least 1".into()));
        }
        if self.budget.amount() == 0 {
            return Err(SelectionError::InvalidConfig("budget must be positive".into()));
        }
        if self.strategy == Strategy::Weighted {
            check_weights(&self.ws_weights)?;
        }
        Ok(())
    }
}

fn check_weights(w: &[f64]) -> Result<(), SelectionError> {
    let valid = w.len() == NUM_BINS && w.iter().all(|&v| v >= 0.0 && v.is_finite()) && w.iter().sum::<f64>() > 0.0;
    if valid {
        Ok(())
    } else {
        Err(SelectionError::InvalidWeights(w.to_vec()))
    }
}

fn check_unique(pool: &[UtteranceMeta]) -> Result<(), SelectionError> {
    let mut seen = HashSet::with_capacity(pool.len());
    for m in pool {
        m.validate()?;
        if !seen.insert(m.id.as_str()) {
            return Err(SelectionError::DuplicateId(m.id.clone()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RemovalCounts {
    pub wakeword_only: usize,
    pub content_cap: usize,
    pub device_cap: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    /// Survivors in their original pool order.
    pub kept: Vec<UtteranceMeta>,
    pub removed: RemovalCounts,
}

/// Keeps at most `cap` members of every group, chosen by a seeded uniform
/// sample. Groups are visited in key order so the result depends only on the
/// pool and the rng state.
fn cap_groups<K: Ord>(pool: &[UtteranceMeta], cap: usize, key: impl Fn(&UtteranceMeta) -> K, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let mut groups: BTreeMap<K, Vec<usize>> = BTreeMap::new();
    for (i, m) in pool.iter().enumerate() {
        groups.entry(key(m)).or_default().push(i);
    }
    let mut keep = vec![true; pool.len()];
    for members in groups.values_mut() {
        if members.len() > cap {
            members.shuffle(rng);
            for &i in &members[cap..] {
                keep[i] = false;
            }
        }
    }
    keep
}

/// Wake-word-only removal, then the per-content cap, then the per-device cap.
pub fn apply_common_filters(pool: &[UtteranceMeta], cfg: &SelectionConfig) -> FilterOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut removed = RemovalCounts::default();
    let mut current: Vec<UtteranceMeta> = if cfg.exclude_wakeword_only {
        pool.iter().filter(|m| !m.wakeword_only).cloned().collect()
    } else {
        pool.to_vec()
    };
    removed.wakeword_only = pool.len() - current.len();

    let keep = cap_groups(&current, cfg.max_per_content, |m| m.hypothesis.clone(), &mut rng);
    let before = current.len();
    current = current.into_iter().zip(keep).filter(|(_, k)| *k).map(|(m, _)| m).collect();
    removed.content_cap = before - current.len();

    let keep = cap_groups(&current, cfg.max_per_device, |m| m.device.clone(), &mut rng);
    let before = current.len();
    current = current.into_iter().zip(keep).filter(|(_, k)| *k).map(|(m, _)| m).collect();
    removed.device_cap = before - current.len();

    FilterOutcome { kept: current, removed }
}

/// Splits a pool into ten lists by confidence bin.
pub fn partition_by_bin(pool: &[UtteranceMeta]) -> Vec<Vec<UtteranceMeta>> {
    let mut bins = vec![Vec::new(); NUM_BINS];
    for m in pool {
        bins[m.bin.min(NUM_BINS - 1)].push(m.clone());
    }
    bins
}

/// Per-group quotas from a budget and weights.
#[derive(Debug, Clone, PartialEq)]
pub struct QuotaPlan {
    /// Real-valued first-round shares before any redistribution.
    pub ideal: Vec<f64>,
    /// Largest-remainder rounding of `ideal`, before capacity limits.
    pub rounded: Vec<usize>,
    /// Final quotas after capping at capacity and redistributing shortfalls.
    pub quotas: Vec<usize>,
}

/// Largest-remainder split of `amount` units in proportion to `weights`
/// (entries with zero weight get nothing). Ties go to the lower index.
fn largest_remainder(amount: usize, weights: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let total: f64 = weights.iter().sum();
    let ideal: Vec<f64> = weights
        .iter()
        .map(|&w| if total > 0.0 { amount as f64 * w / total } else { 0.0 })
        .collect();
    let mut alloc: Vec<usize> = ideal.iter().map(|v| v.floor() as usize).collect();
    let assigned: usize = alloc.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
    order.sort_by(|&a, &b| {
        let fa = ideal[a] - ideal[a].floor();
        let fb = ideal[b] - ideal[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(amount.saturating_sub(assigned)) {
        alloc[i] += 1;
    }
    (ideal, alloc)
}

/// Quotas in proportion to `weights`, capped by `capacity`; whatever a full
/// group cannot take is re-split over the groups that still have room.
pub fn allocate_quotas(budget: usize, weights: &[f64], capacity: &[usize]) -> QuotaPlan {
    let (ideal, rounded) = largest_remainder(budget, weights);
    let mut quotas: Vec<usize> = rounded.iter().zip(capacity).map(|(&q, &c)| q.min(c)).collect();
    loop {
        let remaining = budget - quotas.iter().sum::<usize>();
        if remaining == 0 {
            break;
        }
        let active: Vec<f64> = (0..weights.len())
            .map(|i| if quotas[i] < capacity[i] { weights[i] } else { 0.0 })
            .collect();
        if active.iter().sum::<f64>() <= 0.0 {
            break;
        }
        let (_, extra) = largest_remainder(remaining, &active);
        for i in 0..quotas.len() {
            quotas[i] = (quotas[i] + extra[i]).min(capacity[i]);
        }
    }
    QuotaPlan { ideal, rounded, quotas }
}

/// Selected utterances and how the budget was spent.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub selected: Vec<UtteranceMeta>,
    /// Group labels (bin numbers or domain names) parallel to the quota vectors.
    pub groups: Vec<String>,
    pub plan: QuotaPlan,
    /// Realized size per group, in budget units.
    pub realized: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Seeded uniform sample from each group up to its quota (in budget units).
fn fill_groups(groups: &[Vec<UtteranceMeta>], quotas: &[usize], budget: Budget, rng: &mut ChaCha8Rng) -> (Vec<UtteranceMeta>, Vec<usize>) {
    let mut selected = Vec::new();
    let mut realized = vec![0; groups.len()];
    for (g, members) in groups.iter().enumerate() {
        let mut idx: Vec<usize> = (0..members.len()).collect();
        idx.shuffle(rng);
        for i in idx {
            let cost = budget.cost(&members[i]);
            if realized[g] + cost <= quotas[g] {
                realized[g] += cost;
                selected.push(members[i].clone());
            }
            if realized[g] == quotas[g] {
                break;
            }
        }
    }
    (selected, realized)
}

fn weighted_sample(groups: Vec<Vec<UtteranceMeta>>, labels: Vec<String>, weights: &[f64], budget: Budget, seed: u64) -> Selection {
    let capacity: Vec<usize> = groups
        .iter()
        .map(|g| g.iter().map(|m| budget.cost(m)).sum())
        .collect();
    let available: usize = capacity.iter().sum();
    let mut warnings = Vec::new();
    if budget.amount() > available {
        let msg = format!(
            "budget {} exceeds the {available} available after filtering; selecting everything",
            budget.amount()
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let plan = allocate_quotas(budget.amount().min(available), weights, &capacity);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (selected, realized) = fill_groups(&groups, &plan.quotas, budget, &mut rng);
    let total: usize = realized.iter().sum();
    if total < budget.amount().min(available) {
        let msg = format!("only {total} of {} budget units could be placed", budget.amount());
        log::warn!("{msg}");
        warnings.push(msg);
    }
    Selection {
        selected,
        groups: labels,
        plan,
        realized,
        warnings,
    }
}

/// Combines confidence bins under `cfg.strategy`. `bins` is normally the
/// output of [`partition_by_bin`] on an already filtered pool.
pub fn sample_combined(bins: &[Vec<UtteranceMeta>], cfg: &SelectionConfig) -> Result<Selection, SelectionError> {
    cfg.validate()?;
    if bins.len() != NUM_BINS {
        return Err(SelectionError::InvalidConfig(format!("expected {NUM_BINS} bins, got {}", bins.len())));
    }
    let flat: Vec<UtteranceMeta> = bins.iter().flatten().cloned().collect();
    check_unique(&flat)?;
    let weights: Vec<f64> = match cfg.strategy {
        Strategy::Natural => bins
            .iter()
            .map(|b| b.iter().map(|m| cfg.budget.cost(m)).sum::<usize>() as f64)
            .collect(),
        Strategy::Uniform => vec![1.0; NUM_BINS],
        Strategy::Weighted => cfg.ws_weights.clone(),
    };
    let labels = (0..NUM_BINS).map(|b| b.to_string()).collect();
    Ok(weighted_sample(bins.to_vec(), labels, &weights, cfg.budget, cfg.seed))
}

/// Restricts to `domains`, applies the common filters and samples to `budget`
/// with an equal share per requested domain.
pub fn sample_by_domain(pool: &[UtteranceMeta], domains: &[String], budget: Budget, cfg: &SelectionConfig) -> Result<Selection, SelectionError> {
    if budget.amount() == 0 {
        return Err(SelectionError::InvalidConfig("budget must be positive".into()));
    }
    if domains.is_empty() {
        return Err(SelectionError::NoDomain);
    }
    check_unique(pool)?;
    let known: BTreeSet<&str> = pool.iter().map(|m| m.domain.as_str()).collect();
    let mut wanted: Vec<&String> = Vec::new();
    for d in domains {
        if !known.contains(d.as_str()) {
            return Err(SelectionError::UnknownDomain {
                requested: d.clone(),
                known: known.iter().map(|s| s.to_string()).collect(),
            });
        }
        if !wanted.contains(&d) {
            wanted.push(d);
        }
    }
    let restricted: Vec<UtteranceMeta> = pool
        .iter()
        .filter(|m| wanted.iter().any(|d| **d == m.domain))
        .cloned()
        .collect();
    let filtered = apply_common_filters(&restricted, cfg);
    let groups: Vec<Vec<UtteranceMeta>> = wanted
        .iter()
        .map(|d| filtered.kept.iter().filter(|m| &m.domain == *d).cloned().collect())
        .collect();
    let weights = vec![1.0; groups.len()];
    let labels = wanted.iter().map(|d| d.to_string()).collect();
    Ok(weighted_sample(groups, labels, &weights, budget, cfg.seed))
}

/// One line of the selection manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub id: String,
    pub strategy: String,
    pub bin: usize,
    pub domain: String,
    pub seed: u64,
}

impl Selection {
    pub fn records(&self, strategy: &str, seed: u64) -> Vec<SelectionRecord> {
        self.selected
            .iter()
            .map(|m| SelectionRecord {
                id: m.id.clone(),
                strategy: strategy.to_string(),
                bin: m.bin,
                domain: m.domain.clone(),
                seed,
            })
            .collect()
    }
}
