//! The experiment grid: per seed, a baseline and a teacher, then students
//! trained on teacher pseudo-labels chosen by confidence bin, bin-combination
//! strategy and domain, plus a self-training student.

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use ctcssl::confidence::{calibration_report, train_confidence, ConfidenceModel, NUM_BINS};
use ctcssl::corpus::{generate, Corpus, SyntheticUtterance};
use ctcssl::kd::{generate_pseudo_labels, self_training_labels, PseudoLabeledUtterance, PseudoLabels, UnlabelledRef};
use ctcssl::metrics::{edit_distance, werr, EvalReport};
use ctcssl::selection::{
    apply_common_filters, partition_by_bin, sample_by_domain, sample_combined, Budget, RemovalCounts, Selection,
    SelectionConfig, Strategy, UtteranceMeta,
};
use ctcssl::train::TrainConfig;
use ctcssl::{LabelSequence, ModelParams};

use crate::error::CliError;
use crate::pipeline::{confidence_inputs, derive_seed, evaluate, train_staged, train_student};
use crate::plan::{ExperimentPlan, StudentInit};

/// One trained and scored model.
#[derive(Debug, Clone)]
pub struct ModelResult {
    pub name: String,
    /// Pseudo-labelled utterances added to the labelled set.
    pub selected: usize,
    pub report: EvalReport,
    pub werr: f64,
    /// Token error rate of the added pseudo-labels against the hidden references.
    pub label_error: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct BinResult {
    pub bin: usize,
    pub available: usize,
    pub selected: usize,
    pub label_error: Option<f64>,
    pub wer: f64,
    pub werr: f64,
}

#[derive(Debug, Clone)]
pub struct QuotaLine {
    pub selection: String,
    pub group: String,
    pub ideal: f64,
    pub quota: usize,
    pub realized: usize,
}

#[derive(Debug, Clone)]
pub struct DomainLine {
    /// Domain name of the unlabelled data, or `combined`.
    pub model: String,
    /// Per test domain WERR, in corpus domain order.
    pub werr: Vec<(String, f64)>,
}

#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub domains: Vec<String>,
    pub models: Vec<ModelResult>,
    pub bin_sweep: Vec<BinResult>,
    pub strategies: Vec<ModelResult>,
    pub domain_matrix: Vec<DomainLine>,
    pub quotas: Vec<QuotaLine>,
    pub calibration: Vec<ctcssl::confidence::CalibrationRow>,
    pub removed: RemovalCounts,
    pub teacher_label_error: f64,
    pub self_label_error: f64,
    pub teacher_dropped: usize,
    pub self_dropped: usize,
    pub ws_weights: Vec<f64>,
}

impl SeedOutcome {
    pub fn model(&self, name: &str) -> Option<&ModelResult> {
        self.models.iter().find(|m| m.name == name)
    }
}

/// Token error rate of pseudo-labels against the hidden references; dropped
/// utterances count as empty hypotheses.
fn label_error_rate(pool: &[SyntheticUtterance], labels: &PseudoLabels) -> f64 {
    let by_id: HashMap<&str, &LabelSequence> = labels.labels.iter().map(|l| (l.id.as_str(), &l.pseudo_label)).collect();
    let empty = LabelSequence::default();
    let (mut edits, mut tokens) = (0, 0);
    for u in pool {
        let hyp = by_id.get(u.id()).copied().unwrap_or(&empty);
        edits += edit_distance(&u.reference, hyp).total();
        tokens += u.reference.len();
    }
    100.0 * edits as f64 / tokens.max(1) as f64
}

struct SeedContext<'a> {
    plan: &'a ExperimentPlan,
    seed: u64,
    corpus: Corpus,
    blank: usize,
    student_init: ModelParams,
    baseline: EvalReport,
    ssl_cfg: TrainConfig,
    started: Instant,
    truth: HashMap<String, LabelSequence>,
}

impl SeedContext<'_> {
    fn stage<T>(&self, stage: &str, r: Result<T, CliError>) -> Result<T, CliError> {
        r.map_err(|e| CliError::Stage {
            stage: stage.to_string(),
            seed: self.seed,
            message: e.to_string(),
        })
    }

    fn student(&self, name: &str, labels: &[PseudoLabeledUtterance], ids: &[&UtteranceMeta]) -> Result<ModelResult, CliError> {
        let by_id: HashMap<&str, &PseudoLabeledUtterance> = labels.iter().map(|l| (l.id.as_str(), l)).collect();
        let pseudo: Vec<PseudoLabeledUtterance> = ids
            .iter()
            .filter_map(|m| by_id.get(m.id.as_str()).map(|l| (*l).clone()))
            .collect();
        let selected = pseudo.len();
        let label_error = (selected > 0).then(|| {
            let (mut edits, mut tokens) = (0, 0);
            for p in &pseudo {
                let truth = &self.truth[p.id.as_str()];
                edits += edit_distance(truth, &p.pseudo_label).total();
                tokens += truth.len();
            }
            100.0 * edits as f64 / tokens.max(1) as f64
        });
        let trained = self.stage(
            name,
            train_student(
                &self.student_init,
                &self.corpus.labelled,
                &self.corpus.unlabelled,
                pseudo,
                self.blank,
                &self.ssl_cfg,
                self.plan.ssl_min_updates,
                self.plan.unlabelled_weight,
            ),
        )?;
        let report = self.stage(name, evaluate(&trained.params, &self.corpus.eval, self.blank))?;
        let werr = self.werr(self.baseline.wer, report.wer, name)?;
        log::info!(
            "seed {} {name}: +{selected} utts (label error {:.1}), WER {:.2} WERR {:.2} ({:.0}s)",
            self.seed,
            label_error.unwrap_or(0.0),
            report.wer,
            werr,
            self.started.elapsed().as_secs_f64()
        );
        Ok(ModelResult {
            name: name.to_string(),
            selected,
            report,
            werr,
            label_error,
        })
    }

    fn werr(&self, base: f64, model: f64, stage: &str) -> Result<f64, CliError> {
        self.stage(stage, werr(base, model).map_err(CliError::from))
    }
}

fn quota_lines(name: &str, sel: &Selection) -> Vec<QuotaLine> {
    (0..sel.groups.len())
        .map(|g| QuotaLine {
            selection: name.to_string(),
            group: sel.groups[g].clone(),
            ideal: sel.plan.ideal[g],
            quota: sel.plan.quotas[g],
            realized: sel.realized[g],
        })
        .collect()
}

fn one_hot_bins(bins: &[usize]) -> Vec<f64> {
    (0..NUM_BINS).map(|b| if bins.contains(&b) { 1.0 } else { 0.0 }).collect()
}

/// Runs every enabled stage of the grid for one seed.
pub fn run_seed(plan: &ExperimentPlan, seed: u64) -> Result<SeedOutcome, CliError> {
    let started = Instant::now();
    let wrap = |stage: &str, e: CliError| CliError::Stage {
        stage: stage.to_string(),
        seed,
        message: e.to_string(),
    };
    let corpus_cfg = ctcssl::corpus::CorpusConfig {
        seed,
        ..plan.corpus.clone()
    };
    let corpus = generate(&corpus_cfg).map_err(|e| wrap("gen-data", e.into()))?;
    let blank = corpus.alphabet.blank();
    let num_labels = corpus.alphabet.size();
    let dim = corpus_cfg.input_dim;
    let seeded = |cfg: &TrainConfig, tag| TrainConfig {
        seed: derive_seed(seed ^ cfg.seed, tag),
        ..cfg.clone()
    };

    let base = train_staged(
        plan.student.config(dim, num_labels, derive_seed(seed, 1)),
        &corpus.labelled,
        blank,
        &seeded(&plan.ce, 11),
        &seeded(&plan.ctc, 12),
    )
    .map_err(|e| wrap("baseline", e))?;
    let teacher = train_staged(
        plan.teacher.config(dim, num_labels, derive_seed(seed, 2)),
        &corpus.labelled,
        blank,
        &seeded(&plan.ce, 21),
        &seeded(&plan.ctc, 22),
    )
    .map_err(|e| wrap("teacher", e))?;
    let baseline = evaluate(&base.params, &corpus.eval, blank).map_err(|e| wrap("baseline", e))?;
    let teacher_report = evaluate(&teacher.params, &corpus.eval, blank).map_err(|e| wrap("teacher", e))?;
    log::info!(
        "seed {seed}: baseline WER {:.2}, teacher WER {:.2} ({:.0}s)",
        baseline.wer,
        teacher_report.wer,
        started.elapsed().as_secs_f64()
    );

    let ctx = SeedContext {
        plan,
        seed,
        blank,
        student_init: match plan.student_init {
            StudentInit::Baseline => base.params.clone(),
            StudentInit::CrossEntropy => base.ce_params.clone(),
        },
        baseline: baseline.clone(),
        ssl_cfg: seeded(&plan.ssl, 31),
        started,
        truth: corpus.unlabelled.iter().map(|u| (u.id().to_string(), u.reference.clone())).collect(),
        corpus,
    };
    let corpus = &ctx.corpus;
    let mut models = vec![
        ModelResult {
            name: "baseline".into(),
            selected: 0,
            werr: ctx.werr(baseline.wer, baseline.wer, "baseline")?,
            report: baseline.clone(),
            label_error: None,
        },
        ModelResult {
            name: "teacher".into(),
            selected: 0,
            werr: ctx.werr(baseline.wer, teacher_report.wer, "teacher")?,
            report: teacher_report,
            label_error: None,
        },
    ];

    // Confidence model fitted on the held-out calibration split, applied to the pool.
    let calib = ctx.stage("confidence", confidence_inputs(&base.params, &corpus.calibration, blank, plan.beam_width))?;
    let correct: Vec<bool> = calib
        .iter()
        .zip(&corpus.calibration)
        .map(|((_, hyp), u)| *hyp == u.reference)
        .collect();
    let calib_feats: Vec<_> = calib.into_iter().map(|(f, _)| f).collect();
    let conf_model = match train_confidence(&calib_feats, &correct, &plan.confidence) {
        Ok(fit) => fit.model,
        Err(e) => {
            log::warn!("seed {seed}: confidence model not trained ({e}); using a neutral model");
            ConfidenceModel::neutral()
        }
    };
    let calibration = calibration_report(&conf_model, &calib_feats, &correct).rows;

    let pool = &corpus.unlabelled;
    let scored = ctx.stage("confidence", confidence_inputs(&base.params, pool, blank, plan.beam_width))?;
    let refs: Vec<UnlabelledRef<'_>> = pool
        .iter()
        .map(|u| UnlabelledRef {
            id: u.id(),
            features: &u.features,
        })
        .collect();
    let teacher_labels = ctx.stage("pseudo-label", generate_pseudo_labels(&teacher.params, &refs, blank).map_err(CliError::from))?;
    let self_labels = ctx.stage("pseudo-label", self_training_labels(&base.params, &refs, blank).map_err(CliError::from))?;
    let teacher_label_error = label_error_rate(pool, &teacher_labels);
    let self_label_error = label_error_rate(pool, &self_labels);
    log::info!(
        "seed {seed}: pseudo-label error teacher {teacher_label_error:.2} self {self_label_error:.2}, dropped {} / {}",
        teacher_labels.dropped,
        self_labels.dropped
    );

    let labelled_ids: std::collections::HashSet<&str> = teacher_labels.labels.iter().map(|l| l.id.as_str()).collect();
    let meta: Vec<UtteranceMeta> = pool
        .iter()
        .zip(&scored)
        .filter(|(u, _)| labelled_ids.contains(u.id()))
        .map(|(u, (feats, hyp))| UtteranceMeta {
            id: u.id().to_string(),
            device: u.info.device.clone(),
            speaker: u.info.speaker.clone(),
            domain: u.info.domain.clone(),
            hypothesis: hyp.render(&corpus.alphabet),
            bin: conf_model.score(feats).bin,
            duration: u.features.frames(),
            wakeword_only: u.info.wakeword_only,
        })
        .collect();
    let sel_cfg = SelectionConfig {
        max_per_content: plan.max_per_content,
        max_per_device: plan.max_per_device,
        seed: derive_seed(seed, 41),
        ..SelectionConfig::default()
    };
    let filtered = apply_common_filters(&meta, &sel_cfg);
    let bins = partition_by_bin(&filtered.kept);
    let all: Vec<&UtteranceMeta> = filtered.kept.iter().collect();
    let mut quotas = Vec::new();

    if plan.stages.ssl {
        models.push(ctx.student("ssl-teacher", &teacher_labels.labels, &all)?);
    }
    if plan.stages.self_training {
        models.push(ctx.student("self-training", &self_labels.labels, &all)?);
    }

    let combined = |name: &str, strategy: Strategy, weights: Vec<f64>, budget: usize, quotas: &mut Vec<QuotaLine>| -> Result<ModelResult, CliError> {
        let cfg = SelectionConfig {
            budget: Budget::Utterances(budget),
            strategy,
            ws_weights: weights,
            ..sel_cfg.clone()
        };
        let sel = ctx.stage(name, sample_combined(&bins, &cfg).map_err(CliError::from))?;
        quotas.extend(quota_lines(name, &sel));
        let ids: Vec<&UtteranceMeta> = sel.selected.iter().collect();
        ctx.student(name, &teacher_labels.labels, &ids)
    };

    let mut bin_sweep = Vec::new();
    if plan.stages.bin_sweep {
        for b in 0..NUM_BINS {
            let r = combined(&format!("bin{b}"), Strategy::Weighted, one_hot_bins(&[b]), plan.bin_budget, &mut quotas)?;
            bin_sweep.push(BinResult {
                bin: b,
                available: bins[b].len(),
                selected: r.selected,
                label_error: r.label_error,
                wer: r.report.wer,
                werr: r.werr,
            });
            models.push(r);
        }
    }

    let mut strategies = Vec::new();
    if plan.stages.low_high {
        strategies.push(combined("LOW3", Strategy::Weighted, one_hot_bins(&[0, 1, 2]), plan.low_high_budget, &mut quotas)?);
        strategies.push(combined("HIGH3", Strategy::Weighted, one_hot_bins(&[7, 8, 9]), plan.low_high_budget, &mut quotas)?);
    }
    let mut ws_weights: Vec<f64> = bin_sweep.iter().map(|b| b.werr.max(0.0)).collect();
    if ws_weights.len() != NUM_BINS || ws_weights.iter().sum::<f64>() <= 0.0 {
        log::warn!("seed {seed}: no positive bin WERR available; WS falls back to uniform weights");
        ws_weights = vec![1.0; NUM_BINS];
    }
    if plan.stages.strategies {
        strategies.push(combined("ND", Strategy::Natural, vec![1.0; NUM_BINS], plan.strategy_budget, &mut quotas)?);
        strategies.push(combined("UD", Strategy::Uniform, vec![1.0; NUM_BINS], plan.strategy_budget, &mut quotas)?);
        strategies.push(combined("WS", Strategy::Weighted, ws_weights.clone(), plan.strategy_budget, &mut quotas)?);
    }
    models.extend(strategies.iter().cloned());

    let mut domain_matrix = Vec::new();
    if plan.stages.domains {
        let mut runs: Vec<(String, Vec<String>)> = corpus.domains.iter().map(|d| (d.clone(), vec![d.clone()])).collect();
        runs.push(("combined".into(), corpus.domains.clone()));
        for (label, domains) in runs {
            let name = format!("domain-{label}");
            let sel = ctx.stage(
                &name,
                sample_by_domain(&meta, &domains, Budget::Utterances(plan.domain_budget), &sel_cfg).map_err(CliError::from),
            )?;
            quotas.extend(quota_lines(&name, &sel));
            let ids: Vec<&UtteranceMeta> = sel.selected.iter().collect();
            let r = ctx.student(&name, &teacher_labels.labels, &ids)?;
            let mut row = Vec::new();
            for d in &corpus.domains {
                let b = baseline.per_domain.get(d).copied().unwrap_or(0.0);
                let m = r.report.per_domain.get(d).copied().unwrap_or(0.0);
                row.push((d.clone(), ctx.werr(b, m, &name)?));
            }
            domain_matrix.push(DomainLine { model: label, werr: row });
            models.push(r);
        }
    }

    log::info!("seed {seed} done in {:.0}s", started.elapsed().as_secs_f64());
    Ok(SeedOutcome {
        seed,
        domains: corpus.domains.clone(),
        models,
        bin_sweep,
        strategies,
        domain_matrix,
        quotas,
        calibration,
        removed: filtered.removed,
        teacher_label_error,
        self_label_error,
        teacher_dropped: teacher_labels.dropped,
        self_dropped: self_labels.dropped,
        ws_weights,
    })
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub seeds: Vec<SeedOutcome>,
}

impl GridOutcome {
    /// Mean over seeds of a per-seed value.
    pub fn mean(&self, f: impl Fn(&SeedOutcome) -> f64) -> f64 {
        self.seeds.iter().map(f).sum::<f64>() / self.seeds.len().max(1) as f64
    }
}

pub fn run_grid(plan: &ExperimentPlan) -> Result<GridOutcome, CliError> {
    plan.validate()?;
    let seeds = plan
        .seeds
        .iter()
        .map(|&s| run_seed(plan, s))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(GridOutcome { seeds })
}

/// Bin-sweep WERR by bin, averaged over seeds.
pub fn mean_bin_werr(outcome: &GridOutcome) -> BTreeMap<usize, f64> {
    let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for s in &outcome.seeds {
        for b in &s.bin_sweep {
            let e = acc.entry(b.bin).or_default();
            e.0 += b.werr;
            e.1 += 1;
        }
    }
    acc.into_iter().map(|(b, (sum, n))| (b, sum / n as f64)).collect()
}
