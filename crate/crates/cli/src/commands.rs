//! Subcommand implementations. Each returns the lines it prints so tests can
//! inspect them.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use ctcssl::checkpoint::{load_checkpoint_for, save_checkpoint};
use ctcssl::confidence::{train_confidence, ConfidenceRecord, ConfidenceTrainConfig};
use ctcssl::corpus::{generate, CorpusConfig, Split, SyntheticUtterance};
use ctcssl::kd::{generate_pseudo_labels, self_training_labels, Provenance, PseudoLabeledUtterance, UnlabelledRef};
use ctcssl::manifest::{read_corpus, read_json, read_jsonl, write_corpus, write_jsonl};
use ctcssl::metrics::werr;
use ctcssl::selection::{
    apply_common_filters, partition_by_bin, sample_by_domain, sample_combined, Budget, Selection, SelectionConfig,
    SelectionRecord, Strategy, UtteranceMeta,
};
use ctcssl::train::TrainConfig;
use ctcssl::ModelParams;
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::grid::run_grid;
use crate::pipeline::{ce_examples, confidence_inputs, evaluate};
use crate::plan::{load_corpus_config, ExperimentPlan, ModelPreset};
use crate::report::{num, write_reports, REPORT_FILES};

fn io_out(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Output {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn split_of(corpus: &ctcssl::corpus::Corpus, split: Split) -> &[SyntheticUtterance] {
    corpus.split(split)
}

fn load_corpus_dir(dir: &Path) -> Result<ctcssl::corpus::Corpus, CliError> {
    let header = dir.join("corpus.json");
    if !header.exists() {
        return Err(CliError::MissingFile(header));
    }
    Ok(read_corpus(dir)?.1)
}

pub fn gen_data(config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<Vec<String>, CliError> {
    let mut cfg = match config {
        Some(p) => load_corpus_config(p)?,
        None => CorpusConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let corpus = generate(&cfg)?;
    write_corpus(out, &cfg, &corpus)?;
    Ok(Split::ALL
        .iter()
        .map(|&s| format!("{}: {} utterances", s.name(), corpus.split(s).len()))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Baseline,
    Teacher,
    Student,
}

impl std::str::FromStr for Role {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "baseline" => Ok(Role::Baseline),
            "teacher" => Ok(Role::Teacher),
            "student" => Ok(Role::Student),
            other => Err(format!("unknown role {other:?} (expected baseline, teacher or student)")),
        }
    }
}

/// Settings of one `train` invocation, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRun {
    /// Overrides the role's model preset.
    pub preset: Option<ModelPreset>,
    pub ce: TrainConfig,
    pub ctc: TrainConfig,
    /// Lower bound on CTC updates when pseudo-labelled data is added.
    pub min_updates: usize,
    pub unlabelled_weight: f64,
    pub seed: u64,
}

impl Default for TrainRun {
    fn default() -> Self {
        let plan = ExperimentPlan::default();
        Self {
            preset: None,
            ce: plan.ce,
            ctc: plan.ctc,
            min_updates: 0,
            unlabelled_weight: 1.0,
            seed: 0,
        }
    }
}

pub struct TrainArgs<'a> {
    pub role: Role,
    pub data: &'a Path,
    pub config: Option<&'a Path>,
    pub pseudo_labels: Option<&'a Path>,
    pub selection: Option<&'a Path>,
    pub out: &'a Path,
}

/// Cross-entropy then CTC training. Writes the checkpoint and
/// `<checkpoint>.loss.csv` with `stage,epoch,loss` rows.
pub fn train(args: &TrainArgs<'_>) -> Result<Vec<String>, CliError> {
    let run: TrainRun = match args.config {
        Some(p) if !p.exists() => return Err(CliError::MissingFile(p.to_path_buf())),
        Some(p) => read_json(p)?,
        None => TrainRun::default(),
    };
    let corpus = load_corpus_dir(args.data)?;
    let blank = corpus.alphabet.blank();
    let dim = corpus.labelled.first().map(|u| u.features.dim()).unwrap_or(1);
    let preset = run.preset.clone().unwrap_or_else(|| match args.role {
        Role::Teacher => ModelPreset::teacher(),
        Role::Baseline | Role::Student => ModelPreset::student(),
    });
    let config = preset.config(dim, corpus.alphabet.size(), run.seed);
    let init = ModelParams::init(config).map_err(|e| CliError::Config(e.to_string()))?;

    let mut pseudo: Vec<PseudoLabeledUtterance> = Vec::new();
    match (args.role, args.pseudo_labels) {
        (Role::Student, Some(p)) => {
            pseudo = read_jsonl(p)?;
            if let Some(sel) = args.selection {
                let keep: HashSet<String> = read_jsonl::<SelectionRecord>(sel)?.into_iter().map(|r| r.id).collect();
                pseudo.retain(|l| keep.contains(&l.id));
            }
        }
        (Role::Student, None) => {
            return Err(CliError::Config("role student needs --pseudo-labels".into()));
        }
        (_, Some(_)) => {
            return Err(CliError::Config("--pseudo-labels is only used with role student".into()));
        }
        _ => {}
    }

    let ce_out = ctcssl::train::train_ce(init, &ce_examples(&corpus.labelled), &run.ce)?;
    let added = pseudo.len();
    let ctc_out = if added > 0 {
        crate::pipeline::train_student(
            &ce_out.params,
            &corpus.labelled,
            &corpus.unlabelled,
            pseudo,
            blank,
            &run.ctc,
            run.min_updates,
            run.unlabelled_weight,
        )?
    } else {
        ctcssl::train::train_ctc(
            ce_out.params.clone(),
            &crate::pipeline::ctc_examples(&corpus.labelled),
            blank,
            &run.ctc,
        )?
    };
    save_checkpoint(&ctc_out.params, args.out)?;

    let curve_path = PathBuf::from(format!("{}.loss.csv", args.out.display()));
    let mut w = csv::Writer::from_path(&curve_path).map_err(|e| io_out(&curve_path, e))?;
    w.write_record(["stage", "epoch", "loss"]).map_err(|e| io_out(&curve_path, e))?;
    for (stage, curve) in [("ce", &ce_out.loss_curve), ("ctc", &ctc_out.loss_curve)] {
        for (i, v) in curve.iter().enumerate() {
            w.write_record([stage.to_string(), (i + 1).to_string(), num(*v)])
                .map_err(|e| io_out(&curve_path, e))?;
        }
    }
    w.flush().map_err(|e| io_out(&curve_path, e))?;

    let mut lines = vec![format!(
        "trained {:?} model ({} parameters) on {} labelled + {added} pseudo-labelled utterances",
        args.role,
        ctc_out.params.num_params(),
        corpus.labelled.len()
    )];
    if ctc_out.skipped > 0 {
        lines.push(format!("skipped {} infeasible utterances", ctc_out.skipped));
    }
    lines.push(format!("checkpoint: {}", args.out.display()));
    Ok(lines)
}

pub fn pseudo_label(
    checkpoint: &Path,
    data: &Path,
    split: Split,
    provenance: Provenance,
    out: &Path,
) -> Result<Vec<String>, CliError> {
    let corpus = load_corpus_dir(data)?;
    let model = load_checkpoint_for(checkpoint, &corpus.alphabet)?;
    let utts = split_of(&corpus, split);
    let refs: Vec<UnlabelledRef<'_>> = utts
        .iter()
        .map(|u| UnlabelledRef {
            id: u.id(),
            features: &u.features,
        })
        .collect();
    let blank = corpus.alphabet.blank();
    let labels = match provenance {
        Provenance::Teacher => generate_pseudo_labels(&model, &refs, blank)?,
        Provenance::SelfTraining => self_training_labels(&model, &refs, blank)?,
    };
    write_jsonl(out, &labels.labels)?;
    Ok(vec![
        format!("labelled {} of {} utterances", labels.labels.len(), utts.len()),
        format!("dropped {} all-blank utterances", labels.dropped),
    ])
}

/// Fits the confidence model on `calibration` decodes and scores `split`,
/// writing the confidence manifest and the selection metadata manifest.
pub fn confidence(
    checkpoint: &Path,
    data: &Path,
    split: Split,
    beam_width: usize,
    confidence_out: &Path,
    metadata_out: &Path,
) -> Result<Vec<String>, CliError> {
    let corpus = load_corpus_dir(data)?;
    let model = load_checkpoint_for(checkpoint, &corpus.alphabet)?;
    let blank = corpus.alphabet.blank();
    let calib = confidence_inputs(&model, &corpus.calibration, blank, beam_width)?;
    let correct: Vec<bool> = calib
        .iter()
        .zip(&corpus.calibration)
        .map(|((_, h), u)| *h == u.reference)
        .collect();
    let feats: Vec<_> = calib.into_iter().map(|(f, _)| f).collect();
    let fit = train_confidence(&feats, &correct, &ConfidenceTrainConfig::default())
        .map_err(|e| CliError::Data(format!("confidence model: {e}")))?;
    let utts = split_of(&corpus, split);
    let scored = confidence_inputs(&model, utts, blank, beam_width)?;
    let mut records: Vec<ConfidenceRecord> = Vec::with_capacity(utts.len());
    let mut meta = Vec::with_capacity(utts.len());
    for (u, (f, hyp)) in utts.iter().zip(&scored) {
        let r = fit.model.score(f);
        meta.push(UtteranceMeta {
            id: u.id().to_string(),
            device: u.info.device.clone(),
            speaker: u.info.speaker.clone(),
            domain: u.info.domain.clone(),
            hypothesis: hyp.render(&corpus.alphabet),
            bin: r.bin,
            duration: u.features.frames(),
            wakeword_only: u.info.wakeword_only,
        });
        records.push(r);
    }
    write_jsonl(confidence_out, &records)?;
    write_jsonl(metadata_out, &meta)?;
    let mut counts = [0usize; ctcssl::confidence::NUM_BINS];
    for r in &records {
        counts[r.bin] += 1;
    }
    Ok(vec![
        format!("scored {} utterances", records.len()),
        format!("bin counts: {counts:?}"),
    ])
}

pub struct SelectArgs<'a> {
    pub metadata: &'a Path,
    pub config: Option<&'a Path>,
    pub strategy: Option<Strategy>,
    pub budget: Option<usize>,
    pub frames: bool,
    pub weights: Option<Vec<f64>>,
    pub domains: Vec<String>,
    pub seed: Option<u64>,
    pub out: &'a Path,
}

pub fn select(args: &SelectArgs<'_>) -> Result<Vec<String>, CliError> {
    let mut cfg: SelectionConfig = match args.config {
        Some(p) if !p.exists() => return Err(CliError::MissingFile(p.to_path_buf())),
        Some(p) => read_json(p)?,
        None => SelectionConfig::default(),
    };
    if let Some(s) = args.strategy {
        cfg.strategy = s;
    }
    if let Some(n) = args.budget {
        cfg.budget = if args.frames { Budget::Frames(n) } else { Budget::Utterances(n) };
    }
    if let Some(w) = &args.weights {
        cfg.ws_weights = w.clone();
    }
    if !args.domains.is_empty() {
        cfg.domains = Some(args.domains.clone());
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if !args.metadata.exists() {
        return Err(CliError::MissingFile(args.metadata.to_path_buf()));
    }
    let pool: Vec<UtteranceMeta> = read_jsonl(args.metadata)?;
    let (sel, label): (Selection, String) = match &cfg.domains {
        Some(d) => (sample_by_domain(&pool, d, cfg.budget, &cfg)?, format!("domain:{}", d.join("+"))),
        None => {
            let filtered = apply_common_filters(&pool, &cfg);
            let bins = partition_by_bin(&filtered.kept);
            (sample_combined(&bins, &cfg)?, cfg.strategy.code().to_string())
        }
    };
    write_jsonl(args.out, &sel.records(&label, cfg.seed))?;
    let mut lines = vec![format!("selected {} utterances ({label}, seed {})", sel.selected.len(), cfg.seed)];
    lines.push("group,ideal,quota,realized".into());
    for g in 0..sel.groups.len() {
        lines.push(format!(
            "{},{},{},{}",
            sel.groups[g],
            num(sel.plan.ideal[g]),
            sel.plan.quotas[g],
            sel.realized[g]
        ));
    }
    lines.extend(sel.warnings.iter().map(|w| format!("warning: {w}")));
    Ok(lines)
}

pub fn run_grid_cmd(plan_path: &Path, out: Option<&Path>, seeds: Option<Vec<u64>>) -> Result<Vec<String>, CliError> {
    let mut plan = ExperimentPlan::load(plan_path)?;
    if let Some(o) = out {
        plan.output_dir = o.to_path_buf();
    } else if plan.output_dir.is_relative() {
        plan.output_dir = plan_path.parent().unwrap_or(Path::new(".")).join(&plan.output_dir);
    }
    if let Some(s) = seeds {
        plan.seeds = s;
    }
    let outcome = run_grid(&plan)?;
    write_reports(&outcome, &plan.output_dir)?;
    let mut lines: Vec<String> = REPORT_FILES
        .iter()
        .map(|f| format!("wrote {}", plan.output_dir.join(f).display()))
        .collect();
    for s in &outcome.seeds {
        if let (Some(b), Some(t)) = (s.model("baseline"), s.model("teacher")) {
            lines.push(format!("seed {}: baseline WER {}, teacher WER {}", s.seed, num(b.report.wer), num(t.report.wer)));
        }
    }
    Ok(lines)
}

/// Scores a checkpoint on a split and writes per-domain and overall rows.
pub fn evaluate_cmd(
    checkpoint: &Path,
    data: &Path,
    split: Split,
    name: &str,
    baseline: Option<&Path>,
    out: &Path,
) -> Result<Vec<String>, CliError> {
    let corpus = load_corpus_dir(data)?;
    let blank = corpus.alphabet.blank();
    let model = load_checkpoint_for(checkpoint, &corpus.alphabet)?;
    let utts = split_of(&corpus, split);
    let report = evaluate(&model, utts, blank)?;
    let base = match baseline {
        Some(p) => Some(evaluate(&load_checkpoint_for(p, &corpus.alphabet)?, utts, blank)?),
        None => None,
    };
    let mut w = csv::Writer::from_path(out).map_err(|e| io_out(out, e))?;
    let header = [
        "model",
        "domain",
        "utterances",
        "reference_tokens",
        "substitutions",
        "deletions",
        "insertions",
        "wer",
        "werr",
    ];
    w.write_record(header).map_err(|e| io_out(out, e))?;
    let werr_cell = |b: Option<f64>, m: f64| -> Result<String, CliError> {
        match b {
            Some(b) => Ok(num(werr(b, m)?)),
            None => Ok(String::new()),
        }
    };
    let mut rows = vec![(
        "overall".to_string(),
        report.utterances,
        report.reference_tokens,
        report.edits,
        report.wer,
        werr_cell(base.as_ref().map(|b| b.wer), report.wer)?,
    )];
    for (d, c) in &report.domain_counts {
        let b = base.as_ref().and_then(|b| b.per_domain.get(d).copied());
        rows.push((
            d.clone(),
            c.utterances,
            c.reference_tokens,
            c.edits,
            report.per_domain[d],
            werr_cell(b, report.per_domain[d])?,
        ));
    }
    let mut lines = Vec::new();
    for (domain, n, tokens, e, wer, werr) in rows {
        w.write_record([
            name.to_string(),
            domain.clone(),
            n.to_string(),
            tokens.to_string(),
            e.substitutions.to_string(),
            e.deletions.to_string(),
            e.insertions.to_string(),
            num(wer),
            werr.clone(),
        ])
        .map_err(|e| io_out(out, e))?;
        lines.push(format!("{domain}: WER {}{}", num(wer), if werr.is_empty() { String::new() } else { format!(" WERR {werr}") }));
    }
    w.flush().map_err(|e| io_out(out, e))?;
    Ok(lines)
}

#[derive(Debug, Deserialize)]
struct SummaryRow {
    seed: u64,
    model: String,
    wer: f64,
    werr: f64,
}

/// Averages `summary.csv` over seeds into `aggregate.csv` with
/// `model,seeds,mean_wer,mean_werr,min_werr,max_werr` rows, in first-seen
/// model order.
pub fn report(results: &Path) -> Result<Vec<String>, CliError> {
    let summary = results.join("summary.csv");
    if !summary.exists() {
        return Err(CliError::MissingFile(summary));
    }
    let mut rdr = csv::Reader::from_path(&summary)?;
    let mut order: Vec<String> = Vec::new();
    let mut acc: HashMap<String, Vec<(u64, f64, f64)>> = HashMap::new();
    for row in rdr.deserialize::<SummaryRow>() {
        let row = row?;
        if !acc.contains_key(&row.model) {
            order.push(row.model.clone());
        }
        acc.entry(row.model).or_default().push((row.seed, row.wer, row.werr));
    }
    let out = results.join("aggregate.csv");
    let mut w = csv::Writer::from_path(&out).map_err(|e| io_out(&out, e))?;
    w.write_record(["model", "seeds", "mean_wer", "mean_werr", "min_werr", "max_werr"])
        .map_err(|e| io_out(&out, e))?;
    let mut lines = vec![format!("{:<18} {:>5} {:>10} {:>10}", "model", "seeds", "mean WER", "mean WERR")];
    for m in &order {
        let v = &acc[m];
        let n = v.len() as f64;
        let mean_wer = v.iter().map(|x| x.1).sum::<f64>() / n;
        let mean_werr = v.iter().map(|x| x.2).sum::<f64>() / n;
        let min = v.iter().map(|x| x.2).fold(f64::INFINITY, f64::min);
        let max = v.iter().map(|x| x.2).fold(f64::NEG_INFINITY, f64::max);
        w.write_record([m.clone(), v.len().to_string(), num(mean_wer), num(mean_werr), num(min), num(max)])
            .map_err(|e| io_out(&out, e))?;
        lines.push(format!("{m:<18} {:>5} {mean_wer:>10.2} {mean_werr:>10.2}", v.len()));
    }
    w.flush().map_err(|e| io_out(&out, e))?;
    lines.push(format!("wrote {}", out.display()));
    Ok(lines)
}
