//! CSV reports of a grid run. Values are printed with six decimals.
//!
//! | file | columns |
//! |------|---------|
//! | `summary.csv` | seed, model, selected, label_error, wer, werr |
//! | `pseudo_labels.csv` | seed, source, label_error, dropped |
//! | `bin_sweep.csv` | seed, bin, available, selected, label_error, wer, werr |
//! | `strategy.csv` | seed, strategy, selected, label_error, wer, werr |
//! | `domain_matrix.csv` | seed, model, then one column per test domain |
//! | `wer_report.csv` | seed, model, domain, utterances, reference_tokens, substitutions, deletions, insertions, wer |
//! | `quotas.csv` | seed, selection, group, ideal, quota, realized |
//! | `calibration.csv` | seed, bin, count, accuracy, mean_score |
//! | `filters.csv` | seed, wakeword_only, content_cap, device_cap |

use std::path::{Path, PathBuf};

use csv::Writer;

use crate::error::CliError;
use crate::grid::GridOutcome;

pub const REPORT_FILES: [&str; 9] = [
    "summary.csv",
    "pseudo_labels.csv",
    "bin_sweep.csv",
    "strategy.csv",
    "domain_matrix.csv",
    "wer_report.csv",
    "quotas.csv",
    "calibration.csv",
    "filters.csv",
];

pub fn num(v: f64) -> String {
    let s = format!("{v:.6}");
    if s == "-0.000000" {
        "0.000000".into()
    } else {
        s
    }
}

/// Empty cell for a missing value.
fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

struct Csv {
    path: PathBuf,
    w: Writer<std::fs::File>,
}

impl Csv {
    fn create(dir: &Path, name: &str, header: &[&str]) -> Result<Self, CliError> {
        let path = dir.join(name);
        let w = Writer::from_path(&path).map_err(|e| CliError::Output {
            path: path.clone(),
            message: e.to_string(),
        })?;
        let mut c = Csv { path, w };
        c.row(header.iter().map(|s| s.to_string()).collect())?;
        Ok(c)
    }

    fn row(&mut self, fields: Vec<String>) -> Result<(), CliError> {
        self.w.write_record(&fields).map_err(|e| CliError::Output {
            path: self.path.clone(),
            message: e.to_string(),
        })
    }

    fn finish(mut self) -> Result<(), CliError> {
        self.w.flush().map_err(|e| CliError::Output {
            path: self.path.clone(),
            message: e.to_string(),
        })
    }
}

pub fn write_reports(outcome: &GridOutcome, dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Output {
        path: dir.to_path_buf(),
        message: e.to_string(),
    })?;

    let mut summary = Csv::create(dir, "summary.csv", &["seed", "model", "selected", "label_error", "wer", "werr"])?;
    let mut pseudo = Csv::create(dir, "pseudo_labels.csv", &["seed", "source", "label_error", "dropped"])?;
    let mut sweep = Csv::create(dir, "bin_sweep.csv", &["seed", "bin", "available", "selected", "label_error", "wer", "werr"])?;
    let mut strat = Csv::create(dir, "strategy.csv", &["seed", "strategy", "selected", "label_error", "wer", "werr"])?;
    let domains: Vec<String> = outcome.seeds.first().map(|s| s.domains.clone()).unwrap_or_default();
    let mut header = vec!["seed", "model"];
    header.extend(domains.iter().map(String::as_str));
    let mut matrix = Csv::create(dir, "domain_matrix.csv", &header)?;
    let mut report = Csv::create(
        dir,
        "wer_report.csv",
        &[
            "seed",
            "model",
            "domain",
            "utterances",
            "reference_tokens",
            "substitutions",
            "deletions",
            "insertions",
            "wer",
        ],
    )?;
    let mut quotas = Csv::create(dir, "quotas.csv", &["seed", "selection", "group", "ideal", "quota", "realized"])?;
    let mut calib = Csv::create(dir, "calibration.csv", &["seed", "bin", "count", "accuracy", "mean_score"])?;
    let mut filters = Csv::create(dir, "filters.csv", &["seed", "wakeword_only", "content_cap", "device_cap"])?;

    for s in &outcome.seeds {
        let seed = s.seed.to_string();
        for m in &s.models {
            summary.row(vec![
                seed.clone(),
                m.name.clone(),
                m.selected.to_string(),
                opt(m.label_error),
                num(m.report.wer),
                num(m.werr),
            ])?;
            let r = &m.report;
            report.row(vec![
                seed.clone(),
                m.name.clone(),
                "overall".into(),
                r.utterances.to_string(),
                r.reference_tokens.to_string(),
                r.edits.substitutions.to_string(),
                r.edits.deletions.to_string(),
                r.edits.insertions.to_string(),
                num(r.wer),
            ])?;
            for (d, c) in &r.domain_counts {
                report.row(vec![
                    seed.clone(),
                    m.name.clone(),
                    d.clone(),
                    c.utterances.to_string(),
                    c.reference_tokens.to_string(),
                    c.edits.substitutions.to_string(),
                    c.edits.deletions.to_string(),
                    c.edits.insertions.to_string(),
                    num(r.per_domain[d]),
                ])?;
            }
        }
        pseudo.row(vec![seed.clone(), "teacher".into(), num(s.teacher_label_error), s.teacher_dropped.to_string()])?;
        pseudo.row(vec![seed.clone(), "self-training".into(), num(s.self_label_error), s.self_dropped.to_string()])?;
        for b in &s.bin_sweep {
            sweep.row(vec![
                seed.clone(),
                b.bin.to_string(),
                b.available.to_string(),
                b.selected.to_string(),
                opt(b.label_error),
                num(b.wer),
                num(b.werr),
            ])?;
        }
        for m in &s.strategies {
            strat.row(vec![
                seed.clone(),
                m.name.clone(),
                m.selected.to_string(),
                opt(m.label_error),
                num(m.report.wer),
                num(m.werr),
            ])?;
        }
        for line in &s.domain_matrix {
            let mut row = vec![seed.clone(), line.model.clone()];
            row.extend(line.werr.iter().map(|(_, v)| num(*v)));
            matrix.row(row)?;
        }
        for q in &s.quotas {
            quotas.row(vec![
                seed.clone(),
                q.selection.clone(),
                q.group.clone(),
                num(q.ideal),
                q.quota.to_string(),
                q.realized.to_string(),
            ])?;
        }
        for c in &s.calibration {
            calib.row(vec![seed.clone(), c.bin.to_string(), c.count.to_string(), num(c.accuracy), num(c.mean_score)])?;
        }
        filters.row(vec![
            seed.clone(),
            s.removed.wakeword_only.to_string(),
            s.removed.content_cap.to_string(),
            s.removed.device_cap.to_string(),
        ])?;
    }
    for c in [summary, pseudo, sweep, strat, matrix, report, quotas, calib, filters] {
        c.finish()?;
    }
    Ok(())
}
