//! Experiment plans: everything a grid run needs, loaded from JSON.

use std::path::{Path, PathBuf};

use ctcssl::confidence::ConfidenceTrainConfig;
use ctcssl::corpus::CorpusConfig;
use ctcssl::manifest::read_json;
use ctcssl::train::{LrSchedule, Optimizer, TrainConfig};
use ctcssl::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelPreset {
    pub hidden_units: usize,
    pub num_layers: usize,
    pub bidirectional: bool,
}

impl ModelPreset {
    pub fn student() -> Self {
        let c = ModelConfig::student(1, 2, 0);
        Self {
            hidden_units: c.hidden_units,
            num_layers: c.num_layers,
            bidirectional: c.bidirectional,
        }
    }

    pub fn teacher() -> Self {
        let c = ModelConfig::teacher(1, 2, 0);
        Self {
            hidden_units: c.hidden_units,
            num_layers: c.num_layers,
            bidirectional: c.bidirectional,
        }
    }

    pub fn config(&self, input_dim: usize, num_labels: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            input_dim,
            hidden_units: self.hidden_units,
            num_layers: self.num_layers,
            bidirectional: self.bidirectional,
            num_labels,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudentInit {
    /// The trained baseline.
    Baseline,
    /// The student after the cross-entropy stage only.
    CrossEntropy,
}

/// Which parts of the grid to run. Baseline and teacher always run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridStages {
    pub ssl: bool,
    pub self_training: bool,
    pub bin_sweep: bool,
    pub low_high: bool,
    pub strategies: bool,
    pub domains: bool,
}

impl Default for GridStages {
    fn default() -> Self {
        Self {
            ssl: true,
            self_training: true,
            bin_sweep: true,
            low_high: true,
            strategies: true,
            domains: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentPlan {
    /// JSON corpus config, relative to the plan file. Overrides `corpus`.
    pub corpus_config: Option<PathBuf>,
    pub corpus: CorpusConfig,
    pub student: ModelPreset,
    pub teacher: ModelPreset,
    /// Frame-level cross-entropy stage on the labelled split.
    pub ce: TrainConfig,
    /// CTC stage of the baseline and teacher on the labelled split.
    pub ctc: TrainConfig,
    /// CTC stage of every student on labelled plus pseudo-labelled data.
    pub ssl: TrainConfig,
    /// Students train for at least this many minibatch updates.
    pub ssl_min_updates: usize,
    /// Where student training starts.
    pub student_init: StudentInit,
    pub unlabelled_weight: f64,
    pub confidence: ConfidenceTrainConfig,
    pub beam_width: usize,
    pub max_per_content: usize,
    pub max_per_device: usize,
    /// Pseudo-labelled utterances per single-bin student.
    pub bin_budget: usize,
    /// Pseudo-labelled utterances for each of the lowest/highest three-bin students.
    pub low_high_budget: usize,
    /// Pseudo-labelled utterances for the ND, UD and WS students.
    pub strategy_budget: usize,
    /// Pseudo-labelled utterances per domain student, the combined one included.
    pub domain_budget: usize,
    pub stages: GridStages,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        let adam = |learning_rate, epochs| TrainConfig {
            learning_rate,
            batch_size: 8,
            epochs,
            optimizer: Optimizer::Adam,
            clip_norm: 5.0,
            schedule: LrSchedule::Cosine,
            seed: 0,
        };
        Self {
            corpus_config: None,
            corpus: CorpusConfig::default(),
            student: ModelPreset::student(),
            teacher: ModelPreset::teacher(),
            ce: adam(0.01, 10),
            ctc: adam(0.01, 30),
            ssl: adam(0.005, 8),
            ssl_min_updates: 800,
            student_init: StudentInit::Baseline,
            unlabelled_weight: 1.0,
            confidence: ConfidenceTrainConfig::default(),
            beam_width: 8,
            max_per_content: 50,
            max_per_device: 50,
            bin_budget: 200,
            low_high_budget: 900,
            strategy_budget: 1000,
            domain_budget: 800,
            stages: GridStages::default(),
            seeds: vec![0, 1, 2, 3, 4],
            output_dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentPlan {
    /// Reads a plan; a relative `corpus_config` is resolved against the
    /// plan's directory and loaded into `corpus`.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        if !path.exists() {
            return Err(CliError::MissingFile(path.to_path_buf()));
        }
        let mut plan: ExperimentPlan = read_json(path)?;
        if let Some(rel) = plan.corpus_config.clone() {
            let base = path.parent().unwrap_or(Path::new("."));
            let resolved = if rel.is_absolute() { rel } else { base.join(rel) };
            plan.corpus = load_corpus_config(&resolved)?;
            plan.corpus_config = Some(resolved);
        }
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.seeds.is_empty() {
            return Err(CliError::Config("plan needs at least one seed".into()));
        }
        self.corpus.validate()?;
        for (name, cfg) in [("ce", &self.ce), ("ctc", &self.ctc), ("ssl", &self.ssl)] {
            cfg.validate()
                .map_err(|e| CliError::Config(format!("{name}: {e}")))?;
        }
        for (name, v) in [
            ("beam_width", self.beam_width),
            ("max_per_content", self.max_per_content),
            ("max_per_device", self.max_per_device),
            ("bin_budget", self.bin_budget),
            ("low_high_budget", self.low_high_budget),
            ("strategy_budget", self.strategy_budget),
            ("domain_budget", self.domain_budget),
        ] {
            if v == 0 {
                return Err(CliError::Config(format!("{name} must be positive")));
            }
        }
        if !(self.unlabelled_weight >= 0.0) {
            return Err(CliError::Config("unlabelled_weight must be non-negative".into()));
        }
        for (name, p) in [("student", &self.student), ("teacher", &self.teacher)] {
            p.config(self.corpus.input_dim, self.corpus.num_symbols + 1, 0)
                .validate()
                .map_err(|e| CliError::Config(format!("{name}: {e}")))?;
        }
        Ok(())
    }
}

pub fn load_corpus_config(path: &Path) -> Result<CorpusConfig, CliError> {
    if !path.exists() {
        return Err(CliError::MissingFile(path.to_path_buf()));
    }
    let cfg: CorpusConfig = read_json(path)?;
    cfg.validate()?;
    Ok(cfg)
}
