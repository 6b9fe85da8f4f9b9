use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ctcssl::corpus::Split;
use ctcssl::kd::Provenance;
use ctcssl::selection::Strategy;
use ctcssl_cli::commands::{self, Role, SelectArgs, TrainArgs};
use ctcssl_cli::CliError;

/// Semi-supervised CTC training with teacher pseudo-labels.
#[derive(Parser)]
#[command(name = "ctcssl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Labelled,
    Unlabelled,
    Eval,
    Calibration,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Labelled => Split::Labelled,
            SplitArg::Unlabelled => Split::Unlabelled,
            SplitArg::Eval => Split::Eval,
            SplitArg::Calibration => Split::Calibration,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum RoleArg {
    Baseline,
    Teacher,
    Student,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProvenanceArg {
    Teacher,
    SelfTraining,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    #[value(name = "ND")]
    Nd,
    #[value(name = "UD")]
    Ud,
    #[value(name = "WS")]
    Ws,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus directory.
    GenData {
        /// Corpus config JSON; built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
    /// Cross-entropy then CTC training; writes a checkpoint and its loss curves.
    Train {
        #[arg(long, value_enum)]
        role: RoleArg,
        /// Corpus directory.
        #[arg(long, default_value = "data")]
        data: PathBuf,
        /// Training settings JSON; defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Pseudo-label manifest (role student only).
        #[arg(long)]
        pseudo_labels: Option<PathBuf>,
        /// Selection manifest restricting the pseudo-labels.
        #[arg(long)]
        selection: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label a split with a checkpoint's collapsed best paths.
    PseudoLabel {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "data")]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "unlabelled")]
        split: SplitArg,
        #[arg(long, value_enum, default_value = "teacher")]
        provenance: ProvenanceArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the confidence model on the calibration split and score a split,
    /// writing confidence records and selection metadata.
    Confidence {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "data")]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "unlabelled")]
        split: SplitArg,
        #[arg(long, default_value_t = 8)]
        beam_width: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metadata: PathBuf,
    },
    /// Select unlabelled utterances from a metadata manifest.
    Select {
        #[arg(long)]
        metadata: PathBuf,
        /// Selection config JSON; defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        strategy: Option<StrategyArg>,
        /// Utterances (or frames with --frames).
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        frames: bool,
        /// Ten comma-separated WS weights.
        #[arg(long, value_delimiter = ',')]
        weights: Option<Vec<f64>>,
        /// Restrict to these domains (repeatable); switches to domain sampling.
        #[arg(long = "domain")]
        domains: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the experiment grid of a plan and write its CSV reports.
    RunGrid {
        #[arg(long)]
        plan: PathBuf,
        /// Overrides the plan's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the plan's seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Score a checkpoint; writes per-domain and overall WER rows.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "data")]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "eval")]
        split: SplitArg,
        #[arg(long, default_value = "model")]
        name: String,
        /// Baseline checkpoint for WERR.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Average a grid's summary over seeds.
    Report {
        #[arg(long, default_value = "results")]
        results: PathBuf,
    },
}

fn run(cli: Cli) -> Result<Vec<String>, CliError> {
    match cli.command {
        Command::GenData { config, seed, out } => commands::gen_data(config.as_deref(), seed, &out),
        Command::Train {
            role,
            data,
            config,
            pseudo_labels,
            selection,
            out,
        } => commands::train(&TrainArgs {
            role: match role {
                RoleArg::Baseline => Role::Baseline,
                RoleArg::Teacher => Role::Teacher,
                RoleArg::Student => Role::Student,
            },
            data: &data,
            config: config.as_deref(),
            pseudo_labels: pseudo_labels.as_deref(),
            selection: selection.as_deref(),
            out: &out,
        }),
        Command::PseudoLabel {
            checkpoint,
            data,
            split,
            provenance,
            out,
        } => {
            let p = match provenance {
                ProvenanceArg::Teacher => Provenance::Teacher,
                ProvenanceArg::SelfTraining => Provenance::SelfTraining,
            };
            commands::pseudo_label(&checkpoint, &data, split.into(), p, &out)
        }
        Command::Confidence {
            checkpoint,
            data,
            split,
            beam_width,
            out,
            metadata,
        } => commands::confidence(&checkpoint, &data, split.into(), beam_width, &out, &metadata),
        Command::Select {
            metadata,
            config,
            strategy,
            budget,
            frames,
            weights,
            domains,
            seed,
            out,
        } => commands::select(&SelectArgs {
            metadata: &metadata,
            config: config.as_deref(),
            strategy: strategy.map(|s| match s {
                StrategyArg::Nd => Strategy::Natural,
                StrategyArg::Ud => Strategy::Uniform,
                StrategyArg::Ws => Strategy::Weighted,
            }),
            budget,
            frames,
            weights,
            domains,
            seed,
            out: &out,
        }),
        Command::RunGrid { plan, out, seeds } => commands::run_grid_cmd(&plan, out.as_deref(), seeds),
        Command::Evaluate {
            checkpoint,
            data,
            split,
            name,
            baseline,
            out,
        } => commands::evaluate_cmd(&checkpoint, &data, split.into(), &name, baseline.as_deref(), &out),
        Command::Report { results } => commands::report(&results),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.one_line());
            ExitCode::FAILURE
        }
    }
}
