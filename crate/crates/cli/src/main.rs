mod commands;
mod exit;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use msclr::dataio::Stream;
use msclr::evalkit::EnsembleOrder;

#[derive(Parser)]
#[command(name = "msclr", version, about = "Multi-skeleton contrastive pretraining for skeleton action recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every command that reads a run config.
#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    /// TOML run config; keys not set fall back to the named preset.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Preset used when no config file is given (`desk` or `paper`).
    #[arg(long)]
    pub preset: Option<String>,
    /// Override any config key, e.g. `--set pretrain.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Dataset directory or manifest (relative paths honor MSCLR_DATA_ROOT).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Comma-separated pretraining formats.
    #[arg(long, value_delimiter = ',')]
    pub formats: Option<Vec<String>>,
    /// Comma-separated streams (joint, motion, bone).
    #[arg(long, value_delimiter = ',')]
    pub streams: Option<Vec<Stream>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-format dataset.
    MakeSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 20)]
        per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Every n-th clip of a class goes to the test split.
        #[arg(long, default_value_t = 3)]
        test_every: usize,
    },
    /// Contrastive pretraining; one checkpoint per configured stream.
    Pretrain {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        epochs: Option<usize>,
        /// Print the resolved schedule as JSON and exit without training.
        #[arg(long)]
        dry_run: bool,
    },
    /// Linear evaluation of pretrained checkpoints.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Checkpoint to evaluate (repeat for several streams). Defaults to
        /// the checkpoints `pretrain` writes under the output directory.
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
        /// Comma-separated formats that get a linear head.
        #[arg(long, value_delimiter = ',')]
        eval_formats: Option<Vec<String>>,
        /// Add format-ensembled rows.
        #[arg(long)]
        ensemble: bool,
        #[arg(long, value_enum)]
        order: Option<OrderArg>,
        /// Split to evaluate on.
        #[arg(long)]
        split: Option<String>,
        /// Report path (default: <out>/report.json).
        #[arg(long)]
        report: Option<PathBuf>,
        /// Write a per-class difference chart against `--baseline`.
        #[arg(long)]
        plot: Option<PathBuf>,
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Check a config and its dataset without training.
    Validate {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Summarize a report, optionally against a baseline.
    Report {
        report: PathBuf,
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum OrderArg {
    FormatsThenStreams,
    StreamsThenFormats,
}

impl From<OrderArg> for EnsembleOrder {
    fn from(o: OrderArg) -> Self {
        match o {
            OrderArg::FormatsThenStreams => EnsembleOrder::FormatsThenStreams,
            OrderArg::StreamsThenFormats => EnsembleOrder::StreamsThenFormats,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::MakeSynthetic {
            out,
            classes,
            per_class,
            seed,
            test_every,
        } => commands::make_synthetic(&out, classes, per_class, seed, test_every),
        Command::Pretrain { cfg, epochs, dry_run } => commands::pretrain(&cfg, epochs, dry_run),
        Command::Eval {
            cfg,
            checkpoint,
            eval_formats,
            ensemble,
            order,
            split,
            report,
            plot,
            baseline,
        } => commands::eval(commands::EvalArgs {
            cfg,
            checkpoints: checkpoint,
            eval_formats,
            ensemble,
            order: order.map(Into::into),
            split,
            report,
            plot,
            baseline,
        }),
        Command::Validate { cfg } => commands::validate(&cfg),
        Command::Report { report, baseline, svg } => commands::report(&report, baseline.as_deref(), svg.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::code_for(&e))
        }
    }
}
