//! Command-line front end: synthetic screens, training, prediction, evaluation
//! and outcome enumeration.

mod commands;
pub mod config;

use std::io::Write;
use std::path::PathBuf;

use bystander_core::data::DataError;
use bystander_core::eval::EvalError;
use bystander_core::models::ModelError;
use bystander_core::numcore::{derive_seed, NumError};
use bystander_core::training::{SplitSpec, TrainError};
use bystander_core::SeqError;
use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use commands::{
    load_libraries, parse_views, prediction_rows, train_model, TrainOutcome, PREDICTION_COLUMNS,
};
pub use config::{EditorRegistry, Origin, RunConfig, CONFIG_KEYS};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_DIVERGED: u8 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{origin}: {key}: {message}")]
    Config {
        origin: String,
        key: String,
        message: String,
    },
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Seq(#[from] SeqError),
}

fn num_code(e: &NumError) -> u8 {
    match e {
        NumError::NonFinite { .. } => EXIT_DIVERGED,
        NumError::InvalidArgument(_) | NumError::InvalidSchedule(_) => EXIT_CONFIG,
        _ => EXIT_DATA,
    }
}

fn model_code(e: &ModelError) -> u8 {
    match e {
        ModelError::Num(n) => num_code(n),
        ModelError::UnknownEditor(_)
        | ModelError::InvalidConfig(_)
        | ModelError::ModeMismatch { .. } => EXIT_CONFIG,
        _ => EXIT_DATA,
    }
}

impl CliError {
    /// Process exit code: 2 configuration, 3 data, 4 numeric divergence.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config { .. } | CliError::Usage(_) => EXIT_CONFIG,
            CliError::Io { .. } | CliError::Seq(_) => EXIT_DATA,
            CliError::Data(DataError::Model(m)) => model_code(m),
            CliError::Data(_) => EXIT_DATA,
            CliError::Model(m) => model_code(m),
            CliError::Eval(EvalError::Model(m)) => model_code(m),
            CliError::Eval(_) => EXIT_DATA,
            CliError::Train(t) => match t {
                TrainError::DivergedLoss { .. } => EXIT_DIVERGED,
                TrainError::Num(n) => num_code(n),
                TrainError::Model(m) => model_code(m),
                TrainError::UnknownEditor(_)
                | TrainError::InvalidConfig(_)
                | TrainError::IndivisibleBatch { .. } => EXIT_CONFIG,
                _ => EXIT_DATA,
            },
        }
    }
}

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Parser)]
#[command(name = "bystander", version, about = "Base-editing outcome prediction")]
pub struct Cli {
    #[command(flatten)]
    pub settings: Settings,
    #[command(subcommand)]
    pub command: Command,
}

/// Configuration keys accepted as `--key value` on any subcommand.
#[derive(Debug, Default, Args)]
pub struct Settings {
    /// Flat key = value file; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<String>,
    /// protospacer, protospacer_pam or full.
    #[arg(long, global = true)]
    pub mode: Option<String>,
    /// one-stage, two-stage or multi-task.
    #[arg(long, global = true)]
    pub variant: Option<String>,
    /// Editable protospacer positions, `A:B`, 1-based inclusive.
    #[arg(long, global = true)]
    pub window: Option<String>,
    /// A count (synthetic editors E1..En) or `id:CLASS` list.
    #[arg(long, global = true)]
    pub editors: Option<String>,
    #[arg(long, global = true)]
    pub editor: Option<String>,
    #[arg(long, global = true)]
    pub workers: Option<String>,
    /// Which of the three repeated splits to use.
    #[arg(long, global = true)]
    pub replicate: Option<String>,
    #[arg(long = "d_model", alias = "d-model", global = true)]
    pub d_model: Option<String>,
    #[arg(long, global = true)]
    pub heads: Option<String>,
    #[arg(long, global = true)]
    pub blocks: Option<String>,
    #[arg(long = "position_bias", alias = "position-bias", global = true)]
    pub position_bias: Option<String>,
    #[arg(
        long = "efficiency_batch_size",
        alias = "efficiency-batch-size",
        global = true
    )]
    pub efficiency_batch_size: Option<String>,
    #[arg(long = "efficiency_epochs", alias = "efficiency-epochs", global = true)]
    pub efficiency_epochs: Option<String>,
    #[arg(
        long = "proportion_batch_size",
        alias = "proportion-batch-size",
        global = true
    )]
    pub proportion_batch_size: Option<String>,
    #[arg(long = "proportion_epochs", alias = "proportion-epochs", global = true)]
    pub proportion_epochs: Option<String>,
    #[arg(long = "base_lr", alias = "base-lr", global = true)]
    pub base_lr: Option<String>,
    #[arg(long = "lr_max_multiplier", alias = "lr-max-multiplier", global = true)]
    pub lr_max_multiplier: Option<String>,
    #[arg(long = "cycle_epochs", alias = "cycle-epochs", global = true)]
    pub cycle_epochs: Option<String>,
    #[arg(long, global = true)]
    pub dropout: Option<String>,
    #[arg(long, global = true)]
    pub l2: Option<String>,
    #[arg(long = "log_timing", alias = "log-timing", global = true)]
    pub log_timing: Option<String>,
    /// References per synthetic editor.
    #[arg(long, global = true)]
    pub refs: Option<String>,
    /// Simulated reads per reference.
    #[arg(long, global = true)]
    pub reads: Option<String>,
}

impl Settings {
    fn pairs(&self) -> [(&'static str, &Option<String>); 24] {
        [
            ("seed", &self.seed),
            ("mode", &self.mode),
            ("variant", &self.variant),
            ("window", &self.window),
            ("editors", &self.editors),
            ("editor", &self.editor),
            ("workers", &self.workers),
            ("replicate", &self.replicate),
            ("d_model", &self.d_model),
            ("heads", &self.heads),
            ("blocks", &self.blocks),
            ("position_bias", &self.position_bias),
            ("efficiency_batch_size", &self.efficiency_batch_size),
            ("efficiency_epochs", &self.efficiency_epochs),
            ("proportion_batch_size", &self.proportion_batch_size),
            ("proportion_epochs", &self.proportion_epochs),
            ("base_lr", &self.base_lr),
            ("lr_max_multiplier", &self.lr_max_multiplier),
            ("cycle_epochs", &self.cycle_epochs),
            ("dropout", &self.dropout),
            ("l2", &self.l2),
            ("log_timing", &self.log_timing),
            ("refs", &self.refs),
            ("reads", &self.reads),
        ]
    }

    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        for (key, value) in self.pairs() {
            if let Some(v) = value {
                cfg.set(key, v, &Origin::Flag)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a screen: one library per editor plus the oracle truth file.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Split, train and write a checkpoint with its training log.
    Train {
        #[arg(long, num_args = 1.., required = true)]
        library: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Outcome distributions for references, most likely first.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Inline reference, laid out as the checkpoint's mode dictates.
        #[arg(long)]
        sequence: Vec<String>,
        /// One reference per line, optionally `id<TAB>sequence`.
        #[arg(long)]
        sequences: Option<PathBuf>,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Correlation report and scatter file for a held-out library.
    Evaluate {
        #[arg(long, conflicts_with = "oracle", required_unless_present = "oracle")]
        checkpoint: Option<PathBuf>,
        /// Use a truth file's oracle probabilities as the predictions.
        #[arg(long)]
        oracle: Option<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        library: Vec<PathBuf>,
        /// Comma-separated subset of all, wildtype, nonwild.
        #[arg(long, default_value = "all,wildtype,nonwild")]
        views: String,
        /// Average per-reference correlations instead of pooling rows.
        #[arg(long)]
        per_reference: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// List every legal outcome of a reference.
    Enumerate {
        #[arg(long)]
        sequence: String,
        /// ABE or CBE.
        #[arg(long, default_value = "ABE")]
        class: String,
    },
}

/// Seed of the `replicate`-th repeated split.
pub fn replicate_seed(seed: u64, replicate: usize) -> u64 {
    let spec = SplitSpec::default();
    derive_seed(
        seed,
        &format!("replicate/{}", spec.replicate_seeds[replicate]),
    )
}

/// Run a parsed command, writing human-readable output to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = cli.settings.resolve()?;
    match &cli.command {
        Command::Synth { out: dir } => commands::synth(&cfg, dir, out),
        Command::Train { library, out: dir } => commands::train(&cfg, library, dir, out),
        Command::Predict {
            checkpoint,
            sequence,
            sequences,
            out: path,
        } => commands::predict(
            &cfg,
            checkpoint,
            sequence,
            sequences.as_deref(),
            path.as_deref(),
            out,
        ),
        Command::Evaluate {
            checkpoint,
            oracle,
            library,
            views,
            per_reference,
            out: dir,
        } => commands::evaluate(
            &cfg,
            commands::Source::pick(checkpoint.as_deref(), oracle.as_deref()),
            library,
            views,
            *per_reference,
            dir,
            out,
        ),
        Command::Enumerate { sequence, class } => commands::enumerate(&cfg, sequence, class, out),
    }
}

/// Parse `args` (program name first) and run, returning the exit code. Errors
/// go to `err` as a single `ERROR <code>: message` line.
pub fn main_with(
    args: impl IntoIterator<Item = String>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> u8 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return 0;
            }
            let first = e.to_string();
            let first = first
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            let _ = writeln!(err, "ERROR {EXIT_CONFIG}: {first}");
            return EXIT_CONFIG;
        }
    };
    match run(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let code = e.exit_code();
            let msg = e.to_string().replace('\n', " ");
            let _ = writeln!(err, "ERROR {code}: {msg}");
            code
        }
    }
}
