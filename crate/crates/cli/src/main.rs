//! `eventrade`: domain adaptation, detector training, detection, backtesting
//! and price labelling from the command line.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use eventrade::detector::CombineMode;
use eventrade::{EntryMode, Policy};

mod commands;
mod config;

use config::RunConfig;

pub const ENCODER_FILE: &str = "encoder.bin";
pub const MODEL_FILE: &str = "model.bin";
pub const METRICS_FILE: &str = "metrics.json";
pub const DETECTIONS_FILE: &str = "detections.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const PER_EVENT_FILE: &str = "per_event.csv";
pub const EQUITY_FILE: &str = "equity.csv";
pub const PRICE_LABELS_FILE: &str = "price_labels.jsonl";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(eventrade::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use eventrade::Error as E;
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(E::Invalid(_) | E::Dimension(_)) => 1,
            CliError::Core(E::Numeric(_)) => 3,
            CliError::Core(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<eventrade::Error> for CliError {
    fn from(e: eventrade::Error) -> Self {
        CliError::Core(e)
    }
}

#[derive(Parser)]
#[command(
    name = "eventrade",
    version,
    about = "Event-driven news trading pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain the encoder on unlabeled in-domain text.
    Adapt(Common),
    /// Train the bi-level detector on labeled articles.
    Train(Common),
    /// Detect events and tickers in articles.
    Detect {
        #[command(flatten)]
        common: Common,
        /// Also write articles without any detected event.
        #[arg(long)]
        emit_all: bool,
    },
    /// Trade the detected signals against minute bars.
    Backtest(Common),
    /// Compute first-minute and 1/2/3-day price labels for articles.
    LabelPrices(Common),
}

/// Config file plus overrides shared by every subcommand.
#[derive(Args, Debug, Default)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    articles: Option<PathBuf>,
    /// Pretraining corpus (repeatable).
    #[arg(long)]
    pretrain: Vec<PathBuf>,
    #[arg(long)]
    pairs: Option<PathBuf>,
    #[arg(long)]
    bars: Option<PathBuf>,
    #[arg(long)]
    calendar: Option<PathBuf>,
    #[arg(long)]
    encoder: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    detections: Option<PathBuf>,
    /// Seed for every random component.
    #[arg(long)]
    seed: Option<u64>,
    /// Epochs for adapt / train.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    /// union, high-only, low-only or intersection.
    #[arg(long)]
    combine: Option<CombineMode>,
    /// TAE or TAB.
    #[arg(long)]
    policy: Option<Policy>,
    /// Holding horizon in trading days.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    stop_loss: Option<f64>,
    /// OPEN_MINUTE or CLOSE_MINUTE.
    #[arg(long)]
    entry_mode: Option<EntryMode>,
    #[arg(long)]
    commission: Option<f64>,
    #[arg(long)]
    initial_cash: Option<f64>,
    #[arg(long)]
    stake: Option<f64>,
    #[arg(long)]
    low_cash_fraction: Option<f64>,
    #[arg(long)]
    benchmark: Option<String>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let paths = &mut cfg.paths;
        for (slot, flag) in [
            (&mut paths.out, &self.out),
            (&mut paths.articles, &self.articles),
            (&mut paths.pairs, &self.pairs),
            (&mut paths.bars, &self.bars),
            (&mut paths.calendar, &self.calendar),
            (&mut paths.encoder, &self.encoder),
            (&mut paths.model, &self.model),
            (&mut paths.detections, &self.detections),
        ] {
            if flag.is_some() {
                slot.clone_from(flag);
            }
        }
        if !self.pretrain.is_empty() {
            paths.pretrain.clone_from(&self.pretrain);
        }
        if let Some(s) = self.seed {
            cfg.encoder.seed = s;
            cfg.pretrain.seed = s;
            cfg.detector.seed = s;
            cfg.train.seed = s;
        }
        if let Some(e) = self.epochs {
            cfg.pretrain.epochs = e;
            cfg.train.epochs = e;
        }
        set(&mut cfg.encoder.max_len, self.max_len);
        set(&mut cfg.detector.threshold, self.threshold);
        set(&mut cfg.detector.combine, self.combine);
        let t = &mut cfg.trade;
        set(&mut t.policy, self.policy);
        set(&mut t.horizon_k, self.k);
        set(&mut t.stop_loss, self.stop_loss);
        set(&mut t.entry_mode, self.entry_mode);
        set(&mut t.commission, self.commission);
        set(&mut t.initial_cash, self.initial_cash);
        set(&mut t.stake, self.stake);
        set(&mut t.low_cash_fraction, self.low_cash_fraction);
        set(&mut t.benchmark_ticker, self.benchmark.clone());
        cfg.validate()?;
        Ok(cfg)
    }

    /// Threshold / combination given explicitly on the command line.
    fn detection_overrides(&self) -> (Option<f64>, Option<CombineMode>) {
        (self.threshold, self.combine)
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Adapt(c) => commands::adapt(&c.resolve()?),
        Command::Train(c) => commands::train(&c.resolve()?),
        Command::Detect { common, emit_all } => {
            let cfg = common.resolve()?;
            let (threshold, combine) = common.detection_overrides();
            commands::detect(&cfg, emit_all, threshold, combine)
        }
        Command::Backtest(c) => commands::backtest(&c.resolve()?),
        Command::LabelPrices(c) => commands::label_prices(&c.resolve()?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
