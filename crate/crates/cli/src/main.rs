use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use volmix::config::RunConfig;
use volmix::pipeline::{self, Outcome};
use volmix::Error;

/// Probabilistic volatility forecasting: mixture density networks, GARCH
/// baselines, proper scoring and embedding plots.
///
/// Settings are resolved as: built-in defaults (or --preset), then the
/// --config file, then --set overrides, then the dedicated flags below.
/// Exit codes: 0 success, 1 usage or configuration error, 2 data error,
/// 3 numerical failure.
#[derive(Debug, Parser)]
#[command(name = "volmix", version)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Starting configuration when no --config file is given.
    #[arg(long, global = true, value_enum, default_value_t = Preset::Default)]
    preset: Preset,

    /// Override one configuration key, e.g. `--set train.max_epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Root seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory that receives all artifacts.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,

    /// Upper bound on worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    /// Full-size model and the library defaults.
    Default,
    /// Small synthetic market and network for quick runs.
    Smoke,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Network {
    Mdn,
    Mdne,
}

impl Network {
    fn name(self) -> &'static str {
        match self {
            Network::Mdn => "MDN",
            Network::Mdne => "MDNe",
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate daily (and optional intraday) CSV files and cache the panel.
    Ingest {
        /// Daily OHLCV file; overrides `data.daily`.
        #[arg(long)]
        daily: Option<PathBuf>,
        /// Intraday high/low file; overrides `data.intraday`.
        #[arg(long)]
        intraday: Option<PathBuf>,
    },
    /// Generate a synthetic market into the panel cache.
    Synth,
    /// Build indicator windows, labels and the train/validation/test split.
    Features,
    /// Train the networks with rolling retraining.
    Train {
        /// Train only this network.
        #[arg(long, value_enum)]
        model: Option<Network>,
    },
    /// Fit GARCH-family baselines per stock and rolling window.
    FitGarch,
    /// Write network and GARCH forecasts for the test samples.
    Forecast,
    /// Score forecasts overall and by realized-volatility bucket.
    Evaluate,
    /// Pairwise Diebold-Mariano tests on MSE and QLIKE losses.
    Dm,
    /// t-SNE scatter plots of the learned code embeddings.
    EmbedViz {
        /// Plot only this attribute (std60, turnover or bias5).
        #[arg(long)]
        attribute: Option<String>,
    },
    /// Retrain repeatedly with different seeds and summarize test CRPS.
    Robust {
        /// Number of training runs; overrides `robust.runs`.
        #[arg(long)]
        runs: Option<usize>,
    },
}

fn resolve(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path, &cli.overrides)?,
        None => {
            let base = match cli.preset {
                Preset::Default => RunConfig::default(),
                Preset::Smoke => RunConfig::smoke(),
            };
            RunConfig::from_toml(&base.to_toml()?, &cli.overrides)?
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.output_dir {
        cfg.output_dir = dir.clone();
    }
    if let Command::Ingest { daily, intraday } = &cli.command {
        if daily.is_some() {
            cfg.data.daily = daily.clone();
        }
        if intraday.is_some() {
            cfg.data.intraday = intraday.clone();
        }
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<Outcome, Error> {
    let cfg = resolve(cli)?;
    volmix::set_threads(cli.threads);
    match &cli.command {
        Command::Ingest { .. } => pipeline::cmd_ingest(&cfg),
        Command::Synth => pipeline::cmd_synth(&cfg),
        Command::Features => pipeline::cmd_features(&cfg),
        Command::Train { model } => pipeline::cmd_train(&cfg, model.map(Network::name)),
        Command::FitGarch => pipeline::cmd_fit_garch(&cfg),
        Command::Forecast => pipeline::cmd_forecast(&cfg),
        Command::Evaluate => pipeline::cmd_evaluate(&cfg),
        Command::Dm => pipeline::cmd_dm(&cfg),
        Command::EmbedViz { attribute } => pipeline::cmd_embed_viz(&cfg, attribute.as_deref()),
        Command::Robust { runs } => pipeline::cmd_robust(&cfg, *runs),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(out) => {
            for m in &out.messages {
                println!("{m}");
            }
            for a in &out.artifacts {
                println!("wrote {}", a.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Rows(rows) = &e {
                for r in rows.iter().take(20) {
                    eprintln!("  {r}");
                }
                if rows.len() > 20 {
                    eprintln!("  … {} more", rows.len() - 20);
                }
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
