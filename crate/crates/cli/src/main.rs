mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use config::RunConfig;
use error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "sqf", version, about = "Quantile forecasts of sparse vegetation-index series")]
struct Cli {
    /// TOML run configuration; defaults apply to anything left out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; component seeds are derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 gives bit-reproducible runs.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory, overriding `paths.output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    no_perturbation: bool,
    #[arg(long, global = true)]
    no_temporal_weights: bool,
    #[arg(long, global = true)]
    no_feature_engineering: bool,
    /// Disables input branches; repeat the flag or separate with commas.
    #[arg(long, global = true, value_enum, value_delimiter = ',')]
    ablate_branch: Vec<Branch>,
    /// Sorts each quantile triple at inference.
    #[arg(long, global = true)]
    quantile_sort: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Branch {
    Future,
    History,
    Target,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Writes a synthetic dataset.
    Gen,
    /// Builds, scales and caches training and validation samples.
    Prepare,
    /// Trains a model and keeps the best-validation checkpoint.
    Train,
    /// Scores a checkpoint on cached samples.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        samples: Option<PathBuf>,
    },
    /// Writes quantile forecasts in NDVI units.
    Forecast {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        samples: Option<PathBuf>,
    },
    /// Trains and scores every configuration of an ablation table.
    Ablate {
        #[arg(long, value_parser = clap::value_parser!(u8).range(2..=3))]
        table: u8,
    },
    /// Summarises run directories.
    Report {
        /// Run directories; the output directory when empty.
        runs: Vec<PathBuf>,
        /// Compares the squared median errors of two runs.
        #[arg(long, num_args = 2, value_names = ["RUN_A", "RUN_B"])]
        compare: Vec<PathBuf>,
    },
}

fn resolve(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = Some(s);
    }
    if let Some(o) = &cli.out {
        cfg.paths.output_dir = o.clone();
    }
    if cfg.paths.output_dir.as_os_str().is_empty() {
        cfg.paths.output_dir = PathBuf::from("run");
    }
    if cli.no_perturbation {
        cfg.perturbation.enabled = false;
    }
    if cli.no_temporal_weights {
        cfg.train.use_temporal_weights = false;
    }
    if cli.no_feature_engineering {
        cfg.model.inputs.feature_engineering = false;
    }
    for b in &cli.ablate_branch {
        match b {
            Branch::Future => cfg.model.inputs.future = false,
            Branch::History => cfg.model.inputs.history = false,
            Branch::Target => cfg.model.inputs.target = false,
        }
    }
    if cli.quantile_sort {
        cfg.model.quantile_sort = true;
    }
    cfg.resolve_seeds();
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = resolve(&cli)?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(format!("--threads: {e}")))?;
    }
    std::fs::create_dir_all(&cfg.paths.output_dir)
        .map_err(|e| CliError::data(format!("{}: {e}", cfg.paths.output_dir.display())))?;
    std::fs::write(cfg.out("config.resolved.toml"), cfg.to_toml()?)?;

    match &cli.command {
        Command::Gen => commands::gen(&cfg),
        Command::Prepare => commands::prepare(&cfg).map(|_| ()),
        Command::Train => commands::run_training(&cfg).map(|_| ()),
        Command::Evaluate { checkpoint, samples } => {
            commands::run_evaluation(&cfg, checkpoint.as_deref(), samples.as_deref()).map(|_| ())
        }
        Command::Forecast { checkpoint, samples } => {
            let path = commands::forecast(&cfg, checkpoint.as_deref(), samples.as_deref())?;
            println!("{}", path.display());
            Ok(())
        }
        Command::Ablate { table } => {
            let rows = commands::ablate(&cfg, *table)?;
            println!("{} configurations written to {}", rows.len(), cfg.out(commands::ABLATION_FILE).display());
            Ok(())
        }
        Command::Report { runs, compare } => {
            let runs = if runs.is_empty() {
                vec![cfg.paths.output_dir.clone()]
            } else {
                runs.clone()
            };
            let pair = match compare.as_slice() {
                [a, b] => Some((a.as_path(), b.as_path())),
                _ => None,
            };
            print!("{}", commands::report(&cfg, &runs, pair)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.kind as u8)
        }
    }
}
