use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use unconfound::experiments::{
    run_analytic_power, run_power_sweep, run_semisynth, run_test_pair, run_type1, ExperimentConfig,
    Kind, Preset, ResultTable,
};
use unconfound::{Error, Result};

/// Test for hidden confounding by comparing a randomized and an observational
/// estimate of the same treatment effect.
#[derive(Parser, Debug)]
#[command(name = "unconfound", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Experiment configuration (TOML, or JSON with a .json extension).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true, value_enum)]
    preset: Option<PresetArg>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PresetArg {
    Ci,
    Full,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Empirical type I error of the bootstrap test.
    Type1,
    /// Empirical power over a parameter grid.
    PowerSweep,
    /// Closed-form z-test power over a parameter grid.
    AnalyticPower,
    /// Both tests on a randomized and an observational CSV file.
    TestPair {
        #[arg(long)]
        rct: Option<PathBuf>,
        #[arg(long)]
        obs: Option<PathBuf>,
    },
    /// Split a randomized file, induce confounding, run both tests.
    Semisynth {
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

impl Command {
    fn kind(&self) -> Kind {
        match self {
            Command::Type1 => Kind::Type1,
            Command::PowerSweep => Kind::PowerSweep,
            Command::AnalyticPower => Kind::AnalyticPower,
            Command::TestPair { .. } => Kind::TestPair,
            Command::Semisynth { .. } => Kind::Semisynth,
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let mut cfg = match &g.config {
        Some(p) => ExperimentConfig::from_path(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(p) = g.preset {
        let preset = match p {
            PresetArg::Ci => Preset::Ci,
            PresetArg::Full => Preset::Full,
        };
        cfg.apply_preset(preset, cli.command.kind());
    }
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    let out = g.out.clone().or_else(|| cfg.output.clone());
    let jobs = g.jobs.unwrap_or(0);
    if g.jobs == Some(0) {
        return Err(Error::Config("--jobs must be positive".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;

    let table: ResultTable = pool.install(|| match &cli.command {
        Command::Type1 => run_type1(&cfg),
        Command::PowerSweep => run_power_sweep(&cfg),
        Command::AnalyticPower => run_analytic_power(&cfg),
        Command::TestPair { rct, obs } => run_test_pair(rct.as_deref(), obs.as_deref(), &cfg),
        Command::Semisynth { csv } => run_semisynth(csv.as_deref(), &cfg),
    })?;

    let text = match g.format {
        Format::Csv => table.to_csv(),
        Format::Json => table.to_json(),
    };
    match out {
        Some(path) => std::fs::write(&path, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
