use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use privaudit_cli::{resolve_output_dir, run_experiment, CliError, ExperimentConfig, ExperimentKind, OUT_ENV};

#[derive(Parser)]
#[command(name = "privaudit", version, about = "Membership-inference and differential-privacy audits of small classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides PRIVAUDIT_OUT and the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Overrides the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads. Outputs are identical for any value.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Draw and export the experiment's datasets.
    Data,
    /// Train the victim and export its history and parameters.
    Train,
    /// Shadow-model membership inference against the victim.
    Attack,
    /// Sampled sensitivity of the training recipe.
    Sensitivity,
    /// Release a perturbed model and answer queries.
    Gpm,
    /// Privacy accounting for DP-SGD and sampled sensitivity.
    Account,
    /// Attack accuracy and utility across DP-SGD noise multipliers.
    SweepDpsgd,
    /// Attack accuracy and utility across output-perturbation levels.
    SweepGpm,
    /// Attack accuracy and utility across penalty strengths.
    SweepL2,
    /// Attack accuracy per batch after sequential training.
    Memorization,
    /// Per-query entropy and loss with attack decisions.
    Scatter,
    /// Feed-forward against recurrent victims at matched validation accuracy.
    Compare,
    /// Run the experiment named by the config's `experiment` field.
    Run,
}

fn kind(cmd: Command, cfg: &ExperimentConfig) -> Result<ExperimentKind, CliError> {
    Ok(match cmd {
        Command::Data => ExperimentKind::Data,
        Command::Train => ExperimentKind::Train,
        Command::Attack => ExperimentKind::Attack,
        Command::Sensitivity => ExperimentKind::Sensitivity,
        Command::Gpm => ExperimentKind::Gpm,
        Command::Account => ExperimentKind::Account,
        Command::SweepDpsgd => ExperimentKind::SweepDpsgd,
        Command::SweepGpm => ExperimentKind::SweepGpm,
        Command::SweepL2 => ExperimentKind::SweepL2,
        Command::Memorization => ExperimentKind::Memorization,
        Command::Scatter => ExperimentKind::Scatter,
        Command::Compare => ExperimentKind::Compare,
        Command::Run => cfg
            .experiment
            .ok_or_else(|| CliError::schema("experiment", "`run` needs the config's `experiment` field"))?,
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("privaudit: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::schema("--config", "a config file is required"))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    let kind = kind(cli.command, &cfg)?;
    let env = std::env::var(OUT_ENV).ok();
    let dir = resolve_output_dir(cli.out.as_deref(), env.as_deref(), &cfg);
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(CliError::schema("--jobs", "must be at least 1"));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::io("starting worker pool", std::io::Error::other(e.to_string())))?;
    pool.install(|| run_experiment(kind, &cfg, &dir))
}
