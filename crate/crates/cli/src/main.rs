use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use icono::error::{CliError, EXIT_OK};
use icono::fixture::write_fixture;
use icono::runner::{execute, plan, run_all, StageRecord};
use icono::validate_config;
use icono_core::fixture::FixtureSpec;

#[derive(Parser)]
#[command(name = "icono", version, about = "Character recognition in artwork images")]
struct Cli {
    /// Root that manifest and weight paths are relative to. Overrides ICONO_DATA_ROOT.
    #[arg(long, global = true)]
    data_root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct StageArgs {
    #[arg(long)]
    config: PathBuf,
    /// Re-run even if the stage output is already complete.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Validate manifests and hold out the test split.
    Prepare(StageArgs),
    /// Build the style-transferred surrogate dataset.
    Stylize(StageArgs),
    /// Extract backbone descriptors for face and body crops.
    Extract(StageArgs),
    /// Grid-search the classical classifiers.
    Bench(StageArgs),
    /// Fine-tune pipelines A, B and C.
    Train(StageArgs),
    /// Compute test metrics, tables and curves.
    Evaluate(StageArgs),
    /// Render class activation maps.
    Cam(StageArgs),
    /// Every stage in order, skipping completed ones.
    RunAll(StageArgs),
    /// Check a configuration file and print every problem.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write the synthetic fixture corpus, weights and config.
    Fixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        scenes: usize,
    },
}

fn report(records: &[StageRecord]) {
    for r in records {
        println!("{:<9} {:?} ({} artifacts)", r.stage, r.status, r.artifacts.len());
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let flag = cli.data_root.as_deref();
    let (args, stage) = match cli.command {
        Command::Fixture { out, seed, scenes } => {
            let spec = FixtureSpec {
                seed,
                scenes,
                ..FixtureSpec::default()
            };
            let cfg = write_fixture(&out, &spec)?;
            println!("{}", cfg.display());
            return Ok(());
        }
        Command::Validate { config } => {
            validate_config(&config, flag).map_err(CliError::Config)?;
            println!("ok");
            return Ok(());
        }
        Command::RunAll(a) => {
            let cfg = validate_config(&a.config, flag).map_err(CliError::Config)?;
            report(&run_all(&cfg, a.force)?);
            return Ok(());
        }
        Command::Prepare(a) => (a, "prepare"),
        Command::Stylize(a) => (a, "stylize"),
        Command::Extract(a) => (a, "extract"),
        Command::Bench(a) => (a, "bench"),
        Command::Train(a) => (a, "train"),
        Command::Evaluate(a) => (a, "evaluate"),
        Command::Cam(a) => (a, "cam"),
    };
    let cfg = validate_config(&args.config, flag).map_err(CliError::Config)?;
    let planned = plan(&cfg);
    report(&[execute(&cfg, &planned, stage, args.force)?]);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
