use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gapfill_cli::commands::{self, ModelKind, Outcome, Overrides};
use gapfill_cli::{BenchError, EXIT_OK, EXIT_PARTIAL};

#[derive(Parser)]
#[command(name = "gapfill", version, about = "Imputation benchmark for wearable time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Master seed (overrides run.master_seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Number of runs (overrides run.runs).
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Validate and summarise without training or writing anything.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Imputer,
    Classifier,
}

#[derive(Subcommand)]
enum Command {
    /// Run a dataset pipeline and cache frames or windows.
    Preprocess(Common),
    /// Train the imputer or the classifier.
    Train {
        #[arg(value_enum)]
        model: Model,
        #[command(flatten)]
        common: Common,
    },
    /// Per-source and per-length imputation tables.
    ImputeBench(Common),
    /// Accuracy over imputation strategies and missing rates.
    Downstream(Common),
    /// Render the tables of a results directory.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<Outcome, BenchError> {
    let load = |c: &Common| {
        let o = Overrides {
            seed: c.seed,
            runs: c.runs,
            out: c.out.clone(),
            dry_run: c.dry_run,
        };
        commands::resolve(&c.config, &o).map(|(cfg, raw)| (cfg, raw, c.dry_run))
    };
    match cli.command {
        Command::Preprocess(c) => {
            let (cfg, raw, dry) = load(&c)?;
            commands::preprocess(&cfg, &raw, dry)
        }
        Command::Train { model, common } => {
            let (cfg, raw, dry) = load(&common)?;
            let kind = match model {
                Model::Imputer => ModelKind::Imputer,
                Model::Classifier => ModelKind::Classifier,
            };
            commands::train(kind, &cfg, &raw, dry)
        }
        Command::ImputeBench(c) => {
            let (cfg, raw, dry) = load(&c)?;
            commands::impute_bench(&cfg, &raw, dry)
        }
        Command::Downstream(c) => {
            let (cfg, raw, dry) = load(&c)?;
            commands::downstream(&cfg, &raw, dry)
        }
        Command::Report { out } => commands::report(&out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(outcome) => {
            println!("{}", outcome.message);
            if let Some(dir) = &outcome.out_dir {
                println!("results in {}", dir.display());
            }
            if outcome.failures > 0 {
                EXIT_PARTIAL
            } else {
                EXIT_OK
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
