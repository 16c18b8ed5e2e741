use std::fs::{self, File};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mmfedmc::config::ExperimentConfig;
use mmfedmc::experiment::{compare, run_experiment, write_artifacts, write_compare_csv, COMPARISON_FILE};
use mmfedmc::methods::MethodRegistry;
use mmfedmc::Error;

/// Multimodal federated learning with joint modality and client selection.
#[derive(Parser)]
#[command(name = "mmfedmc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct Overrides {
    /// Directory for artifacts (overrides `output_dir`).
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Comma-separated run seeds (overrides `seeds`).
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Round cap (overrides `max_rounds`).
    #[arg(long)]
    max_rounds: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its artifacts.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run several experiments on the same data and budget and tabulate them.
    Compare {
        #[arg(required = true, num_args = 1..)]
        configs: Vec<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// List the registered methods.
    Methods,
}

fn load(path: &PathBuf, overrides: &Overrides) -> Result<ExperimentConfig, Error> {
    let mut config = ExperimentConfig::from_path(path)?;
    if let Some(dir) = &overrides.output_dir {
        config.output_dir = dir.clone();
    }
    if let Some(seeds) = &overrides.seeds {
        config.seeds = seeds.clone();
    }
    if let Some(n) = overrides.max_rounds {
        config.max_rounds = n;
    }
    config.validate()?;
    Ok(config)
}

fn execute(command: Command) -> Result<(), Error> {
    let registry = MethodRegistry::builtin();
    match command {
        Command::Run { config, overrides } => {
            let config = load(&config, &overrides)?;
            let outcome = run_experiment(&config, &registry)?;
            let written = write_artifacts(&outcome, &config.output_dir)?;
            for run in &outcome.runs {
                let s = &run.summary;
                println!(
                    "{} seed {}: final accuracy {}, {:.1} bytes/round/client, {} rounds",
                    s.method,
                    s.seed,
                    s.final_mean_accuracy.map_or("n/a".into(), |a| format!("{a:.4}")),
                    s.bytes_per_round_per_client,
                    s.comm_rounds
                );
            }
            println!("wrote {} files to {}", written.len(), config.output_dir.display());
        }
        Command::Compare { configs, overrides } => {
            let configs = configs
                .iter()
                .map(|p| load(p, &overrides))
                .collect::<Result<Vec<_>, _>>()?;
            let rows = compare(&configs, &registry)?;
            let dir = &configs[0].output_dir;
            fs::create_dir_all(dir)?;
            let path = dir.join(COMPARISON_FILE);
            let result = File::create(&path)
                .map_err(Error::from)
                .and_then(|f| write_compare_csv(&rows, f));
            if let Err(e) = result {
                let _ = fs::remove_file(&path);
                return Err(e);
            }
            write_compare_csv(&rows, std::io::stdout())?;
            println!("wrote {}", path.display());
        }
        Command::Methods => {
            for name in registry.names() {
                println!("{name:<16} {}", registry.get(name)?.description());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MMFEDMC_LOG", "warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ (Error::InvalidConfig { .. } | Error::Comparability(_))) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
