use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use eks_cli::plot::{plot, PlotInput, PlotKind};
use eks_cli::run::run_experiment;
use eks_cli::verify::verify_moments;
use eks_cli::{CliError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "eks", version, about = "Ensemble Kalman sampling experiments")]
struct Cli {
    /// Only report errors.
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its outputs.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config output directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Check an EKS run on a linear problem against the moment equations.
    VerifyMoments {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Render CSV outputs as an SVG figure.
    Plot {
        #[arg(long, value_enum)]
        kind: PlotKind,
        /// Input CSV files, one point set or series each.
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        /// Legend labels, matched to the inputs in order.
        #[arg(long = "label")]
        labels: Vec<String>,
        /// Column indices for scatter2d.
        #[arg(long, num_args = 2, default_values_t = [0, 1])]
        columns: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(config: &PathBuf, seed: Option<u64>, out_dir: Option<PathBuf>) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(d) = out_dir {
        cfg.output_dir = d;
    }
    Ok(cfg)
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run { config, seed, out_dir } => {
            let cfg = load(&config, seed, out_dir)?;
            let summary = run_experiment(&cfg, &cfg.output_dir)?;
            log::info!("{} finished: {} steps in {:.2} s", summary.sampler, summary.steps, summary.wall_time_seconds);
            Ok(())
        }
        Command::VerifyMoments { config, seed, out_dir } => {
            let cfg = load(&config, seed, out_dir)?;
            let report = verify_moments(&cfg, &cfg.output_dir)?;
            for w in &report.warnings {
                log::warn!("{w}");
            }
            match report.failure {
                None => {
                    println!("PASS ({} time points, J = {})", report.rows.len(), report.ensemble_size);
                    Ok(())
                }
                Some(worst) => {
                    println!("FAIL: {worst}");
                    Err(CliError::Acceptance(worst))
                }
            }
        }
        Command::Plot { kind, inputs, labels, columns, out } => {
            if labels.len() > inputs.len() {
                return Err(CliError::Usage("more labels than inputs".into()));
            }
            let mut labels = labels.into_iter();
            let inputs: Vec<PlotInput> = inputs.into_iter().map(|p| PlotInput::new(p, labels.next())).collect();
            plot(kind, &inputs, (columns[0], columns[1]), &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
