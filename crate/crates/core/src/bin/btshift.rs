use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use btshift::cli::{
    cmd_estimate, cmd_marginal_bt, cmd_simulate, render_table, EstimateConfig, SimulateConfig,
};
use btshift::Error;

#[derive(Parser)]
#[command(
    name = "btshift",
    about = "Inference on player strengths from covariate-annotated pairwise comparisons",
    version
)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the synthetic replication harness and write metrics tables.
    Simulate {
        /// JSON configuration file.
        #[arg(long)]
        config: PathBuf,
    },
    /// Estimate player strengths from a battle log and emit a ranking report.
    Estimate {
        /// JSON configuration file.
        #[arg(long)]
        config: PathBuf,
    },
    /// Fit the plain marginal model on a battle log (baseline, no covariates).
    MarginalBt {
        /// JSON configuration file (same schema as `estimate`).
        #[arg(long)]
        config: PathBuf,
    },
}

fn load_config<T: serde::de::DeserializeOwned>(path: &PathBuf) -> Result<T, Error> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&raw)
        .map_err(|e| Error::Config(format!("invalid config {}: {e}", path.display())))
}

fn run(args: Args) -> Result<(), Error> {
    match args.command {
        Command::Simulate { config } => {
            let cfg: SimulateConfig = load_config(&config)?;
            let out = cmd_simulate(&cfg)?;
            if cfg.out_csv.is_none() && cfg.out_json.is_none() {
                print!("{}", btshift::cli::metrics_csv(&out));
            }
            if !out.failures.is_empty() {
                eprintln!(
                    "{} replication failure(s); first: {}",
                    out.failures.len(),
                    out.failures[0]
                );
            }
            Ok(())
        }
        Command::Estimate { config } => {
            let cfg: EstimateConfig = load_config(&config)?;
            let report = cmd_estimate(&cfg)?;
            if cfg.output.is_some() {
                print!("{}", render_table(&report));
            } else {
                let json = serde_json::to_string_pretty(&report)
                    .map_err(|e| Error::Data(e.to_string()))?;
                println!("{json}");
            }
            Ok(())
        }
        Command::MarginalBt { config } => {
            let cfg: EstimateConfig = load_config(&config)?;
            let report = cmd_marginal_bt(&cfg)?;
            if cfg.output.is_some() {
                print!("{}", render_table(&report));
            } else {
                let json = serde_json::to_string_pretty(&report)
                    .map_err(|e| Error::Data(e.to_string()))?;
                println!("{json}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = match e.kind() {
                btshift::ErrorKind::Config => "config",
                btshift::ErrorKind::Data => "data",
                btshift::ErrorKind::Numerical => "numerical",
            };
            let payload = serde_json::json!({
                "error": { "kind": kind, "message": e.to_string() }
            });
            eprintln!("{payload}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
