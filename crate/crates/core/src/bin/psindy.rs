use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use psindy::data::builtin_models;
use psindy::experiment::{run_experiment, run_grid, run_suite, ExperimentConfig, SuiteConfig};
use psindy::Error;

#[derive(Parser)]
#[command(
    name = "psindy",
    version,
    about = "Identify delay differential equations from samples"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its report and CSVs.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a model x method x optimizer suite.
    Suite {
        #[arg(long)]
        config: PathBuf,
    },
    /// List the built-in benchmark models.
    ListModels,
    /// Dump the brute-force objective curve over the search space.
    Grid {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn execute(cmd: Command) -> psindy::Result<()> {
    match cmd {
        Command::Run { config } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let report = run_experiment(&cfg)?;
            print!("{report}");
        }
        Command::Suite { config } => {
            let suite = SuiteConfig::from_path(&config)?;
            let report = run_suite(&suite)?;
            for e in &report.entries {
                match &e.outcome {
                    Ok(r) => {
                        let values: Vec<String> = r
                            .labels
                            .iter()
                            .zip(&r.best_point)
                            .map(|(l, v)| format!("{l}={v:.6}"))
                            .collect();
                        println!(
                            "{:<28} calls {:>6}  objective {:.4e}  {}",
                            r.name,
                            r.calls,
                            r.best_objective,
                            values.join(" ")
                        );
                    }
                    Err(err) => println!("{:<28} FAILED: {err}", e.config.name()),
                }
            }
            for p in &report.outputs {
                println!("wrote {}", p.display());
            }
            if report.failures() > 0 {
                return Err(Error::Invalid(format!(
                    "{} suite experiment(s) failed",
                    report.failures()
                )));
            }
        }
        Command::ListModels => {
            for m in builtin_models() {
                let params: Vec<String> = m
                    .param_names
                    .iter()
                    .zip(&m.params)
                    .map(|(n, v)| format!("{n}={v}"))
                    .collect();
                let delays: Vec<String> = m.delays.iter().map(|d| d.to_string()).collect();
                println!(
                    "{:<14} n={}  params: {}  delays: {}  T={} m={}",
                    m.name,
                    m.dim,
                    params.join(", "),
                    delays.join(", "),
                    m.horizon,
                    m.samples
                );
            }
        }
        Command::Grid { config } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let opt = run_grid(&cfg)?;
            let labels: Vec<String> = cfg
                .search
                .iter()
                .zip(&opt.best_point)
                .map(|(d, v)| format!("{}={v:.6}", d.label))
                .collect();
            println!(
                "{} evaluations, argmin {} objective {:.6e}",
                opt.evaluations,
                labels.join(" "),
                opt.best_objective
            );
            println!("wrote {}", cfg.output.join("error_grid.csv").display());
        }
    }
    Ok(())
}
