use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use bpvec_core::experiment::{self, ExperimentSpec, RunOptions, SHIPPED_SPECS};
use bpvec_core::scenario::{self, ScenarioConfig};

#[derive(Parser)]
#[command(
    name = "bpvec",
    version,
    about = "Parked-vehicle edge computing experiment runner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment spec (a file path or a shipped experiment name).
    Run {
        spec: String,
        /// Scenario file; defaults to the bundled scenario.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (0 = all cores).
        #[arg(long, default_value_t = 0)]
        workers: usize,
        /// Also write JSON-lines consensus traces per cell.
        #[arg(long)]
        traces: bool,
    },
    /// List the shipped experiment specs.
    ListExperiments,
    /// Check a spec (and optionally a scenario) without running it.
    Validate {
        spec: String,
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Print the normalized JSON form of a scenario.
    Scenario { path: Option<PathBuf> },
}

fn load_spec(arg: &str) -> Result<ExperimentSpec> {
    if Path::new(arg).exists() {
        experiment::load_spec(arg).with_context(|| format!("loading spec {arg}"))
    } else {
        experiment::shipped_spec(arg)
            .with_context(|| format!("'{arg}' is neither a file nor a shipped experiment"))
    }
}

fn load_scenario(path: Option<&Path>) -> Result<ScenarioConfig> {
    match path {
        Some(p) => {
            scenario::load_scenario(p).with_context(|| format!("loading scenario {}", p.display()))
        }
        None => Ok(scenario::default_scenario()),
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Run {
            spec,
            scenario,
            out,
            seed,
            workers,
            traces,
        } => {
            let spec = load_spec(&spec)?;
            let cfg = load_scenario(scenario.as_deref())?;
            let opts = RunOptions {
                workers,
                seed,
                traces,
            };
            log::info!(
                "running {} ({} cells)",
                spec.name,
                spec.schemes.len() * spec.sweep_values.len() * spec.repetitions as usize
            );
            let run = experiment::run_experiment(&spec, &cfg, &opts)?;
            experiment::write_outputs(&run, &out)?;
            let c = run.manifest.status_counts;
            log::info!(
                "wrote {} rows to {} (ok {}, partial {}, infeasible {}, error {})",
                run.manifest.rows,
                out.display(),
                c.ok,
                c.partial,
                c.infeasible,
                c.error
            );
        }
        Command::ListExperiments => {
            for (name, _) in SHIPPED_SPECS {
                let s = experiment::shipped_spec(name)?;
                println!(
                    "{name:<8} {:<12} {}",
                    s.sweep_variable.name(),
                    s.description
                );
            }
        }
        Command::Validate { spec, scenario } => {
            let spec = load_spec(&spec)?;
            let cfg = load_scenario(scenario.as_deref())?;
            spec.validate_against(&cfg)?;
            println!(
                "ok: {} ({} schemes, {} sweep values)",
                spec.name,
                spec.schemes.len(),
                spec.sweep_values.len()
            );
        }
        Command::Scenario { path } => {
            println!("{}", load_scenario(path.as_deref())?.to_json());
        }
    }
    Ok(())
}
