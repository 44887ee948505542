use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use consensus_opt::metrics::verify_kkt;
use consensus_opt::run::{fmt_float, reference_optimum, run};
use consensus_opt::{builtin_sec5, parse_scenario_unchecked, Error, Scenario, Sec5Variant};

#[derive(Parser)]
#[command(name = "consensus-opt", version, about = "Distributed constrained optimization over switching graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario file and write trajectory.csv, metrics.csv and report.txt.
    Run {
        file: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the sampling stride.
        #[arg(long)]
        stride: Option<u64>,
    },
    /// Run a built-in experiment.
    Builtin {
        #[command(subcommand)]
        which: Builtin,
    },
    /// Check a scenario against the convergence assumptions.
    Validate { file: PathBuf },
    /// Solve the centralized problem for a scenario and print the optimum.
    Oracle { file: PathBuf },
}

#[derive(Subcommand)]
enum Builtin {
    /// The 24-agent planar experiment.
    Sec5 {
        #[arg(long, default_value = "ct")]
        variant: Sec5Variant,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(path: &Path) -> Result<Scenario, Error> {
    let text = fs::read_to_string(path)?;
    parse_scenario_unchecked(&text)
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run { file, out, seed, stride } => {
            let mut scenario = load(&file)?;
            if let Some(seed) = seed {
                scenario.seed = seed;
            }
            if let Some(stride) = stride {
                scenario.stride = stride;
            }
            let report = run(&scenario, &out)?;
            print!("{}", report.render());
        }
        Command::Builtin {
            which: Builtin::Sec5 { variant, out },
        } => {
            let report = run(&builtin_sec5(variant), &out)?;
            print!("{}", report.render());
        }
        Command::Validate { file } => {
            let scenario = load(&file)?;
            let report = scenario.schedule_report();
            for w in &report.windows {
                let end = w.end.map_or("never".to_string(), fmt_float);
                println!(
                    "window from {}: connected until {end} (within bound: {})",
                    fmt_float(w.start),
                    w.within_bound
                );
            }
            scenario.validate()?;
            println!("ok: all assumptions hold");
        }
        Command::Oracle { file } => {
            let mut scenario = load(&file)?;
            scenario.validate()?;
            scenario.reference = None;
            let x = reference_optimum(&scenario)?;
            let kkt = verify_kkt(&scenario.problem.objectives, &scenario.problem.sets, &x, 1e-6)?;
            println!("optimum: {}", x.iter().map(|&v| fmt_float(v)).collect::<Vec<_>>().join(" "));
            println!("kkt_1e-6: {kkt}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Validation(vs) = &e {
                for v in vs {
                    eprintln!("  {v}");
                }
            }
            ExitCode::FAILURE
        }
    }
}
