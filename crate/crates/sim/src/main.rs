use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use scenic_sim::builtin::BUILTINS;
use scenic_sim::runner::{run_all, RunOptions};
use scenic_sim::{load, print_scenario};

#[derive(Parser)]
#[command(name = "scenic-sim", version, about = "Deterministic SmartNIC datapath simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run scenarios and write metrics.csv and counters.csv per scenario.
    Run {
        /// Scenario files or builtin names.
        #[arg(required = true)]
        scenarios: Vec<String>,
        /// Output root; each run writes to <out>/<scenario name>/.
        #[arg(long, env = "SCENIC_SIM_OUT", default_value = "out")]
        out: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the sampling period.
        #[arg(long)]
        sample_period_ns: Option<u64>,
        /// Scenarios to run in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Write each node's slow-path ring contents at the end of the run.
        #[arg(long)]
        ring_dump: bool,
    },
    /// Check scenario files without running them.
    Validate {
        #[arg(required = true)]
        scenarios: Vec<String>,
        /// Print the canonical form of each scenario.
        #[arg(long)]
        canonical: bool,
    },
    /// List the bundled scenarios.
    ListBuiltin,
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::ListBuiltin => {
            for (name, _) in BUILTINS {
                println!("{name}");
            }
            ExitCode::SUCCESS
        }
        Command::Validate { scenarios, canonical } => {
            let mut ok = true;
            for arg in &scenarios {
                match load(arg) {
                    Ok(sc) if canonical => print!("{}", print_scenario(&sc)),
                    Ok(_) => println!("{arg}: ok"),
                    Err(e) => {
                        eprintln!("error: {e:#}");
                        ok = false;
                    }
                }
            }
            if ok { ExitCode::SUCCESS } else { ExitCode::from(2) }
        }
        Command::Run { scenarios, out, seed, sample_period_ns, jobs, ring_dump } => {
            let mut loaded = Vec::new();
            for arg in &scenarios {
                match load(arg) {
                    Ok(mut sc) => {
                        if let Some(s) = seed {
                            sc.seed = s;
                        }
                        if let Some(p) = sample_period_ns {
                            sc.sample_period_ns = p;
                        }
                        loaded.push(sc);
                    }
                    Err(e) => {
                        eprintln!("error: {e:#}");
                        return ExitCode::from(2);
                    }
                }
            }
            let mut failed = false;
            for r in run_all(&loaded, &out, jobs, RunOptions { ring_dumps: ring_dump }) {
                match r {
                    Ok(o) => println!("{} -> {}", o.summary, o.dir.display()),
                    Err(e) => {
                        eprintln!("error: {e}");
                        failed = true;
                    }
                }
            }
            if failed { ExitCode::FAILURE } else { ExitCode::SUCCESS }
        }
    }
}
