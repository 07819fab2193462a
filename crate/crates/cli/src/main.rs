use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qnet_harness::runner::{budget_rows, rate_rows, RunReport};
use qnet_harness::{
    improvement_ladder, run, write_report, write_table, BudgetTarget, HarnessError, RunMode,
    Scenario, Toggle,
};

#[derive(Parser)]
#[command(name = "qnet", version, about = "Three-node teleportation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its reports.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Tries per input state; switches to Monte Carlo mode.
        #[arg(long)]
        shots: Option<u64>,
        /// Force the exact analytic evaluation.
        #[arg(long, conflicts_with = "shots")]
        analytic: bool,
        /// Report directory, `out/<scenario name>` by default.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Error budget of one link or of the teleportation.
    Budget {
        scenario: PathBuf,
        /// AB, BC or teleport.
        #[arg(long)]
        link: BudgetTarget,
        /// Write the table to this CSV file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Switch the improvements on one at a time, starting from a baseline.
    Ladder {
        baseline: PathBuf,
        /// Comma-separated subset, in order, of bar-readout, memory-coherence,
        /// tailored-heralding. All three by default.
        #[arg(long, value_delimiter = ',')]
        toggles: Option<Vec<Toggle>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fidelity and expected rate for a list of detection windows.
    Rates {
        scenario: PathBuf,
        /// Detection windows in ns.
        #[arg(long, value_delimiter = ',', default_value = "15,10,7.5")]
        windows: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Run {
            scenario,
            seed,
            shots,
            analytic,
            out,
        } => {
            let mut s = Scenario::load(&scenario)?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            if let Some(shots) = shots {
                s.mode = RunMode::MonteCarlo;
                s.shots = shots;
            }
            if analytic {
                s.mode = RunMode::Analytic;
            }
            let report = run(&s)?;
            print_fidelities(&report);
            let dir = out.unwrap_or_else(|| Path::new("out").join(&s.name));
            for path in write_report(&report, &dir)? {
                println!("wrote {}", path.display());
            }
        }
        Command::Budget {
            scenario,
            link,
            out,
        } => {
            let s = Scenario::load(&scenario)?;
            let rows = budget_rows(&s.protocol, &[link], &s.teleport_modes)?;
            println!("{:<30} {:>12} {:>12}", "source", "mode", "infidelity");
            for r in &rows {
                let mode = r
                    .mode
                    .map(|m| format!("{m:?}").to_lowercase())
                    .unwrap_or_default();
                println!("{:<30} {:>12} {:>12.4}", r.source, mode, r.infidelity);
            }
            if let Some(path) = out {
                write_table(&path, &rows)?;
            }
        }
        Command::Ladder {
            baseline,
            toggles,
            out,
        } => {
            let s = Scenario::load(&baseline)?;
            let toggles = toggles.unwrap_or_else(|| Toggle::ALL.to_vec());
            let rows = improvement_ladder(&s.protocol, &toggles)?;
            println!("{:<20} {:>9} {:>12}", "step", "fidelity", "s per event");
            for r in &rows {
                println!(
                    "{:<20} {:>9.4} {:>12.1}",
                    r.step, r.fidelity, r.seconds_per_event
                );
            }
            if let Some(path) = out {
                write_table(&path, &rows)?;
            }
        }
        Command::Rates {
            scenario,
            windows,
            out,
        } => {
            let s = Scenario::load(&scenario)?;
            if windows.iter().any(|w| !(*w > 0.0)) {
                return Err(HarnessError::Config("windows must be positive".into()));
            }
            let rows = rate_rows(&s.protocol, &windows, &s.teleport_modes)?;
            println!(
                "{:>10} {:>14} {:>9} {:>12}",
                "window_ns", "mode", "fidelity", "s per event"
            );
            for r in &rows {
                let mode = format!("{:?}", r.mode).to_lowercase();
                println!(
                    "{:>10} {:>14} {:>9.4} {:>12.1}",
                    r.window_ns, mode, r.fidelity, r.seconds_per_event
                );
            }
            if let Some(path) = out {
                write_table(&path, &rows)?;
            }
        }
    }
    Ok(())
}

fn print_fidelities(report: &RunReport) {
    for r in &report.fidelity {
        let mode = format!("{:?}", r.mode).to_lowercase();
        match r.std_error {
            Some(se) => println!("{mode:<14} {:<8} {:.4} ± {:.4}", r.state, r.fidelity, se),
            None => println!("{mode:<14} {:<8} {:.4}", r.state, r.fidelity),
        }
    }
}
