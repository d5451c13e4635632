//! Runs a deterministic multi-party scenario on the in-memory network.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dnascreen_core::simnet::{run_scenario, violations, Predicate, Scenario, Transcript};
use dnascreen_net::read_json;

#[derive(Parser)]
#[command(about = "Simulated keyservers, database and clients")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Exits non-zero if the run fails or any privacy check finds a leak.
    Run {
        scenario: PathBuf,
        /// Transcript destination (JSON lines).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "residue61")]
        group: String,
    },
}

fn main() -> ExitCode {
    let Cmd::Run { scenario, out, group } = Cli::parse().cmd;
    let s: Scenario = match read_json(&scenario) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("simnet: {e}");
            return ExitCode::from(9);
        }
    };
    let result: Result<Transcript, String> = match group.as_str() {
        "residue61" => run_scenario::<dnascreen_core::group::TestGroup61>(&s).map_err(|e| e.to_string()),
        "ristretto255" => run_scenario::<dnascreen_core::group::Ristretto>(&s).map_err(|e| e.to_string()),
        other => Err(format!("unknown group {other:?}")),
    };
    let t = match result {
        Ok(t) => t,
        Err(e) => {
            eprintln!("simnet: {e}");
            return ExitCode::from(1);
        }
    };
    for (i, outcome) in t.outcomes() {
        println!("event {i}: {outcome}");
    }
    let mut leaks = 0;
    for p in Predicate::ALL {
        let v = violations(&t, p);
        println!("{p:?}: {}", if v.is_empty() { "ok".to_string() } else { format!("{} violations", v.len()) });
        leaks += v.len();
    }
    if let Some(path) = out {
        if let Err(e) = std::fs::write(&path, t.to_jsonl()) {
            eprintln!("simnet: {}: {e}", path.display());
            return ExitCode::from(9);
        }
    }
    if leaks > 0 {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}
