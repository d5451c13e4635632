//! Screens a FASTA order through the keyservers and the hash database.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use dnascreen_core::client::{render_report, ClientConfig, ClientError, OutputFormat, ScreeningReport};
use dnascreen_core::windows::QueryMode;
use dnascreen_net::{screener_from_config, HttpTransport};

#[derive(Parser)]
#[command(about = "Synthesizer-side screening client")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Provider,
    Benchtop,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Subcommand)]
enum Cmd {
    /// Exit status: 0 accepted, 2 alert, 3 denied, 4 and up for errors.
    Screen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        fasta: PathBuf,
        /// Exemption presentation, overriding the configuration.
        #[arg(long)]
        elt: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long, value_enum)]
        format: Option<Format>,
        #[arg(long)]
        group: Option<String>,
    },
}

fn run(cfg: &ClientConfig, fasta: &PathBuf) -> Result<ScreeningReport, ClientError> {
    let transport = Arc::new(HttpTransport::default());
    match cfg.group.as_str() {
        "ristretto255" => screener_from_config::<dnascreen_core::group::Ristretto>(cfg, transport)?.screen_file(fasta),
        "residue61" => screener_from_config::<dnascreen_core::group::TestGroup61>(cfg, transport)?.screen_file(fasta),
        other => Err(ClientError::Config(format!("unknown group {other:?}"))),
    }
}

fn main() -> ExitCode {
    let Cmd::Screen { config, fasta, elt, mode, format, group } = Cli::parse().cmd;
    let mut cfg = match ClientConfig::load(&config) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    if let Some(p) = elt {
        cfg.elt = Some(p);
    }
    if let Some(m) = mode {
        cfg.mode = match m {
            Mode::Provider => QueryMode::Provider,
            Mode::Benchtop => QueryMode::Benchtop,
        };
    }
    if let Some(f) = format {
        cfg.format = match f {
            Format::Text => OutputFormat::Text,
            Format::Json => OutputFormat::Json,
        };
    }
    if let Some(g) = group {
        cfg.group = g;
    }
    match run(&cfg, &fasta) {
        Ok(report) => {
            let mut out = std::io::stdout().lock();
            let _ = out.write_all(&render_report(&report, cfg.format));
            let _ = out.flush();
            ExitCode::from(report.exit_code() as u8)
        }
        Err(e) => fail(&e),
    }
}

fn fail(e: &ClientError) -> ExitCode {
    eprintln!("synthclient: {e}");
    ExitCode::from(e.exit_code() as u8)
}
