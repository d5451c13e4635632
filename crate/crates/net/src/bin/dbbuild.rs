//! Builds a hashed hazard table through the keyservers.

use std::path::PathBuf;
use std::sync::Arc;

use clap::Parser;
use dnascreen_core::builder::{
    build_entries, build_hashed_table, extract_stopgap_windows, incremental_add, load_corpus, load_hazards,
    load_keywords, BuildConfig, HarmlessCorpus,
};
use dnascreen_core::group::Group;
use dnascreen_core::hashdb::RemoteHashDb;
use dnascreen_core::sharing::SharingConfig;
use dnascreen_core::table::HashedTable;
use dnascreen_core::transport::Transport;
use dnascreen_net::{doprf_client, load_credentials, parse_endpoint, with_group, CliResult, HttpTransport};
use rand::rngs::OsRng;

#[derive(Parser)]
#[command(about = "Extracts, filters, curates and hashes hazard windows into a table")]
struct Cli {
    /// Directory of hazard manifests (*.json).
    #[arg(long)]
    hazards: PathBuf,
    /// Directory of harmless FASTA used for curation.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Keyword list replacing the built-in one.
    #[arg(long)]
    keywords: Option<PathBuf>,
    #[arg(long = "keyserver", value_parser = parse_endpoint, required = true)]
    keyservers: Vec<(u32, String)>,
    #[arg(long)]
    n: Option<u32>,
    #[arg(long)]
    t: Option<u32>,
    #[arg(long)]
    chain: PathBuf,
    #[arg(long)]
    key: PathBuf,
    #[arg(long, default_value_t = 1)]
    version: u64,
    /// Existing table to extend instead of building from scratch.
    #[arg(long)]
    base: Option<PathBuf>,
    /// Wild-type 30-mers only, for agents that need cover before curation.
    #[arg(long)]
    stopgap: bool,
    #[arg(long, default_value_t = 1)]
    peptide_stride: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Database to upload the finished table to.
    #[arg(long)]
    push: Option<String>,
    #[arg(long, default_value = "ristretto255")]
    group: String,
}

fn run<G: Group>(cli: &Cli) -> CliResult {
    let sources = load_hazards(&cli.hazards)?;
    let creds = load_credentials(&cli.chain, &cli.key)?;
    let transport: Arc<dyn Transport> = Arc::new(HttpTransport::default());
    let n = cli.n.unwrap_or(cli.keyservers.len() as u32);
    let cfg = SharingConfig::new(n, cli.t.unwrap_or(n))?;
    let client = doprf_client::<G>(&cli.keyservers, cfg, transport.clone(), &creds);

    let entries = if cli.stopgap {
        let mut all = Vec::new();
        for s in &sources {
            all.extend(extract_stopgap_windows(s)?);
        }
        eprintln!("{} stopgap windows from {} sources", all.len(), sources.len());
        all
    } else {
        let mut bcfg = BuildConfig {
            seed: cli.seed,
            peptide_stride: cli.peptide_stride,
            ..BuildConfig::default()
        };
        if let Some(p) = &cli.keywords {
            bcfg.keywords = load_keywords(p)?;
        }
        let corpus = match &cli.corpus {
            Some(dir) => load_corpus(dir)?,
            None => HarmlessCorpus::default(),
        };
        let out = build_entries(&sources, &corpus, &bcfg)?;
        eprintln!(
            "{} entries from {} sources ({} low-entropy removed, {} curated out)",
            out.entries.len(),
            sources.len(),
            out.low_entropy_removed,
            out.curation.removed.len()
        );
        out.entries
    };

    let table = match &cli.base {
        Some(p) => incremental_add(&HashedTable::read_file(p)?, &entries, &client, cli.stopgap, &mut OsRng)?,
        None => build_hashed_table(&entries, &client, cli.version, cli.stopgap, &mut OsRng)?,
    };
    table.write_file(&cli.out)?;
    println!(
        "table v{} with {} hashes under {}@{} -> {}",
        table.version,
        table.len(),
        table.key_id,
        table.epoch,
        cli.out.display()
    );
    if let Some(url) = &cli.push {
        let v = RemoteHashDb::new(url, transport, creds).swap(table.to_bytes())?;
        println!("database now serving v{v}");
    }
    Ok(())
}

fn main() -> CliResult {
    let cli = Cli::parse();
    with_group!(cli.group.as_str(), G => run::<G>(&cli))
}
