//! Biosafety officer side of exemption tokens.

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use dnascreen_core::certs::{create_and_approve_elt, EltRequest, SoftwareKey};
use dnascreen_core::client::load_chain;
use dnascreen_net::{load_trust_root, read_json, write_json, CliResult};
use rand::rngs::OsRng;

#[derive(Parser)]
#[command(about = "Approves exemption list token requests")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    Approve {
        #[arg(long)]
        request: PathBuf,
        /// Officer chain, root first.
        #[arg(long)]
        chain: PathBuf,
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> CliResult {
    let Cmd::Approve { request, chain, key, root, out } = Cli::parse().cmd;
    let req: EltRequest = read_json(&request)?;
    let chain = load_chain(&chain)?;
    let key = SoftwareKey::load(&key)?;
    let now = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH)?.as_secs();
    let token = create_and_approve_elt(&req, &chain, &key, &load_trust_root(&root)?, now, &mut OsRng)?;
    write_json(&out, &token)?;
    println!("nonce {}", token.body.nonce);
    Ok(())
}
