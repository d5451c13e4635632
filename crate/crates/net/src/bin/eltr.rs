//! Researcher side of exemption tokens: drafting requests and presenting
//! approved tokens.

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use dnascreen_core::certs::{Binding, Contacts, EltPresentation, EltRequest, ExemptionListToken, SoftwareKey};
use dnascreen_core::client::{load_chain, sequence_digest};
use dnascreen_core::windows::parse_fasta;
use dnascreen_net::{read_json, write_json, CliResult};

#[derive(Parser)]
#[command(about = "Requests and presents exemption list tokens")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Drafts a request for a biosafety officer to approve.
    Request {
        #[arg(long = "accession")]
        accessions: Vec<String>,
        /// Whole sequences to exempt; each record contributes its digest.
        #[arg(long)]
        fasta: Option<PathBuf>,
        /// Chain of the certificate the token will be bound to.
        #[arg(long)]
        chain: PathBuf,
        /// Bind to the lab (the PI and the researchers it certified)
        /// rather than to the single leaf certificate.
        #[arg(long)]
        lab: bool,
        #[arg(long)]
        shipping_address: String,
        #[arg(long)]
        pi: String,
        #[arg(long)]
        biosafety_officer: String,
        #[arg(long, default_value = "")]
        legal: String,
        #[arg(long, default_value_t = 30)]
        days: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Wraps an approved token in a presentation signed by the holder.
    Present {
        #[arg(long)]
        token: PathBuf,
        #[arg(long)]
        chain: PathBuf,
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> CliResult {
    match Cli::parse().cmd {
        Cmd::Request { accessions, fasta, chain, lab, shipping_address, pi, biosafety_officer, legal, days, out } => {
            let chain = load_chain(&chain)?;
            let leaf = chain.last().ok_or("empty chain")?;
            let binding = if lab {
                Binding::Lab {
                    pi_fingerprint: leaf.fingerprint(),
                }
            } else {
                Binding::Researcher {
                    fingerprint: leaf.fingerprint(),
                }
            };
            let mut sequence_digests = Vec::new();
            if let Some(path) = fasta {
                let bytes = std::fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
                sequence_digests.extend(parse_fasta(&bytes)?.iter().map(|r| sequence_digest(&r.residues)));
            }
            if accessions.is_empty() && sequence_digests.is_empty() {
                return Err("nothing to exempt: give --accession or --fasta".into());
            }
            let now = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH)?.as_secs();
            let req = EltRequest {
                accessions,
                sequence_digests,
                binding,
                shipping_address,
                contacts: Contacts {
                    principal_investigator: pi,
                    biosafety_officer,
                    legal,
                },
                not_before: now,
                not_after: now + days * 86_400,
            };
            write_json(&out, &req)?;
        }
        Cmd::Present { token, chain, key, out } => {
            let token: ExemptionListToken = read_json(&token)?;
            let chain = load_chain(&chain)?;
            let key = SoftwareKey::load(&key)?;
            write_json(&out, &EltPresentation::new(token, chain, &key))?;
        }
    }
    Ok(())
}
