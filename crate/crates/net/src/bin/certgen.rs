//! Certificate hierarchy management.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use dnascreen_core::certs::{
    issue_certificate, public_key_from_b64, self_signed_root, validate_chain, CertRequest, Certificate, Role, Signer,
    SoftwareKey,
};
use dnascreen_core::client::load_chain;
use dnascreen_core::wire::b64_encode;
use dnascreen_net::{load_trust_root, write_json, CliResult};
use rand::rngs::OsRng;

const DAY: u64 = 86_400;

#[derive(Parser)]
#[command(about = "Creates keys and certificate chains")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generates a root key and its self-signed certificate.
    InitRoot {
        #[arg(long, default_value = "root")]
        subject: String,
        #[arg(long)]
        key_out: PathBuf,
        /// Written as a one-element chain.
        #[arg(long)]
        chain_out: PathBuf,
        #[arg(long, default_value_t = 3650)]
        days: u64,
    },
    /// Generates a signing key and prints its public half.
    Keygen {
        #[arg(long)]
        out: PathBuf,
    },
    /// Issues a certificate under an existing chain.
    Issue {
        #[arg(long)]
        issuer_chain: PathBuf,
        #[arg(long)]
        issuer_key: PathBuf,
        #[arg(long)]
        subject: String,
        /// national-authority, biosafety-officer, principal-investigator,
        /// researcher, manufacturer, provider, machine or infrastructure.
        #[arg(long)]
        role: String,
        /// Subject public key, base64.
        #[arg(long, conflicts_with = "subject_key")]
        public_key: Option<String>,
        /// Subject key file; only its public half is used.
        #[arg(long)]
        subject_key: Option<PathBuf>,
        #[arg(long, default_value_t = 365)]
        days: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validates a chain against a root and prints the leaf.
    Verify {
        #[arg(long)]
        chain: PathBuf,
        #[arg(long)]
        root: PathBuf,
        /// Unix seconds; defaults to now.
        #[arg(long)]
        at: Option<u64>,
    },
}

fn now_secs() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

fn parse_role(s: &str) -> CliResult<Role> {
    Ok(serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown role {s:?}"))?)
}

fn describe(c: &Certificate) -> String {
    format!("{} ({:?}) {}", c.body.subject, c.role(), c.fingerprint())
}

fn save_key(key: &SoftwareKey, path: &Path) -> CliResult {
    key.save(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(())
}

fn main() -> CliResult {
    match Cli::parse().cmd {
        Cmd::InitRoot { subject, key_out, chain_out, days } => {
            let key = SoftwareKey::generate(&mut OsRng);
            let now = now_secs();
            let root = self_signed_root(&subject, &key, now, now + days * DAY);
            save_key(&key, &key_out)?;
            write_json(&chain_out, &vec![root.clone()])?;
            println!("{}", describe(&root));
        }
        Cmd::Keygen { out } => {
            let key = SoftwareKey::generate(&mut OsRng);
            save_key(&key, &out)?;
            println!("{}", b64_encode(key.public_key().as_bytes()));
        }
        Cmd::Issue { issuer_chain, issuer_key, subject, role, public_key, subject_key, days, out } => {
            let chain = load_chain(&issuer_chain)?;
            let issuer = chain.last().ok_or("empty issuer chain")?;
            let key = SoftwareKey::load(&issuer_key)?;
            let public_key = match (public_key, subject_key) {
                (Some(b64), _) => public_key_from_b64(&b64).ok_or("malformed public key")?,
                (None, Some(path)) => SoftwareKey::load(&path)?.public_key(),
                (None, None) => return Err("one of --public-key or --subject-key is required".into()),
            };
            let now = now_secs();
            let req = CertRequest {
                subject,
                role: parse_role(&role)?,
                public_key,
                not_before: now,
                not_after: now + days * DAY,
            };
            let cert = issue_certificate(issuer, &key, &req, now)?;
            let mut full = chain.clone();
            full.push(cert.clone());
            write_json(&out, &full)?;
            println!("{}", describe(&cert));
        }
        Cmd::Verify { chain, root, at } => {
            let chain = load_chain(&chain)?;
            validate_chain(&chain, &load_trust_root(&root)?, at.unwrap_or_else(now_secs))?;
            for (i, c) in chain.iter().enumerate() {
                println!("{i}: {}", describe(c));
            }
        }
    }
    Ok(())
}
