//! Key lifecycle operations across a running keyserver deployment.

use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use dnascreen_core::group::Group;
use dnascreen_core::hashdb::RemoteHashDb;
use dnascreen_core::lifecycle::rotate;
use dnascreen_core::sharing::{distributed_keygen, proactive_reshare, KeyId, Party, SessionId, SharingConfig};
use dnascreen_core::transport::Transport;
use dnascreen_net::{load_credentials, parse_endpoint, remote_keyservers, with_group, CliResult, HttpTransport};

#[derive(Parser)]
#[command(about = "Runs key generation, resharing and rotation rounds")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    #[arg(long = "keyserver", value_parser = parse_endpoint, global = true)]
    keyservers: Vec<(u32, String)>,
    #[arg(long, global = true)]
    n: Option<u32>,
    #[arg(long, global = true)]
    t: Option<u32>,
    /// Infrastructure chain, root first.
    #[arg(long, global = true)]
    chain: Option<PathBuf>,
    #[arg(long, global = true)]
    key: Option<PathBuf>,
    #[arg(long, default_value = "ristretto255", global = true)]
    group: String,
    /// Round identifier; defaults to one derived from the current time.
    #[arg(long, global = true)]
    session: Option<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Jointly generates a fresh key; every server must be up.
    Keygen {
        #[arg(long, default_value = "k1")]
        key_id: String,
    },
    /// Refreshes the shares of the current key.
    Reshare,
    /// Replaces the key and rekeys the database table.
    Rotate {
        #[arg(long)]
        database: String,
        #[arg(long)]
        key_id: String,
    },
    /// Prints each server's key and epoch.
    Status,
}

fn session(common: &Common, what: &str) -> String {
    common.session.clone().unwrap_or_else(|| {
        let ms = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_millis());
        format!("{what}-{ms}")
    })
}

fn run<G: Group>(common: &Common, cmd: &Cmd) -> CliResult {
    if common.keyservers.is_empty() {
        return Err("at least one --keyserver INDEX=URL is required".into());
    }
    let chain = common.chain.as_ref().ok_or("--chain is required")?;
    let key = common.key.as_ref().ok_or("--key is required")?;
    let creds = load_credentials(chain, key)?;
    let transport: Arc<dyn Transport> = Arc::new(HttpTransport::default());
    let parties = remote_keyservers::<G>(&common.keyservers, transport.clone(), &creds);
    let n = common.n.unwrap_or(common.keyservers.len() as u32);
    let cfg = SharingConfig::new(n, common.t.unwrap_or(n))?;
    match cmd {
        Cmd::Keygen { key_id } => {
            let out = distributed_keygen(&parties, &cfg, SessionId::new(session(common, "keygen")), KeyId::new(key_id.as_str()))?;
            println!("key {key_id} epoch {} on {:?}", out.epoch, out.committed);
        }
        Cmd::Reshare => {
            let out = proactive_reshare(&parties, &cfg, SessionId::new(session(common, "reshare")))?;
            println!("epoch {} committed {:?}", out.epoch, out.committed);
            if !out.unreachable.is_empty() {
                println!("unreachable {:?}; they keep old shares and must be restored", out.unreachable);
            }
        }
        Cmd::Rotate { database, key_id } => {
            let db = RemoteHashDb::new(database, transport.clone(), creds.clone());
            let out = rotate(&parties, &cfg, &db, &session(common, "rotate"), KeyId::new(key_id.as_str()))?;
            println!(
                "rotated {} -> {} at epoch {}: {} entries, table v{}",
                out.old_key, out.new_key, out.epoch, out.rekeyed_entries, out.db_version
            );
        }
        Cmd::Status => {
            for p in &parties {
                match p.status_wire() {
                    Ok(s) => println!(
                        "{}: key {} epoch {} ({} of {}, {})",
                        s.index,
                        s.key_id.map_or("-".into(), |k| k.to_string()),
                        s.epoch,
                        s.t,
                        s.n,
                        s.group
                    ),
                    Err(e) => println!("{} ({}): {e}", Party::index(p), p.endpoint()),
                }
            }
        }
    }
    Ok(())
}

fn main() -> CliResult {
    let cli = Cli::parse();
    with_group!(cli.common.group.as_str(), G => run::<G>(&cli.common, &cli.cmd))
}
