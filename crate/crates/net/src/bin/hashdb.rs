//! Hash database server.

use std::path::PathBuf;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use dnascreen_core::certs::{FileNonceStore, SoftwareKey};
use dnascreen_core::clock::SystemClock;
use dnascreen_core::hashdb::{FileNotifier, HashDb};
use dnascreen_core::sharing::SharingConfig;
use dnascreen_core::table::HashedTable;
use dnascreen_core::transport::Service;
use dnascreen_net::{
    doprf_client, http, load_credentials, load_trust_root, parse_endpoint, with_group, CliResult, HttpTransport,
};

#[derive(Parser)]
#[command(about = "Answers membership queries against the hashed hazard table")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    Serve {
        /// Table file; rewritten on every swap and rotation.
        #[arg(long)]
        table: PathBuf,
        /// Infrastructure certificate chain, root first.
        #[arg(long)]
        chain: PathBuf,
        /// Signing key for receipts and keyserver requests.
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        root: PathBuf,
        #[arg(long, default_value = "127.0.0.1:7100")]
        listen: String,
        /// Keyservers used during rotation, as INDEX=URL.
        #[arg(long = "keyserver", value_parser = parse_endpoint)]
        keyservers: Vec<(u32, String)>,
        #[arg(long, requires = "t")]
        n: Option<u32>,
        #[arg(long, requires = "n")]
        t: Option<u32>,
        /// Append-only log of exemption notifications.
        #[arg(long)]
        notifications: Option<PathBuf>,
        /// Consumed exemption nonces, kept across restarts.
        #[arg(long)]
        nonces: Option<PathBuf>,
        #[arg(long, default_value = "ristretto255")]
        group: String,
    },
}

fn main() -> CliResult {
    let Cmd::Serve { table, chain, key, root, listen, keyservers, n, t, notifications, nonces, group } = Cli::parse().cmd;
    let trust = load_trust_root(&root)?;
    let creds = load_credentials(&chain, &key)?;
    let signer = Arc::new(SoftwareKey::load(&key)?);
    let loaded = HashedTable::read_file(&table)?;
    eprintln!("table v{} ({} hashes, key {}@{})", loaded.version, loaded.len(), loaded.key_id, loaded.epoch);
    with_group!(group.as_str(), G => {
        let mut db = HashDb::<G>::new(loaded, signer, trust, Arc::new(SystemClock)).with_table_path(&table);
        if let Some(p) = &notifications {
            db = db.with_notifier(Arc::new(FileNotifier::open(p)?));
        }
        if let Some(p) = &nonces {
            db = db.with_nonce_store(Arc::new(FileNonceStore::open(p)?));
        }
        if !keyservers.is_empty() {
            let n = n.unwrap_or(keyservers.len() as u32);
            let t = t.unwrap_or(n);
            let cfg = SharingConfig::new(n, t)?;
            db = db.with_keyservers(doprf_client::<G>(&keyservers, cfg, Arc::new(HttpTransport::default()), &creds));
        }
        let service: Arc<dyn Service> = Arc::new(db);
        http::serve_forever(service, &listen)?;
        Ok(())
    })
}
