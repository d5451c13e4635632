//! Keyserver node: provisioning and serving.

use std::path::PathBuf;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use dnascreen_core::clock::SystemClock;
use dnascreen_core::keyserver::{provision, Keyserver, LimiterConfig, DEFAULT_RATE_PER_SEC};
use dnascreen_core::transport::Service;
use rand::rngs::OsRng;
use dnascreen_net::{http, load_trust_root, read_json, with_group, write_json, CliResult, NodeFile};

#[derive(Parser)]
#[command(about = "Holds one share of the screening key and answers blinded evaluations")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write one node file per server (configuration and transport key).
    Provision {
        #[arg(long)]
        n: u32,
        #[arg(long)]
        t: u32,
        #[arg(long)]
        out: PathBuf,
        /// Per-client burst capacity, in windows.
        #[arg(long, default_value_t = DEFAULT_RATE_PER_SEC)]
        capacity: u64,
        /// Per-client sustained rate, in windows per second.
        #[arg(long, default_value_t = DEFAULT_RATE_PER_SEC)]
        refill: u64,
    },
    Serve {
        #[arg(long)]
        node: PathBuf,
        /// Root certificate (or any chain starting at it).
        #[arg(long)]
        root: PathBuf,
        #[arg(long, default_value = "127.0.0.1:7001")]
        listen: String,
        /// Encrypted share state, loaded at start and rewritten on change.
        #[arg(long)]
        state: Option<PathBuf>,
        #[arg(long, default_value = "ristretto255")]
        group: String,
    },
}

fn main() -> CliResult {
    match Cli::parse().cmd {
        Cmd::Provision { n, t, out, capacity, refill } => {
            std::fs::create_dir_all(&out)?;
            let limiter = LimiterConfig {
                capacity,
                refill_per_sec: refill,
            };
            for (cfg, key) in provision(n, t, limiter, &mut OsRng) {
                let path = out.join(format!("ks{}.json", cfg.index));
                write_json(&path, &NodeFile::new(cfg, &key))?;
                println!("{}", path.display());
            }
            Ok(())
        }
        Cmd::Serve { node, root, listen, state, group } => {
            let node: NodeFile = read_json(&node)?;
            let trust = load_trust_root(&root)?;
            with_group!(group.as_str(), G => {
                let mut ks = Keyserver::<G>::new(node.config.clone(), node.transport_key()?, trust, Arc::new(SystemClock), 0)?.with_os_rng();
                if let Some(p) = &state {
                    ks = ks.with_state_file(p)?;
                }
                eprintln!("keyserver {} ({} of {}), group {}", ks.index(), node.config.t, node.config.n, group);
                let service: Arc<dyn Service> = Arc::new(ks);
                http::serve_forever(service, &listen)?;
                Ok(())
            })
        }
    }
}
