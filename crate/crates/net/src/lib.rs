//! HTTP deployment of the dnascreen services plus the shared plumbing behind
//! the command-line tools.

use std::path::Path;
use std::sync::Arc;

use dnascreen_core::certs::{Certificate, SoftwareKey};
use dnascreen_core::client::{load_chain, load_presentation, ClientConfig, ClientError, ReceiptStore, Screener};
use dnascreen_core::doprf::{DoprfClient, KeyserverHandle, SubsetPolicy};
use dnascreen_core::group::Group;
use dnascreen_core::hashdb::RemoteHashDb;
use dnascreen_core::keyserver::{KeyserverConfig, RemoteKeyserver, TransportKey};
use dnascreen_core::sharing::SharingConfig;
use dnascreen_core::transport::{Credentials, Transport};
use ed25519_dalek::VerifyingKey;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub mod http;

pub use http::{spawn, HttpTransport, ServerHandle};

pub type CliResult<T = ()> = Result<T, Box<dyn std::error::Error>>;

/// Runs `$body` with `$G` bound to the group named by `$name`.
#[macro_export]
macro_rules! with_group {
    ($name:expr, $G:ident => $body:expr) => {
        match $name {
            "ristretto255" => {
                type $G = dnascreen_core::group::Ristretto;
                $body
            }
            "residue61" => {
                type $G = dnascreen_core::group::TestGroup61;
                $body
            }
            other => Err(format!("unknown group {other:?} (expected ristretto255 or residue61)").into()),
        }
    };
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(())
}

/// The trust root is the first certificate of a chain file (or a file
/// holding just the root certificate).
pub fn load_trust_root(path: &Path) -> CliResult<VerifyingKey> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let root: Certificate = match serde_json::from_str::<Vec<Certificate>>(&text) {
        Ok(chain) => chain.into_iter().next().ok_or("empty chain file")?,
        Err(_) => serde_json::from_str(&text)?,
    };
    Ok(root.body.public_key().ok_or("root certificate has a malformed key")?)
}

pub fn load_credentials(chain: &Path, key: &Path) -> CliResult<Credentials> {
    let chain = load_chain(chain)?;
    let key = SoftwareKey::load(key)?;
    if chain.last().and_then(|c| c.body.public_key()) != Some(dnascreen_core::certs::Signer::public_key(&key)) {
        return Err("signing key does not match the chain's leaf certificate".into());
    }
    Ok(Credentials {
        chain,
        key: Arc::new(key),
    })
}

/// `INDEX=URL`, as given on the command line.
pub fn parse_endpoint(s: &str) -> Result<(u32, String), String> {
    let (i, url) = s.split_once('=').ok_or_else(|| format!("expected INDEX=URL, got {s:?}"))?;
    let i: u32 = i.parse().map_err(|_| format!("bad keyserver index {i:?}"))?;
    Ok((i, url.to_string()))
}

/// A keyserver's provisioning file: its configuration and transport key.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NodeFile {
    pub config: KeyserverConfig,
    pub transport: serde_json::Value,
}

impl NodeFile {
    pub fn new(config: KeyserverConfig, key: &TransportKey) -> Self {
        Self {
            config,
            transport: serde_json::from_str(&key.to_json()).expect("key json"),
        }
    }

    pub fn transport_key(&self) -> CliResult<TransportKey> {
        Ok(TransportKey::from_json(&self.transport.to_string())?)
    }
}

pub fn remote_keyservers<G: Group>(
    endpoints: &[(u32, String)],
    transport: Arc<dyn Transport>,
    creds: &Credentials,
) -> Vec<RemoteKeyserver<G>> {
    endpoints
        .iter()
        .map(|(i, url)| RemoteKeyserver::new(*i, url, transport.clone(), creds.clone()))
        .collect()
}

pub fn doprf_client<G: Group>(
    endpoints: &[(u32, String)],
    cfg: SharingConfig,
    transport: Arc<dyn Transport>,
    creds: &Credentials,
) -> DoprfClient<G> {
    let handles = remote_keyservers::<G>(endpoints, transport, creds)
        .into_iter()
        .map(|r| Arc::new(r) as Arc<dyn KeyserverHandle<G>>)
        .collect();
    DoprfClient::new(handles, cfg)
}

/// Everything `synthclient screen` needs, from its configuration file.
pub fn screener_from_config<G: Group>(cfg: &ClientConfig, transport: Arc<dyn Transport>) -> Result<Screener<G>, ClientError> {
    let creds = load_credentials(&cfg.certificate, &cfg.key).map_err(|e| ClientError::Config(e.to_string()))?;
    let sharing = SharingConfig::new(cfg.n, cfg.t).map_err(|e| ClientError::Config(e.to_string()))?;
    let endpoints: Vec<(u32, String)> = cfg.keyservers.iter().map(|k| (k.index, k.url.clone())).collect();
    let doprf = doprf_client::<G>(&endpoints, sharing, transport.clone(), &creds)
        .with_policy(cfg.subset.clone().unwrap_or(SubsetPolicy::ByLatency))
        .with_batch_size(cfg.batch_size);
    let db = RemoteHashDb::new(&cfg.database, transport, creds);
    let mut screener = Screener::new(doprf, db, &cfg.region, cfg.mode);
    if let Some(p) = &cfg.elt {
        screener = screener.with_elt(load_presentation(p)?);
    }
    if let Some(p) = &cfg.receipts {
        screener = screener.with_receipt_store(ReceiptStore::open(p).map_err(|e| ClientError::Io(e.to_string()))?);
    }
    Ok(screener)
}
