//! The database server: membership queries against the hashed hazard table,
//! verdicts, receipts, exemption notifications, and oblivious re-keying.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use ed25519_dalek::VerifyingKey;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

mod notify;
mod receipt;
mod remote;
mod verdict;

pub use notify::{FileNotifier, MemoryNotifier, Notification, Notifier};
pub use receipt::{issue_receipt, verify_receipt_bytes, Receipt, ReceiptError};
pub use remote::{DbClientError, RemoteHashDb};
pub use verdict::{match_effect, region_applies, verdict_rule, Decision, MatchEffect};

use crate::certs::{verify_elt, Certificate, EltError, EltPresentation, MemoryNonceStore, NonceStore, Role, Signer};
use crate::clock::Clock;
use crate::doprf::{DoprfClient, DoprfError, HashedWindow, KeyTarget};
use crate::group::Group;
use crate::sharing::KeyId;
use crate::table::{EntryMeta, Hash, HashedTable, TableError};
use crate::transport::{authenticate, Request, Response, Service};

/// Hashes `hashes[start..start + count]` came from one sequence with this
/// SHA-256 digest. Sent only for sequences named by a presented token.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DigestGroup {
    pub digest: String,
    pub start: u32,
    pub count: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreenRequest {
    /// The key the hashes were computed under.
    pub key_id: KeyId,
    pub region: String,
    pub hashes: Vec<HashedWindow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sequence_groups: Vec<DigestGroup>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elt: Option<EltPresentation>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub query_index: u32,
    #[serde(with = "crate::wire::b64_array")]
    pub hash: Hash,
    pub entry: EntryMeta,
    pub effect: MatchEffect,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub decision: Decision,
    pub matches: Vec<MatchRecord>,
    pub exemptions_applied: Vec<String>,
    pub db_version: u64,
    pub receipt: Receipt,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertCounters {
    pub screens: u64,
    pub windows: u64,
    pub matches: u64,
    pub denials: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionInfo {
    pub version: u64,
    pub key_id: KeyId,
    pub epoch: u64,
    pub entries: usize,
    pub group: String,
    /// Receipt verification key, base64.
    pub receipt_key: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub staged_rekey: Option<KeyId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum RekeyCommand {
    Stage { new_key_id: KeyId, epoch: u64 },
    Activate,
    Discard,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DbError {
    #[error("invalid certificate: {0}")]
    InvalidCertificate(String),
    #[error("role {0:?} may not call this endpoint")]
    Forbidden(Role),
    #[error("hash {0} is not a valid group element")]
    MalformedHash(usize),
    #[error("hashes were computed under key {request}, table uses {table}")]
    StaleKey { table: KeyId, request: KeyId },
    #[error("exemption token rejected: {0}")]
    EltInvalid(EltError),
    #[error("exemption token already used")]
    EltReplayed,
    #[error("table version {offered} is not newer than {current}")]
    VersionRegression { current: u64, offered: u64 },
    #[error("corrupt table: {0}")]
    CorruptTable(String),
    #[error("rekey failed: {0}")]
    Rekey(String),
    #[error("keyserver quorum unavailable: {0}")]
    QuorumUnavailable(String),
    #[error("no rekeyed table is staged")]
    RekeyNotStaged,
    #[error("staged table was derived from version {staged_from}, current is {current}")]
    RekeyStale { staged_from: u64, current: u64 },
    #[error("notification failed: {0}")]
    Notify(String),
    #[error("bad request: {0}")]
    BadRequest(String),
}

impl DbError {
    pub fn code(&self) -> &'static str {
        match self {
            DbError::InvalidCertificate(_) => "InvalidCertificate",
            DbError::Forbidden(_) => "Forbidden",
            DbError::MalformedHash(_) => "MalformedHash",
            DbError::StaleKey { .. } => "StaleKey",
            DbError::EltInvalid(_) => "EltInvalid",
            DbError::EltReplayed => "EltReplayed",
            DbError::VersionRegression { .. } => "VersionRegression",
            DbError::CorruptTable(_) => "CorruptTable",
            DbError::Rekey(_) => "Rekey",
            DbError::QuorumUnavailable(_) => "QuorumUnavailable",
            DbError::RekeyNotStaged => "RekeyNotStaged",
            DbError::RekeyStale { .. } => "RekeyStale",
            DbError::Notify(_) => "Notify",
            DbError::BadRequest(_) => "BadRequest",
        }
    }

    fn status(&self) -> u16 {
        match self {
            DbError::InvalidCertificate(_) => 401,
            DbError::Forbidden(_) => 403,
            DbError::MalformedHash(_) | DbError::BadRequest(_) | DbError::CorruptTable(_) => 400,
            DbError::StaleKey { .. } | DbError::VersionRegression { .. } | DbError::RekeyStale { .. } | DbError::RekeyNotStaged => 409,
            DbError::EltInvalid(_) | DbError::EltReplayed => 422,
            DbError::QuorumUnavailable(_) => 503,
            DbError::Rekey(_) | DbError::Notify(_) => 500,
        }
    }

    pub fn to_response(&self) -> Response {
        Response::error(self.status(), self.code(), &self.to_string())
    }
}

impl From<TableError> for DbError {
    fn from(e: TableError) -> Self {
        DbError::CorruptTable(e.to_string())
    }
}

struct Staged {
    from_version: u64,
    table: HashedTable,
}

pub struct HashDb<G: Group> {
    table: RwLock<Arc<HashedTable>>,
    staged: Mutex<Option<Staged>>,
    signer: Arc<dyn Signer>,
    trust_root: VerifyingKey,
    clock: Arc<dyn Clock>,
    nonces: Arc<dyn NonceStore>,
    notifier: Arc<dyn Notifier>,
    counters: Mutex<BTreeMap<String, CertCounters>>,
    table_path: Option<PathBuf>,
    rekey_client: Option<DoprfClient<G>>,
    rng: Mutex<ChaCha20Rng>,
}

impl<G: Group> HashDb<G> {
    pub fn new(table: HashedTable, signer: Arc<dyn Signer>, trust_root: VerifyingKey, clock: Arc<dyn Clock>) -> Self {
        Self {
            table: RwLock::new(Arc::new(table)),
            staged: Mutex::new(None),
            signer,
            trust_root,
            clock,
            nonces: Arc::new(MemoryNonceStore::default()),
            notifier: Arc::new(MemoryNotifier::default()),
            counters: Mutex::new(BTreeMap::new()),
            table_path: None,
            rekey_client: None,
            rng: Mutex::new(ChaCha20Rng::from_entropy()),
        }
    }

    pub fn with_nonce_store(mut self, store: Arc<dyn NonceStore>) -> Self {
        self.nonces = store;
        self
    }

    pub fn with_notifier(mut self, notifier: Arc<dyn Notifier>) -> Self {
        self.notifier = notifier;
        self
    }

    /// Swapped and rekeyed tables are written back to `path`.
    pub fn with_table_path(mut self, path: &Path) -> Self {
        self.table_path = Some(path.to_path_buf());
        self
    }

    /// The DOPRF client used during rotation. It must authenticate as
    /// infrastructure so the keyservers accept update-key evaluations.
    pub fn with_keyservers(mut self, client: DoprfClient<G>) -> Self {
        self.rekey_client = Some(client);
        self
    }

    pub fn with_seed(self, seed: u64) -> Self {
        *self.rng.lock().unwrap() = ChaCha20Rng::seed_from_u64(seed);
        self
    }

    pub fn table(&self) -> Arc<HashedTable> {
        Arc::clone(&self.table.read().unwrap())
    }

    pub fn receipt_key(&self) -> VerifyingKey {
        self.signer.public_key()
    }

    pub fn counters(&self) -> BTreeMap<String, CertCounters> {
        self.counters.lock().unwrap().clone()
    }

    pub fn version_info(&self) -> VersionInfo {
        let t = self.table();
        VersionInfo {
            version: t.version,
            key_id: t.key_id.clone(),
            epoch: t.epoch,
            entries: t.entry_count(),
            group: G::NAME.into(),
            receipt_key: crate::wire::b64_encode(self.signer.public_key().as_bytes()),
            staged_rekey: self.staged.lock().unwrap().as_ref().map(|s| s.table.key_id.clone()),
        }
    }

    /// Screens `req` for an authenticated requester. The requester chain is
    /// revalidated here so direct callers get the same checks as HTTP ones.
    pub fn screen(&self, req: &ScreenRequest, requester_chain: &[Certificate]) -> Result<Verdict, DbError> {
        let now_ms = self.clock.now_ms();
        crate::certs::validate_chain(requester_chain, &self.trust_root, now_ms / 1000)
            .map_err(|e| DbError::InvalidCertificate(e.to_string()))?;
        let requester = requester_chain.last().expect("validated chain is nonempty");
        if !requester.role().may_screen() {
            return Err(DbError::Forbidden(requester.role()));
        }
        let table = self.table();
        if req.key_id != table.key_id {
            return Err(DbError::StaleKey {
                table: table.key_id.clone(),
                request: req.key_id.clone(),
            });
        }
        for (i, h) in req.hashes.iter().enumerate() {
            match h.point::<G>() {
                Ok(p) if !p.is_identity() => {}
                _ => return Err(DbError::MalformedHash(i)),
            }
        }

        let grant = match &req.elt {
            Some(p) => Some(verify_elt(p, &self.trust_root, self.nonces.as_ref(), now_ms / 1000).map_err(|e| match e {
                EltError::EltReplayed => DbError::EltReplayed,
                other => DbError::EltInvalid(other),
            })?),
            None => None,
        };
        let exempt_ranges: Vec<(u32, u32)> = match &grant {
            Some(g) => req
                .sequence_groups
                .iter()
                .filter(|d| g.sequence_digests.contains(&d.digest.to_lowercase()))
                .map(|d| (d.start, d.start.saturating_add(d.count)))
                .collect(),
            None => Vec::new(),
        };

        let mut matches = Vec::new();
        for (qi, h) in req.hashes.iter().enumerate() {
            let Some(metas) = table.lookup(&h.bytes) else { continue };
            let qi = qi as u32;
            let in_range = exempt_ranges.iter().any(|(s, e)| *s <= qi && qi < *e);
            for entry in metas {
                let exempted = in_range || grant.as_ref().is_some_and(|g| g.accessions.contains(&entry.accession));
                let effect = match_effect(&entry.tags, &req.region, exempted);
                matches.push(MatchRecord {
                    query_index: qi,
                    hash: h.bytes,
                    entry,
                    effect,
                });
            }
        }
        let decision = verdict_rule(matches.iter().map(|m| m.effect));
        let exemptions_applied: Vec<String> = matches
            .iter()
            .filter(|m| m.effect == MatchEffect::Exempted)
            .map(|m| m.entry.accession.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();

        let fp = requester.fingerprint();
        // A denied order ships nothing, so there is nothing to notify about.
        let approved_by_exemption = decision != Decision::Denied && !exemptions_applied.is_empty();
        if let (Some(g), true) = (&grant, approved_by_exemption) {
            self.notifier
                .notify(&Notification {
                    timestamp_ms: now_ms,
                    nonce: g.nonce.clone(),
                    requester: fp.clone(),
                    presenter: g.presenter.clone(),
                    exempted: exemptions_applied.clone(),
                    contacts: g.contacts.clone(),
                })
                .map_err(|e| DbError::Notify(e.to_string()))?;
        }
        {
            let mut counters = self.counters.lock().unwrap();
            let c = counters.entry(fp.clone()).or_default();
            c.screens += 1;
            c.windows += req.hashes.len() as u64;
            c.matches += matches.len() as u64;
            c.denials += u64::from(decision == Decision::Denied);
        }
        let receipt = issue_receipt(req.hashes.len() as u64, table.version, decision, &fp, now_ms, self.signer.as_ref());
        Ok(Verdict {
            decision,
            matches,
            exemptions_applied,
            db_version: table.version,
            receipt,
        })
    }

    fn persist(&self, table: &HashedTable) -> Result<(), DbError> {
        match &self.table_path {
            Some(p) => table.write_file(p).map_err(DbError::from),
            None => Ok(()),
        }
    }

    /// Installs a newer table built under the same key. Screens holding the
    /// old snapshot finish against it.
    pub fn swap_version(&self, new: HashedTable) -> Result<u64, DbError> {
        let mut guard = self.table.write().unwrap();
        if new.version <= guard.version {
            return Err(DbError::VersionRegression {
                current: guard.version,
                offered: new.version,
            });
        }
        if new.key_id != guard.key_id {
            return Err(DbError::StaleKey {
                table: guard.key_id.clone(),
                request: new.key_id.clone(),
            });
        }
        self.persist(&new)?;
        let v = new.version;
        *guard = Arc::new(new);
        Ok(v)
    }

    pub fn swap_bytes(&self, bytes: &[u8]) -> Result<u64, DbError> {
        self.swap_version(HashedTable::from_bytes(bytes)?)
    }

    /// Computes `h^δ` for every stored hash through the keyservers' update
    /// sharing. Each hash is blinded by a fresh scalar before it leaves.
    pub fn stage_rekey(&self, new_key_id: KeyId, epoch: u64) -> Result<usize, DbError> {
        let client = self.rekey_client.as_ref().ok_or_else(|| DbError::Rekey("no keyservers configured".into()))?;
        let table = self.table();
        let points = table
            .hashes()
            .iter()
            .map(|h| G::decode(h))
            .collect::<Result<Vec<G>, _>>()
            .map_err(|e| DbError::CorruptTable(e.to_string()))?;
        let out = {
            let mut rng = self.rng.lock().unwrap();
            client.eval_elements(&points, KeyTarget::Update, &mut *rng).map_err(|e| match e {
                DoprfError::QuorumUnavailable { .. } | DoprfError::EpochMismatch(_) => DbError::QuorumUnavailable(e.to_string()),
                other => DbError::Rekey(other.to_string()),
            })?
        };
        let hashes: Vec<Hash> = out.points.iter().map(|p| p.encode()).collect();
        let rekeyed = table.rehashed(&hashes, table.version + 1, new_key_id, epoch)?;
        let n = rekeyed.entry_count();
        *self.staged.lock().unwrap() = Some(Staged {
            from_version: table.version,
            table: rekeyed,
        });
        Ok(n)
    }

    pub fn activate_rekey(&self) -> Result<u64, DbError> {
        let mut staged = self.staged.lock().unwrap();
        let s = staged.take().ok_or(DbError::RekeyNotStaged)?;
        let mut guard = self.table.write().unwrap();
        if s.from_version != guard.version {
            return Err(DbError::RekeyStale {
                staged_from: s.from_version,
                current: guard.version,
            });
        }
        self.persist(&s.table)?;
        let v = s.table.version;
        *guard = Arc::new(s.table);
        Ok(v)
    }

    pub fn discard_rekey(&self) {
        self.staged.lock().unwrap().take();
    }

    fn authorize(&self, req: &Request) -> Result<Certificate, DbError> {
        authenticate(req, &self.trust_root, self.clock.now_secs()).map_err(|e| DbError::InvalidCertificate(e.to_string()))
    }

    fn require_infrastructure(&self, req: &Request) -> Result<(), DbError> {
        let leaf = self.authorize(req)?;
        if leaf.role() != Role::Infrastructure {
            return Err(DbError::Forbidden(leaf.role()));
        }
        Ok(())
    }

    fn route(&self, req: &Request) -> Result<Response, DbError> {
        match req.path.as_str() {
            "/version" => Ok(Response::ok(&self.version_info())),
            "/screen" => {
                self.authorize(req)?;
                let body: ScreenRequest = serde_json::from_slice(&req.body).map_err(|e| DbError::BadRequest(e.to_string()))?;
                let chain = &req.auth.as_ref().expect("authorized").chain;
                Ok(Response::ok(&self.screen(&body, chain)?))
            }
            "/admin/swap" => {
                self.require_infrastructure(req)?;
                let v = self.swap_bytes(&req.body)?;
                Ok(Response::ok(&serde_json::json!({ "version": v })))
            }
            "/admin/rekey" => {
                self.require_infrastructure(req)?;
                let cmd: RekeyCommand = serde_json::from_slice(&req.body).map_err(|e| DbError::BadRequest(e.to_string()))?;
                let out = match cmd {
                    RekeyCommand::Stage { new_key_id, epoch } => serde_json::json!({ "staged": self.stage_rekey(new_key_id, epoch)? }),
                    RekeyCommand::Activate => serde_json::json!({ "version": self.activate_rekey()? }),
                    RekeyCommand::Discard => {
                        self.discard_rekey();
                        serde_json::json!({})
                    }
                };
                Ok(Response::ok(&out))
            }
            "/admin/counters" => {
                self.require_infrastructure(req)?;
                Ok(Response::ok(&self.counters()))
            }
            other => Ok(Response::error(404, "NotFound", other)),
        }
    }
}

impl<G: Group> Service for HashDb<G> {
    fn handle(&self, req: &Request) -> Response {
        self.route(req).unwrap_or_else(|e| e.to_response())
    }
}

/// The database side of a key rotation.
pub trait RekeyTarget {
    fn stage(&self, new_key_id: &KeyId, epoch: u64) -> Result<usize, String>;
    fn activate(&self) -> Result<u64, String>;
    fn discard(&self);
}

impl<G: Group> RekeyTarget for HashDb<G> {
    fn stage(&self, new_key_id: &KeyId, epoch: u64) -> Result<usize, String> {
        self.stage_rekey(new_key_id.clone(), epoch).map_err(|e| e.to_string())
    }

    fn activate(&self) -> Result<u64, String> {
        self.activate_rekey().map_err(|e| e.to_string())
    }

    fn discard(&self) {
        self.discard_rekey()
    }
}
