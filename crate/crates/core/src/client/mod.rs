//! The screening client: FASTA in, windows hashed through the keyserver
//! quorum, one membership query, and a report with match coordinates.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rand::rngs::OsRng;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

mod store;

pub use store::{ReceiptStore, StoredReceipt};

use crate::builder::VariantKind;
use crate::certs::{Certificate, EltPresentation};
use crate::doprf::{DoprfClient, DoprfError, HashedWindow, SubsetPolicy, DEFAULT_BATCH_SIZE};
use crate::group::Group;
use crate::hashdb::{DbClientError, DigestGroup, Decision, MatchEffect, Receipt, RemoteHashDb, ScreenRequest, Verdict};
use crate::sharing::KeyId;
use crate::windows::{parse_fasta, query_windows, ParseError, QueryMode, SequenceRecord, Strand, Window, WindowKind};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyserverEndpoint {
    pub index: u32,
    pub url: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Text,
    Json,
}

fn default_batch() -> usize {
    DEFAULT_BATCH_SIZE
}

fn default_group() -> String {
    "ristretto255".into()
}

/// Client configuration file. Relative paths resolve against the file's
/// directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientConfig {
    pub keyservers: Vec<KeyserverEndpoint>,
    pub database: String,
    pub n: u32,
    pub t: u32,
    #[serde(default)]
    pub mode: QueryMode,
    pub region: String,
    /// JSON array of certificates, root first.
    pub certificate: PathBuf,
    pub key: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elt: Option<PathBuf>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub format: OutputFormat,
    #[serde(default = "default_group")]
    pub group: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub receipts: Option<PathBuf>,
    /// Fixed subset selection, for reproducible runs. Defaults to latency.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset: Option<SubsetPolicy>,
    /// Trust root public key (base64), for checking receipts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trust_root: Option<String>,
}

impl ClientConfig {
    pub fn validate(&self) -> Result<(), ClientError> {
        let bad = |m: &str| Err(ClientError::Config(m.to_string()));
        if self.region.trim().is_empty() {
            return bad("region must be nonempty");
        }
        if self.t == 0 || self.t > self.n {
            return bad("need 1 <= t <= n");
        }
        if (self.keyservers.len() as u32) < self.n {
            return bad("fewer keyserver endpoints than n");
        }
        let mut seen = std::collections::BTreeSet::new();
        for k in &self.keyservers {
            if k.index == 0 || k.index > self.n || !seen.insert(k.index) {
                return bad("keyserver indices must be distinct and in 1..=n");
            }
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ClientError> {
        let text = std::fs::read_to_string(path).map_err(|e| ClientError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg: ClientConfig = serde_json::from_str(&text).map_err(|e| ClientError::Config(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.certificate);
        fix(&mut cfg.key);
        if let Some(p) = cfg.elt.as_mut() {
            fix(p);
        }
        if let Some(p) = cfg.receipts.as_mut() {
            fix(p);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn load_chain(path: &Path) -> Result<Vec<Certificate>, ClientError> {
    let text = std::fs::read_to_string(path).map_err(|e| ClientError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| ClientError::Config(format!("{}: {e}", path.display())))
}

pub fn load_presentation(path: &Path) -> Result<EltPresentation, ClientError> {
    let text = std::fs::read_to_string(path).map_err(|e| ClientError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| ClientError::Config(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClientError {
    #[error("parse error: {0}")]
    Parse(#[from] ParseError),
    #[error("no sequences in input")]
    EmptyInput,
    #[error("keyserver quorum unavailable: {0}")]
    QuorumUnavailable(String),
    #[error("keyserver error: {0}")]
    Keyserver(DoprfError),
    #[error("database unreachable: {0}")]
    DatabaseUnreachable(String),
    #[error("database rejected the request ({status} {code}): {message}")]
    DatabaseRejected { status: u16, code: String, message: String },
    #[error("configuration: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl ClientError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ClientError::Parse(_) | ClientError::EmptyInput => 4,
            ClientError::QuorumUnavailable(_) => 5,
            ClientError::DatabaseUnreachable(_) => 6,
            ClientError::DatabaseRejected { .. } => 7,
            ClientError::Keyserver(_) => 8,
            ClientError::Config(_) | ClientError::Io(_) => 9,
        }
    }
}

impl From<DoprfError> for ClientError {
    fn from(e: DoprfError) -> Self {
        match e {
            DoprfError::QuorumUnavailable { .. } => ClientError::QuorumUnavailable(e.to_string()),
            other => ClientError::Keyserver(other),
        }
    }
}

impl From<DbClientError> for ClientError {
    fn from(e: DbClientError) -> Self {
        match e {
            DbClientError::Unreachable(m) => ClientError::DatabaseUnreachable(m),
            DbClientError::Rejected { status, code, message } => ClientError::DatabaseRejected { status, code, message },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordVerdict {
    pub record: String,
    pub windows: usize,
    pub decision: Decision,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MatchCoordinate {
    pub record_index: u32,
    pub offset: u32,
    pub strand: Strand,
    pub kind: WindowKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perm: Option<u8>,
    pub record: String,
    pub accession: String,
    /// Where the matched window sits in the hazard source.
    pub hazard_offset: u32,
    pub hazard_strand: Strand,
    pub variant_kind: VariantKind,
    pub effect: MatchEffect,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub parse_ms: f64,
    pub hash_ms: f64,
    pub lookup_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreeningReport {
    pub decision: Decision,
    pub windows: usize,
    pub bases: usize,
    pub db_version: u64,
    pub key_id: KeyId,
    pub records: Vec<RecordVerdict>,
    pub matches: Vec<MatchCoordinate>,
    pub exemptions_applied: Vec<String>,
    pub order_hash: String,
    pub receipt: Receipt,
    pub timings: Timings,
}

impl ScreeningReport {
    pub fn exit_code(&self) -> i32 {
        match self.decision {
            Decision::Accepted => 0,
            Decision::Alert => 2,
            Decision::Denied => 3,
        }
    }

    /// Same verdicts and matches, ignoring receipts and timings.
    pub fn same_outcome(&self, other: &Self) -> bool {
        self.decision == other.decision
            && self.records == other.records
            && self.matches == other.matches
            && self.exemptions_applied == other.exemptions_applied
    }
}

/// Hex SHA-256 of a normalized sequence, as named on exemption tokens.
pub fn sequence_digest(residues: &str) -> String {
    hex::encode(Sha256::digest(residues.to_ascii_uppercase().replace('U', "T").as_bytes()))
}

/// Identifies an order in the receipt store.
pub fn order_hash(records: &[SequenceRecord]) -> String {
    let mut h = Sha256::new();
    for r in records {
        h.update(r.id.as_bytes());
        h.update([0]);
        h.update(r.residues.as_bytes());
        h.update([0]);
    }
    hex::encode(h.finalize())
}

pub fn render_report(report: &ScreeningReport, format: OutputFormat) -> Vec<u8> {
    match format {
        OutputFormat::Json => serde_json::to_vec_pretty(report).expect("report serializes"),
        OutputFormat::Text => {
            let mut out = format!(
                "{} ({} windows, db v{})\n",
                report.decision.name(),
                report.windows,
                report.db_version
            );
            for m in &report.matches {
                out.push_str(&format!(
                    "{}:{}{} {} {} {}\n",
                    m.record,
                    m.offset,
                    m.strand.sign(),
                    m.kind,
                    m.accession,
                    m.variant_kind.name()
                ));
            }
            if !report.exemptions_applied.is_empty() {
                out.push_str(&format!("exempted: {}\n", report.exemptions_applied.join(", ")));
            }
            out.into_bytes()
        }
    }
}

pub fn parse_report(bytes: &[u8]) -> Result<ScreeningReport, serde_json::Error> {
    serde_json::from_slice(bytes)
}

pub struct Screener<G: Group> {
    doprf: DoprfClient<G>,
    db: RemoteHashDb,
    region: String,
    mode: QueryMode,
    elt: Option<EltPresentation>,
    store: Option<ReceiptStore>,
    rng: Mutex<ChaCha20Rng>,
}

impl<G: Group> Screener<G> {
    pub fn new(doprf: DoprfClient<G>, db: RemoteHashDb, region: &str, mode: QueryMode) -> Self {
        let mut seed = [0u8; 32];
        OsRng.fill_bytes(&mut seed);
        Self {
            doprf,
            db,
            region: region.to_string(),
            mode,
            elt: None,
            store: None,
            rng: Mutex::new(ChaCha20Rng::from_seed(seed)),
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self {
            rng: Mutex::new(ChaCha20Rng::seed_from_u64(seed)),
            ..self
        }
    }

    pub fn with_elt(mut self, elt: EltPresentation) -> Self {
        self.elt = Some(elt);
        self
    }

    pub fn with_receipt_store(mut self, store: ReceiptStore) -> Self {
        self.store = Some(store);
        self
    }

    /// Exemption tokens are single use; a screener holds at most one.
    pub fn take_elt(&mut self) -> Option<EltPresentation> {
        self.elt.take()
    }

    pub fn screen_file(&self, path: &Path) -> Result<ScreeningReport, ClientError> {
        let start = Instant::now();
        let bytes = std::fs::read(path).map_err(|e| ClientError::Io(format!("{}: {e}", path.display())))?;
        let records = parse_fasta(&bytes)?;
        let parse_ms = ms(start);
        let mut report = self.screen_records(&records)?;
        report.timings.parse_ms += parse_ms;
        Ok(report)
    }

    pub fn screen_fasta(&self, bytes: &[u8]) -> Result<ScreeningReport, ClientError> {
        let start = Instant::now();
        let records = parse_fasta(bytes)?;
        let parse_ms = ms(start);
        let mut report = self.screen_records(&records)?;
        report.timings.parse_ms += parse_ms;
        Ok(report)
    }

    pub fn screen_records(&self, records: &[SequenceRecord]) -> Result<ScreeningReport, ClientError> {
        if records.is_empty() {
            return Err(ClientError::EmptyInput);
        }
        let t0 = Instant::now();
        let sets: Vec<_> = records
            .iter()
            .enumerate()
            .map(|(i, r)| query_windows(i as u32, r, self.mode))
            .collect();
        let windows: Vec<&Window> = sets.iter().flat_map(|s| s.windows.iter()).collect();
        let inputs: Vec<Vec<u8>> = windows.iter().map(|w| w.hash_input()).collect();
        let groups = self.digest_groups(records, &sets);
        let parse_ms = ms(t0);

        let t1 = Instant::now();
        let refs: Vec<&[u8]> = inputs.iter().map(|v| v.as_slice()).collect();
        let out = {
            let mut rng = self.rng.lock().unwrap();
            self.doprf.eval_inputs(&refs, &mut *rng)?
        };
        let hashes: Vec<HashedWindow> = out
            .points
            .iter()
            .zip(&windows)
            .map(|(p, w)| HashedWindow::new(p, w.kind))
            .collect();
        let hash_ms = ms(t1);

        let t2 = Instant::now();
        let req = ScreenRequest {
            key_id: out.key_id.clone(),
            region: self.region.clone(),
            hashes,
            sequence_groups: groups,
            elt: self.elt.clone(),
        };
        let verdict = self.db.screen(&req)?;
        let lookup_ms = ms(t2);

        let report = assemble(records, &windows, out.key_id, &verdict, Timings { parse_ms, hash_ms, lookup_ms });
        if let Some(store) = &self.store {
            store.append(&report).map_err(|e| ClientError::Io(e.to_string()))?;
        }
        Ok(report)
    }

    fn digest_groups(&self, records: &[SequenceRecord], sets: &[crate::windows::WindowSet]) -> Vec<DigestGroup> {
        let Some(elt) = &self.elt else { return Vec::new() };
        let named = &elt.token.body.sequence_digests;
        let mut groups = Vec::new();
        let mut start = 0u32;
        for (r, set) in records.iter().zip(sets) {
            let count = set.len() as u32;
            let digest = sequence_digest(&r.residues);
            if named.iter().any(|d| d.eq_ignore_ascii_case(&digest)) {
                groups.push(DigestGroup { digest, start, count });
            }
            start += count;
        }
        groups
    }
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1000.0
}

fn assemble(
    records: &[SequenceRecord],
    windows: &[&Window],
    key_id: KeyId,
    verdict: &Verdict,
    timings: Timings,
) -> ScreeningReport {
    let mut worst: BTreeMap<u32, Vec<MatchEffect>> = BTreeMap::new();
    let mut matches = Vec::with_capacity(verdict.matches.len());
    for m in &verdict.matches {
        let Some(w) = windows.get(m.query_index as usize) else { continue };
        let o = w.origin;
        worst.entry(o.record).or_default().push(m.effect);
        matches.push(MatchCoordinate {
            record_index: o.record,
            offset: o.offset,
            strand: o.strand,
            kind: w.kind,
            frame: o.frame,
            perm: o.perm,
            record: records[o.record as usize].id.clone(),
            accession: m.entry.accession.clone(),
            hazard_offset: m.entry.offset,
            hazard_strand: m.entry.strand,
            variant_kind: m.entry.variant_kind,
            effect: m.effect,
        });
    }
    matches.sort();
    let per_record = records
        .iter()
        .enumerate()
        .map(|(i, r)| RecordVerdict {
            record: r.id.clone(),
            windows: windows.iter().filter(|w| w.origin.record == i as u32).count(),
            decision: crate::hashdb::verdict_rule(worst.get(&(i as u32)).into_iter().flatten().copied()),
        })
        .collect();
    ScreeningReport {
        decision: verdict.decision,
        windows: windows.len(),
        bases: records.iter().map(|r| r.residues.len()).sum(),
        db_version: verdict.db_version,
        key_id,
        records: per_record,
        matches,
        exemptions_applied: verdict.exemptions_applied.clone(),
        order_hash: order_hash(records),
        receipt: verdict.receipt.clone(),
        timings,
    }
}

#[cfg(test)]
mod tests;
