use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::hashdb::Decision;
use crate::table::Hash;
use crate::transport::{Direction, TranscriptEntry};
use crate::wire::b64_encode;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TranscriptRecord {
    Message(TranscriptEntry),
    Event {
        index: usize,
        event: String,
        outcome: String,
    },
    Verdict {
        event: usize,
        decision: Decision,
        windows: usize,
        matches: usize,
        accessions: Vec<String>,
        db_version: u64,
        receipt: String,
    },
}

impl From<TranscriptEntry> for TranscriptRecord {
    fn from(e: TranscriptEntry) -> Self {
        TranscriptRecord::Message(e)
    }
}

/// What the harness knows and the wire must not carry. Never serialized.
#[derive(Clone, Debug, Default)]
pub struct Secrets {
    /// Plaintext windows (payload text and hash input bytes) from hazards
    /// and screened orders.
    pub windows: BTreeSet<Vec<u8>>,
    /// Every share value any server held at any point.
    pub shares: BTreeSet<[u8; 32]>,
    /// Hashes in the final table.
    pub table_hashes: BTreeSet<Hash>,
    /// Hashes in the table as it stood before each rotation.
    pub pre_rotation_hashes: BTreeSet<Hash>,
}

impl Secrets {
    pub fn add_window(&mut self, payload: &str, hash_input: &[u8]) {
        self.windows.insert(payload.as_bytes().to_vec());
        self.windows.insert(hash_input.to_vec());
    }
}

#[derive(Clone, Debug, Default)]
pub struct Transcript {
    pub records: Vec<TranscriptRecord>,
    pub secrets: Secrets,
}

impl Transcript {
    pub fn messages(&self) -> impl Iterator<Item = &TranscriptEntry> {
        self.records.iter().filter_map(|r| match r {
            TranscriptRecord::Message(m) => Some(m),
            _ => None,
        })
    }

    pub fn outcomes(&self) -> Vec<(usize, String)> {
        self.records
            .iter()
            .filter_map(|r| match r {
                TranscriptRecord::Event { index, outcome, .. } => Some((*index, outcome.clone())),
                _ => None,
            })
            .collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Vec<TranscriptRecord>, serde_json::Error> {
        text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Predicate {
    /// No plaintext window, raw or encoded, in any message.
    NoPlaintextWindows,
    /// No share value, raw or encoded, in any message.
    NoShareValues,
    /// No stored table hash in any message sent to a keyserver.
    NoStoredHashesToKeyservers,
}

impl Predicate {
    pub const ALL: [Predicate; 3] = [
        Predicate::NoPlaintextWindows,
        Predicate::NoShareValues,
        Predicate::NoStoredHashesToKeyservers,
    ];
}

/// Byte strings grouped by length, so a payload can be scanned in one pass
/// per distinct length.
struct NeedleSet {
    by_len: BTreeMap<usize, HashSet<Vec<u8>>>,
}

impl NeedleSet {
    fn new() -> Self {
        Self { by_len: BTreeMap::new() }
    }

    fn add(&mut self, needle: Vec<u8>) {
        if !needle.is_empty() {
            self.by_len.entry(needle.len()).or_default().insert(needle);
        }
    }

    /// Adds the value raw, as lowercase hex and as standard base64.
    fn add_encoded(&mut self, raw: &[u8]) {
        self.add(raw.to_vec());
        self.add(hex::encode(raw).into_bytes());
        self.add(b64_encode(raw).into_bytes());
    }

    fn find_in(&self, hay: &[u8]) -> Option<Vec<u8>> {
        for (len, set) in &self.by_len {
            if hay.len() < *len {
                continue;
            }
            if let Some(w) = hay.windows(*len).find(|w| set.contains(*w)) {
                return Some(w.to_vec());
            }
        }
        None
    }
}

fn needles(t: &Transcript, p: Predicate) -> NeedleSet {
    let mut n = NeedleSet::new();
    match p {
        Predicate::NoPlaintextWindows => t.secrets.windows.iter().for_each(|w| n.add_encoded(w)),
        Predicate::NoShareValues => t.secrets.shares.iter().for_each(|s| n.add_encoded(s)),
        Predicate::NoStoredHashesToKeyservers => t
            .secrets
            .table_hashes
            .iter()
            .chain(&t.secrets.pre_rotation_hashes)
            .for_each(|h| n.add_encoded(h)),
    }
    n
}

fn in_scope(p: Predicate, m: &TranscriptEntry) -> bool {
    match p {
        Predicate::NoStoredHashesToKeyservers => m.direction == Direction::Request && m.to.starts_with("ks"),
        _ => true,
    }
}

/// Messages violating the predicate, with the offending bytes.
pub fn violations(t: &Transcript, p: Predicate) -> Vec<(u64, Vec<u8>)> {
    let set = needles(t, p);
    t.messages()
        .filter(|m| in_scope(p, m))
        .filter_map(|m| set.find_in(&m.payload).map(|hit| (m.seq, hit)))
        .collect()
}

pub fn transcript_assert(t: &Transcript, p: Predicate) -> bool {
    violations(t, p).is_empty()
}
