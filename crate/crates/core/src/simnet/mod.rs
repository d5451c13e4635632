//! In-process deployment: n keyservers, a database and clients wired over an
//! [`InMemoryNetwork`] with a virtual clock, driven by scripted scenarios.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

mod transcript;

pub use transcript::{transcript_assert, violations, Predicate, Secrets, Transcript, TranscriptRecord};

use crate::builder::{build_entries, build_hashed_table, BuildConfig, BuildError, BuildOutput, HarmlessCorpus, HazardKind, HazardSource};
use crate::certs::{DevPki, Identity, Role};
use crate::client::{ClientError, ScreeningReport, Screener};
use crate::clock::VirtualClock;
use crate::doprf::{DoprfClient, KeyserverHandle, SubsetPolicy};
use crate::group::{Group, Scalar};
use crate::hashdb::{HashDb, MemoryNotifier, RemoteHashDb};
use crate::keyserver::{provision, Keyserver, LimiterConfig, RemoteKeyserver};
use crate::lifecycle::{rotate, RotationError, RotationOutcome};
use crate::sharing::{distributed_keygen, interpolate, proactive_reshare, KeyId, KeyShare, ProtocolError, RoundOutcome, SessionId, SharingConfig};
use crate::table::HashedTable;
use crate::transport::InMemoryNetwork;
use crate::windows::{parse_fasta, query_windows, reverse_complement, QueryMode, SequenceRecord};

/// Scenario time starts here (ms since the epoch).
pub const SIM_EPOCH_MS: u64 = 1_700_000_000_000;

pub fn keyserver_name(i: u32) -> String {
    format!("ks{i}")
}

pub const DB_NAME: &str = "db";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("scenario invalid: {0}")]
    ScenarioInvalid(String),
    #[error("key generation failed: {0}")]
    Keygen(ProtocolError),
    #[error("table build failed: {0}")]
    Build(String),
    #[error("event {index} ({event}): expected {expected}, got {got}")]
    Expectation { index: usize, event: String, expected: String, got: String },
}

/// A running deployment. Every field is public so tests can reach in the way
/// an adversary with physical access would.
pub struct World<G: Group> {
    pub net: Arc<InMemoryNetwork>,
    pub clock: Arc<VirtualClock>,
    pub pki: DevPki,
    pub cfg: SharingConfig,
    pub servers: Vec<Arc<Keyserver<G>>>,
    pub db: Arc<HashDb<G>>,
    pub notifier: Arc<MemoryNotifier>,
    pub coordinator: Identity,
    pub provider: Identity,
    pub database_identity: Identity,
    pub rotations: u32,
    reshares: u32,
    rng: ChaCha20Rng,
}

impl<G: Group> World<G> {
    /// Provisions keyservers, runs key generation over the network and
    /// starts a database with an empty table.
    pub fn new(seed: u64, n: u32, t: u32, limiter: LimiterConfig) -> Result<Self, SimError> {
        let cfg = SharingConfig::new(n, t).map_err(|e| SimError::ScenarioInvalid(e.to_string()))?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut pki = DevPki::new(rng.gen(), 0, SIM_EPOCH_MS / 1000 + 100 * 365 * 86_400);
        let clock = Arc::new(VirtualClock::new(SIM_EPOCH_MS));
        let net = InMemoryNetwork::new();
        let servers: Vec<Arc<Keyserver<G>>> = provision(n, t, limiter, &mut rng)
            .into_iter()
            .map(|(c, k)| {
                let s = rng.gen();
                Arc::new(Keyserver::new(c, k, pki.trust(), clock.clone(), s).expect("provisioned config is valid"))
            })
            .collect();
        for s in &servers {
            net.register(&keyserver_name(s.index()), s.clone());
        }
        let coordinator = pki.identity("coordinator", Role::Infrastructure);
        let provider = pki.identity("provider", Role::Provider);
        let database_identity = pki.identity("database", Role::Infrastructure);
        let notifier = Arc::new(MemoryNotifier::default());

        let admins = remotes::<G>(&net, &servers, &coordinator, "coordinator");
        distributed_keygen(&admins, &cfg, SessionId::new("keygen"), KeyId::new("k1")).map_err(SimError::Keygen)?;

        let db_client = DoprfClient::new(handles::<G>(&net, &servers, &database_identity, DB_NAME), cfg)
            .with_policy(SubsetPolicy::LowestIndex)
            .sequential();
        let db = Arc::new(
            HashDb::<G>::new(
                HashedTable::empty(0, KeyId::new("k1"), 0),
                Arc::new(database_identity.key.clone()),
                pki.trust(),
                clock.clone(),
            )
            .with_notifier(notifier.clone())
            .with_keyservers(db_client)
            .with_seed(rng.gen()),
        );
        net.register(DB_NAME, db.clone());
        Ok(Self {
            net,
            clock,
            pki,
            cfg,
            servers,
            db,
            notifier,
            coordinator,
            provider,
            database_identity,
            rotations: 0,
            reshares: 0,
            rng,
        })
    }

    pub fn admins(&self) -> Vec<RemoteKeyserver<G>> {
        remotes(&self.net, &self.servers, &self.coordinator, "coordinator")
    }

    /// A deterministic DOPRF client acting as `who`, sending from `from`.
    pub fn doprf_client(&self, who: &Identity, from: &str) -> DoprfClient<G> {
        DoprfClient::new(handles(&self.net, &self.servers, who, from), self.cfg)
            .with_policy(SubsetPolicy::LowestIndex)
            .sequential()
    }

    pub fn screener(&mut self, region: &str, mode: QueryMode) -> Screener<G> {
        let db = RemoteHashDb::new(DB_NAME, self.net.transport("provider"), self.provider.credentials());
        Screener::new(self.doprf_client(&self.provider.clone(), "provider"), db, region, mode).with_seed(self.rng.gen())
    }

    /// Curates, hashes through the keyservers and installs a new table
    /// version containing `sources` in addition to what is already there.
    pub fn install_hazards(&mut self, sources: &[HazardSource], cfg: &BuildConfig) -> Result<BuildOutput, SimError> {
        let out = build_entries(sources, &HarmlessCorpus::default(), cfg).map_err(|e| SimError::Build(e.to_string()))?;
        let client = self.doprf_client(&self.coordinator.clone(), "builder");
        let current = self.db.table();
        let mut seed = ChaCha20Rng::seed_from_u64(self.rng.gen());
        let mut added = build_hashed_table(&out.entries, &client, current.version + 1, false, &mut seed)
            .map_err(|e: BuildError| SimError::Build(e.to_string()))?;
        if added.key_id != current.key_id {
            return Err(SimError::Build("keyservers moved to a new key; rebuild the table".into()));
        }
        added.merge(&current);
        let db = RemoteHashDb::new(DB_NAME, self.net.transport("builder"), self.coordinator.credentials());
        db.swap(added.to_bytes()).map_err(|e| SimError::Build(e.to_string()))?;
        Ok(out)
    }

    pub fn kill(&self, i: u32) {
        self.net.kill(&keyserver_name(i));
    }

    pub fn revive(&self, i: u32) {
        self.net.revive(&keyserver_name(i));
    }

    pub fn reshare(&mut self) -> Result<RoundOutcome, ProtocolError> {
        self.reshares += 1;
        proactive_reshare(&self.admins(), &self.cfg, SessionId::new(format!("reshare-{}", self.reshares)))
    }

    pub fn rotate(&mut self) -> Result<RotationOutcome, RotationError> {
        self.rotations += 1;
        let db = RemoteHashDb::new(DB_NAME, self.net.transport("coordinator"), self.coordinator.credentials());
        let key = KeyId::new(format!("k{}", self.rotations + 1));
        rotate(&self.admins(), &self.cfg, &db, &format!("rotate-{}", self.rotations), key)
    }

    /// What an attacker reading server `i`'s memory would get.
    pub fn capture(&self, i: u32) -> Option<KeyShare<G::Scalar>> {
        self.servers.iter().find(|s| s.index() == i)?.capture_share()
    }

    /// The current PRF key, interpolated from every server's live share.
    /// Only the harness can do this.
    pub fn oracle_key(&self) -> Option<G::Scalar> {
        let shares: Vec<KeyShare<G::Scalar>> = self.servers.iter().filter_map(|s| s.capture_share()).collect();
        let epoch = shares.iter().map(|s| s.epoch).max()?;
        let points: Vec<(u32, G::Scalar)> = shares
            .iter()
            .filter(|s| s.epoch == epoch)
            .take(self.cfg.t as usize)
            .map(|s| (s.server_index, s.value))
            .collect();
        if points.len() < self.cfg.t as usize {
            return None;
        }
        interpolate(&points, 0).ok()
    }

    /// Every share value currently held, primary and update, for scanning.
    pub fn share_bytes(&self) -> Vec<[u8; 32]> {
        self.servers
            .iter()
            .flat_map(|s| [s.capture_share(), s.capture_update_share()])
            .flatten()
            .map(|s| s.value.to_bytes())
            .collect()
    }
}

fn remotes<G: Group>(net: &Arc<InMemoryNetwork>, servers: &[Arc<Keyserver<G>>], who: &Identity, from: &str) -> Vec<RemoteKeyserver<G>> {
    let transport = net.transport(from);
    servers
        .iter()
        .map(|s| RemoteKeyserver::new(s.index(), &keyserver_name(s.index()), transport.clone(), who.credentials()))
        .collect()
}

fn handles<G: Group>(
    net: &Arc<InMemoryNetwork>,
    servers: &[Arc<Keyserver<G>>],
    who: &Identity,
    from: &str,
) -> Vec<Arc<dyn KeyserverHandle<G>>> {
    remotes(net, servers, who, from)
        .into_iter()
        .map(|r| Arc::new(r) as Arc<dyn KeyserverHandle<G>>)
        .collect()
}

/// Seeded uniform DNA.
pub fn random_dna(rng: &mut impl Rng, len: usize) -> String {
    (0..len).map(|_| b"ACGT"[rng.gen_range(0..4)] as char).collect()
}

// ---- scenarios ----

fn default_region() -> String {
    "US".into()
}

fn default_hazard_kind() -> HazardKind {
    HazardKind::Virus
}

fn default_regions() -> Vec<String> {
    vec!["*".into()]
}

fn default_peptide_stride() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HazardSpec {
    pub accession: String,
    #[serde(default = "default_hazard_kind")]
    pub kind: HazardKind,
    #[serde(default = "default_regions")]
    pub regions: Vec<String>,
    /// Literal residues; random DNA of `length` bases otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residues: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Kill { server: u32 },
    Revive { server: u32 },
    Reshare,
    Rotate,
    /// Screen exactly one of: a slice of a scenario hazard, seeded random
    /// DNA, or literal FASTA.
    Screen {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        hazard: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        range: Option<(usize, usize)>,
        #[serde(default)]
        reverse_complement: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        random: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fasta: Option<String>,
        #[serde(default)]
        mode: QueryMode,
    },
    Capture { server: u32 },
    AdvanceClock { ms: u64 },
    /// Interpolate the key from the most recent capture of each listed
    /// server (all captures when omitted) and compare with the live key.
    AttemptReconstruct {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        servers: Option<Vec<u32>>,
    },
}

impl Event {
    pub fn name(&self) -> &'static str {
        match self {
            Event::Kill { .. } => "kill",
            Event::Revive { .. } => "revive",
            Event::Reshare => "reshare",
            Event::Rotate => "rotate",
            Event::Screen { .. } => "screen",
            Event::Capture { .. } => "capture",
            Event::AdvanceClock { .. } => "advance_clock",
            Event::AttemptReconstruct { .. } => "attempt_reconstruct",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    #[serde(flatten)]
    pub event: Event,
    /// Fail the run unless the event's outcome equals this.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub n: u32,
    pub t: u32,
    #[serde(default = "default_region")]
    pub region: String,
    #[serde(default)]
    pub hazards: Vec<HazardSpec>,
    #[serde(default = "default_peptide_stride")]
    pub peptide_stride: usize,
    pub events: Vec<Step>,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::ScenarioInvalid(m));
        if let Err(e) = SharingConfig::new(self.n, self.t) {
            return bad(e.to_string());
        }
        if self.peptide_stride == 0 {
            return bad("peptide_stride must be positive".into());
        }
        for h in &self.hazards {
            if h.residues.is_none() && h.length.is_none() {
                return bad(format!("hazard {} needs residues or a length", h.accession));
            }
        }
        for (i, step) in self.events.iter().enumerate() {
            match &step.event {
                Event::Kill { server } | Event::Revive { server } | Event::Capture { server } => {
                    if *server == 0 || *server > self.n {
                        return bad(format!("event {i}: no server {server}"));
                    }
                }
                Event::AttemptReconstruct { servers: Some(list) } => {
                    if list.iter().any(|s| *s == 0 || *s > self.n) {
                        return bad(format!("event {i}: unknown server"));
                    }
                }
                Event::Screen { hazard, random, fasta, range, .. } => {
                    let sources = hazard.is_some() as u8 + random.is_some() as u8 + fasta.is_some() as u8;
                    if sources != 1 {
                        return bad(format!("event {i}: screen needs exactly one source"));
                    }
                    if let Some(a) = hazard {
                        if !self.hazards.iter().any(|h| &h.accession == a) {
                            return bad(format!("event {i}: unknown hazard {a}"));
                        }
                    } else if range.is_some() {
                        return bad(format!("event {i}: range applies to hazards only"));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

struct Runner<G: Group> {
    world: World<G>,
    region: String,
    hazards: BTreeMap<String, String>,
    captured: BTreeMap<u32, KeyShare<G::Scalar>>,
    secrets: Secrets,
    records: Vec<TranscriptRecord>,
    pending: Vec<TranscriptRecord>,
    rng: ChaCha20Rng,
}

impl<G: Group> Runner<G> {
    /// Moves wire messages recorded so far, then any verdicts, into the log.
    fn drain(&mut self) {
        let messages = self.world.net.take_transcript();
        self.records.extend(messages.into_iter().map(TranscriptRecord::from));
        self.records.append(&mut self.pending);
    }

    fn scan_shares(&mut self) {
        for s in self.world.share_bytes() {
            self.secrets.shares.insert(s);
        }
    }

    fn screen_input(&mut self, event: &Event) -> Result<Vec<SequenceRecord>, String> {
        let Event::Screen { hazard, range, reverse_complement: rc, random, fasta, .. } = event else {
            unreachable!("only screen events carry input")
        };
        let mut residues = if let Some(a) = hazard {
            let full = &self.hazards[a];
            match range {
                Some((s, e)) if s < e && *e <= full.len() => full[*s..*e].to_string(),
                Some(_) => return Err("range outside hazard".into()),
                None => full.clone(),
            }
        } else if let Some(len) = random {
            random_dna(&mut self.rng, *len)
        } else {
            return parse_fasta(fasta.as_deref().unwrap_or_default().as_bytes()).map_err(|e| e.to_string());
        };
        if *rc {
            residues = reverse_complement(&residues);
        }
        Ok(vec![SequenceRecord::new("order", residues)])
    }

    fn step(&mut self, index: usize, event: &Event) -> String {
        let w = &mut self.world;
        match event {
            Event::Kill { server } => {
                w.kill(*server);
                "ok".into()
            }
            Event::Revive { server } => {
                w.revive(*server);
                "ok".into()
            }
            Event::AdvanceClock { ms } => {
                w.clock.advance(*ms);
                "ok".into()
            }
            Event::Reshare => match w.reshare() {
                Ok(out) => format!("epoch {} committed {:?}", out.epoch, out.committed),
                Err(e) => format!("error: {e}"),
            },
            Event::Rotate => {
                let before = w.db.table();
                for h in before.hashes() {
                    self.secrets.pre_rotation_hashes.insert(*h);
                }
                match w.rotate() {
                    Ok(out) => format!("rotated to {} ({} entries, db v{})", out.new_key, out.rekeyed_entries, out.db_version),
                    Err(e) => format!("error: {e}"),
                }
            }
            Event::Capture { server } => match w.capture(*server) {
                Some(share) => {
                    let epoch = share.epoch;
                    self.captured.insert(*server, share);
                    format!("captured epoch {epoch}")
                }
                None => "nothing".into(),
            },
            Event::AttemptReconstruct { servers } => {
                let points: Vec<(u32, G::Scalar)> = self
                    .captured
                    .iter()
                    .filter(|(i, _)| servers.as_ref().is_none_or(|l| l.contains(i)))
                    .map(|(i, s)| (*i, s.value))
                    .collect();
                if (points.len() as u32) < w.cfg.t {
                    return "insufficient".into();
                }
                match (interpolate(&points[..w.cfg.t as usize], 0), w.oracle_key()) {
                    (Ok(guess), Some(k)) if guess == k => "reconstructed".into(),
                    _ => "failed".into(),
                }
            }
            Event::Screen { mode, .. } => {
                let records = match self.screen_input(event) {
                    Ok(r) => r,
                    Err(e) => return format!("error: {e}"),
                };
                for (i, r) in records.iter().enumerate() {
                    for win in query_windows(i as u32, r, *mode).windows {
                        self.secrets.add_window(&win.payload, &win.hash_input());
                    }
                }
                let region = self.region.clone();
                let screener = self.world.screener(&region, *mode);
                let result = screener.screen_records(&records);
                let outcome = outcome_of(&result);
                if let Ok(report) = &result {
                    self.pending.push(TranscriptRecord::Verdict {
                        event: index,
                        decision: report.decision,
                        windows: report.windows,
                        matches: report.matches.len(),
                        accessions: report.matches.iter().map(|m| m.accession.clone()).collect::<std::collections::BTreeSet<_>>().into_iter().collect(),
                        db_version: report.db_version,
                        receipt: crate::wire::b64_encode(&report.receipt.to_bytes()),
                    });
                }
                outcome
            }
        }
    }
}

pub fn outcome_of(result: &Result<ScreeningReport, ClientError>) -> String {
    match result {
        Ok(r) => r.decision.name().to_string(),
        Err(ClientError::QuorumUnavailable(_)) => "quorum_unavailable".into(),
        Err(ClientError::DatabaseUnreachable(_)) => "database_unreachable".into(),
        Err(ClientError::DatabaseRejected { code, .. }) => format!("rejected: {code}"),
        Err(e) => format!("error: {e}"),
    }
}

/// Builds the world a scenario describes, installs its hazards and runs its
/// events in order. The transcript holds every message on the wire, every
/// event outcome and every verdict.
pub fn run_scenario<G: Group>(s: &Scenario) -> Result<Transcript, SimError> {
    s.validate()?;
    let mut world = World::<G>::new(s.seed, s.n, s.t, LimiterConfig::default())?;
    let mut rng = ChaCha20Rng::seed_from_u64(s.seed ^ 0x5eed);
    let mut hazards = BTreeMap::new();
    let mut sources = Vec::new();
    for h in &s.hazards {
        let residues = match &h.residues {
            Some(r) => r.to_ascii_uppercase(),
            None => random_dna(&mut rng, h.length.unwrap_or_default()),
        };
        let regions: Vec<&str> = h.regions.iter().map(String::as_str).collect();
        sources.push(HazardSource::new(&h.accession, &residues, h.kind, &regions));
        hazards.insert(h.accession.clone(), residues);
    }
    let mut secrets = Secrets::default();
    if !sources.is_empty() {
        let cfg = BuildConfig {
            seed: s.seed,
            peptide_stride: s.peptide_stride,
            ..BuildConfig::default()
        };
        let out = world.install_hazards(&sources, &cfg)?;
        for e in &out.entries {
            secrets.add_window(&e.payload, &e.hash_input());
        }
    }
    let mut runner = Runner {
        world,
        region: s.region.clone(),
        hazards,
        captured: BTreeMap::new(),
        secrets,
        records: Vec::new(),
        pending: Vec::new(),
        rng,
    };
    runner.drain();
    runner.scan_shares();
    for (index, step) in s.events.iter().enumerate() {
        let outcome = runner.step(index, &step.event);
        runner.scan_shares();
        runner.drain();
        runner.records.push(TranscriptRecord::Event {
            index,
            event: step.event.name().into(),
            outcome: outcome.clone(),
        });
        if let Some(expected) = &step.expect {
            if *expected != outcome {
                return Err(SimError::Expectation {
                    index,
                    event: step.event.name().into(),
                    expected: expected.clone(),
                    got: outcome,
                });
            }
        }
    }
    for h in runner.world.db.table().hashes() {
        runner.secrets.table_hashes.insert(*h);
    }
    Ok(Transcript {
        records: runner.records,
        secrets: runner.secrets,
    })
}

#[cfg(test)]
mod tests;
