//! A keyserver holds one share of the PRF key, answers blinded evaluations,
//! and takes part in key-lifecycle rounds.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use ed25519_dalek::VerifyingKey;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

mod limiter;
mod remote;
pub mod seal;

pub use limiter::{LimiterConfig, RateLimiter, DEFAULT_RATE_PER_SEC};
pub use remote::{LocalKeyserverHandle, RemoteKeyserver};
pub use seal::{SealError, TransportKey};

use crate::certs::{Certificate, Role};
use crate::clock::Clock;
use crate::doprf::{share_exponent, DoprfError, EvalRequest, ServerStatus, DEFAULT_BATCH_SIZE};
use crate::group::{Group, Scalar};
use crate::sharing::{
    DealRound, KeyId, KeyShare, Party, PartyError, PartyStatus, RoundError, RoundHeader, SessionId, ShareHolder,
    SharingConfig, SharingError,
};
use crate::transport::{authenticate, ErrorBody, Request, Response, Service};
use crate::wire::{decode_point, encode_point, DecodeError};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalWire {
    pub key_id: KeyId,
    pub epoch: u64,
    /// The evaluation set `L`.
    pub set: Vec<u32>,
    /// Base64 32-byte encodings of blinded points.
    pub points: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalReplyWire {
    pub server_index: u32,
    pub points: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusWire {
    pub index: u32,
    pub group: String,
    pub n: u32,
    pub t: u32,
    pub epoch: u64,
    pub key_id: Option<KeyId>,
    pub update_key_id: Option<KeyId>,
    pub limiter: LimiterConfig,
}

impl StatusWire {
    pub fn server_status(&self) -> Option<ServerStatus> {
        Some(ServerStatus {
            index: self.index,
            key_id: self.key_id.clone()?,
            epoch: self.epoch,
            update_key_id: self.update_key_id.clone(),
        })
    }
}

/// A sub-share encrypted to its recipient's transport key.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SealedShare {
    pub from: u32,
    pub to: u32,
    #[serde(with = "crate::wire::b64_array")]
    pub ephemeral: [u8; 32],
    #[serde(with = "crate::wire::b64")]
    pub ciphertext: Vec<u8>,
}

fn seal_aad(session: &SessionId, from: u32, to: u32) -> Vec<u8> {
    format!("subshare:{session}:{from}->{to}").into_bytes()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum RoundMsg {
    Status,
    Prepare { header: RoundHeader, round: DealRound },
    Deal { session: SessionId },
    Deliver { session: SessionId, share: SealedShare },
    Commit { session: SessionId },
    Abort { session: SessionId },
}

/// A round message addressed to one server index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundEnvelope {
    pub to: u32,
    #[serde(flatten)]
    pub msg: RoundMsg,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum RoundReply {
    Ok,
    Status { status: PartyStatus },
    Dealt { shares: Vec<SealedShare> },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum KeyserverError {
    #[error("rate limited; retry after {retry_after_ms} ms")]
    RateLimited { retry_after_ms: u64 },
    #[error("request does not match the server key (server epoch {server_epoch})")]
    EpochMismatch { server_epoch: u64 },
    #[error("server {index} is not in the evaluation set")]
    NotInEvaluationSet { index: u32 },
    #[error("malformed point")]
    MalformedPoint,
    #[error("batch of {0} points exceeds the limit")]
    BatchTooLarge(usize),
    #[error("no key installed")]
    NoKey,
    #[error("the update key may only be evaluated by infrastructure")]
    UpdateKeyRestricted,
    #[error("unknown round: {0}")]
    UnknownRound(String),
    #[error("round rejected: {0}")]
    Round(RoundError),
    #[error("unauthenticated: {0}")]
    Unauthenticated(String),
    #[error("role {0:?} may not call this endpoint")]
    Forbidden(Role),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("state file: {0}")]
    State(String),
}

impl From<RoundError> for KeyserverError {
    fn from(e: RoundError) -> Self {
        match e {
            RoundError::UnknownRound(s) => KeyserverError::UnknownRound(s),
            other => KeyserverError::Round(other),
        }
    }
}

impl KeyserverError {
    pub fn to_response(&self) -> Response {
        let (status, code) = match self {
            KeyserverError::RateLimited { .. } => (429, "RateLimited"),
            KeyserverError::EpochMismatch { .. } => (409, "EpochMismatch"),
            KeyserverError::NotInEvaluationSet { .. } => (400, "NotInEvaluationSet"),
            KeyserverError::MalformedPoint => (400, "MalformedPoint"),
            KeyserverError::BatchTooLarge(_) => (413, "BatchTooLarge"),
            KeyserverError::NoKey => (503, "NoKey"),
            KeyserverError::UpdateKeyRestricted => (403, "Forbidden"),
            KeyserverError::UnknownRound(_) => (404, "UnknownRound"),
            KeyserverError::Round(RoundError::EpochMismatch { .. }) => (409, "EpochMismatch"),
            KeyserverError::Round(_) => (422, "RoundRejected"),
            KeyserverError::Unauthenticated(_) => (401, "Unauthenticated"),
            KeyserverError::Forbidden(_) => (403, "Forbidden"),
            KeyserverError::BadRequest(_) => (400, "BadRequest"),
            KeyserverError::State(_) => (500, "State"),
        };
        Response::with_error(
            status,
            ErrorBody {
                error: code.into(),
                message: self.to_string(),
                retry_after_ms: match self {
                    KeyserverError::RateLimited { retry_after_ms } => Some(*retry_after_ms),
                    _ => None,
                },
                server_epoch: match self {
                    KeyserverError::EpochMismatch { server_epoch } => Some(*server_epoch),
                    _ => None,
                },
            },
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyserverConfig {
    pub index: u32,
    pub n: u32,
    pub t: u32,
    #[serde(default)]
    pub limiter: LimiterConfig,
    /// Transport public keys of every server, by index.
    #[serde(with = "peer_keys")]
    pub peers: BTreeMap<u32, [u8; 32]>,
}

mod peer_keys {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::wire::{b64_decode, b64_encode};

    pub fn serialize<S: Serializer>(m: &BTreeMap<u32, [u8; 32]>, s: S) -> Result<S::Ok, S::Error> {
        m.iter()
            .map(|(k, v)| (k.to_string(), b64_encode(v)))
            .collect::<BTreeMap<String, String>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<u32, [u8; 32]>, D::Error> {
        let raw = BTreeMap::<String, String>::deserialize(d)?;
        raw.into_iter()
            .map(|(k, v)| {
                let idx: u32 = k.parse().map_err(serde::de::Error::custom)?;
                let bytes = b64_decode(&v).map_err(serde::de::Error::custom)?;
                let arr: [u8; 32] = bytes
                    .as_slice()
                    .try_into()
                    .map_err(|_| serde::de::Error::custom("transport key must be 32 bytes"))?;
                Ok((idx, arr))
            })
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct StoredShare {
    server_index: u32,
    key_id: KeyId,
    epoch: u64,
    value: String,
}

pub struct Keyserver<G: Group> {
    index: u32,
    cfg: SharingConfig,
    holder: RwLock<ShareHolder<G::Scalar>>,
    limiter: RateLimiter,
    transport_key: TransportKey,
    peers: BTreeMap<u32, [u8; 32]>,
    trust_root: VerifyingKey,
    clock: Arc<dyn Clock>,
    rng: Mutex<ChaCha20Rng>,
    state_path: Option<PathBuf>,
}

impl<G: Group> Keyserver<G> {
    pub fn new(
        config: KeyserverConfig,
        transport_key: TransportKey,
        trust_root: VerifyingKey,
        clock: Arc<dyn Clock>,
        seed: u64,
    ) -> Result<Self, SharingError> {
        let cfg = SharingConfig::new(config.n, config.t)?;
        cfg.validate_for::<G::Scalar>()?;
        if config.index == 0 || config.index > config.n {
            return Err(SharingError::BadConfig(format!("index {} outside 1..={}", config.index, config.n)));
        }
        Ok(Self {
            index: config.index,
            cfg,
            holder: RwLock::new(ShareHolder::new(config.index)),
            limiter: RateLimiter::new(config.limiter, Arc::clone(&clock)),
            transport_key,
            peers: config.peers,
            trust_root,
            clock,
            rng: Mutex::new(ChaCha20Rng::seed_from_u64(seed)),
            state_path: None,
        })
    }

    /// Replaces the seeded generator with one drawn from OS entropy. Seeds
    /// are for reproducible runs only.
    pub fn with_os_rng(self) -> Self {
        *self.rng.lock().unwrap() = ChaCha20Rng::from_entropy();
        self
    }

    /// Persists the primary share to `path`, encrypted under a key derived
    /// from the transport secret, and loads it if the file exists.
    pub fn with_state_file(mut self, path: &Path) -> Result<Self, KeyserverError> {
        if path.exists() {
            let data = std::fs::read(path).map_err(|e| KeyserverError::State(e.to_string()))?;
            let plain = seal::decrypt_at_rest(&self.state_key(), &data).map_err(|e| KeyserverError::State(e.to_string()))?;
            let stored: StoredShare = serde_json::from_slice(&plain).map_err(|e| KeyserverError::State(e.to_string()))?;
            if stored.server_index != self.index {
                return Err(KeyserverError::State(format!("state file belongs to server {}", stored.server_index)));
            }
            let value = crate::wire::decode_scalar::<G::Scalar>(&stored.value).map_err(|e| KeyserverError::State(e.to_string()))?;
            *self.holder.write().unwrap() = ShareHolder::with_primary(KeyShare {
                server_index: self.index,
                value,
                epoch: stored.epoch,
                key_id: stored.key_id,
            });
        }
        self.state_path = Some(path.to_path_buf());
        Ok(self)
    }

    fn state_key(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"keyserver-state-v1");
        h.update(self.transport_key.secret_bytes());
        h.finalize().into()
    }

    fn persist(&self) -> Result<(), KeyserverError> {
        let Some(path) = &self.state_path else { return Ok(()) };
        let stored = {
            let holder = self.holder.read().unwrap();
            let Some(p) = holder.primary() else { return Ok(()) };
            StoredShare {
                server_index: p.server_index,
                key_id: p.key_id.clone(),
                epoch: p.epoch,
                value: crate::wire::encode_scalar(&p.value),
            }
        };
        let plain = serde_json::to_vec(&stored).expect("serializable");
        let blob = seal::encrypt_at_rest(&self.state_key(), &plain, &mut *self.rng.lock().unwrap());
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, blob)
            .and_then(|_| std::fs::rename(&tmp, path))
            .map_err(|e| KeyserverError::State(e.to_string()))
    }

    pub fn index(&self) -> u32 {
        self.index
    }

    pub fn transport_public(&self) -> [u8; 32] {
        self.transport_key.public()
    }

    pub fn status_wire(&self) -> StatusWire {
        let h = self.holder.read().unwrap();
        StatusWire {
            index: self.index,
            group: G::NAME.into(),
            n: self.cfg.n,
            t: self.cfg.t,
            epoch: h.epoch(),
            key_id: h.primary().map(|p| p.key_id.clone()),
            update_key_id: h.update().map(|u| u.key_id.clone()),
            limiter: self.limiter.config(),
        }
    }

    /// Adversary hook for simulations: the share an attacker who broke into
    /// this server right now would obtain. Not reachable over the network.
    pub fn capture_share(&self) -> Option<KeyShare<G::Scalar>> {
        self.holder.read().unwrap().primary().cloned()
    }

    pub fn capture_update_share(&self) -> Option<KeyShare<G::Scalar>> {
        self.holder.read().unwrap().update().cloned()
    }

    /// Installs a share directly, for tests and for provisioning from a
    /// trusted dealer.
    pub fn install_share(&self, share: KeyShare<G::Scalar>) {
        *self.holder.write().unwrap() = ShareHolder::with_primary(share);
    }

    /// Raises every point to `λ_i^{L,0}·k_i`. `may_use_update` gates the
    /// rotation scalar, which only infrastructure callers may evaluate.
    pub fn handle_eval(&self, req: &EvalRequest<G>, client: &str, may_use_update: bool) -> Result<Vec<G>, KeyserverError> {
        if !req.set.contains(&self.index) {
            return Err(KeyserverError::NotInEvaluationSet { index: self.index });
        }
        if req.points.len() > DEFAULT_BATCH_SIZE {
            return Err(KeyserverError::BatchTooLarge(req.points.len()));
        }
        let share = {
            let h = self.holder.read().unwrap();
            let server_epoch = h.epoch();
            let primary = h.primary().ok_or(KeyserverError::NoKey)?;
            let share = if primary.key_id == req.key_id {
                primary
            } else {
                match h.update() {
                    Some(u) if u.key_id == req.key_id && may_use_update => u,
                    Some(u) if u.key_id == req.key_id => return Err(KeyserverError::UpdateKeyRestricted),
                    _ => return Err(KeyserverError::EpochMismatch { server_epoch }),
                }
            };
            if share.epoch != req.epoch {
                return Err(KeyserverError::EpochMismatch { server_epoch });
            }
            share.value
        };
        if req.points.iter().any(|p| p.is_identity()) {
            return Err(KeyserverError::MalformedPoint);
        }
        if req.set.iter().any(|i| *i == 0 || *i > self.cfg.n) || req.set.len() != self.cfg.t as usize {
            return Err(KeyserverError::BadRequest(format!("evaluation set must be {} distinct indices in 1..={}", self.cfg.t, self.cfg.n)));
        }
        self.limiter
            .try_acquire(client, req.points.len() as u64)
            .map_err(|retry_after_ms| KeyserverError::RateLimited { retry_after_ms })?;
        let e = share_exponent::<G::Scalar>(&req.set, self.index, &share).map_err(|e| match e {
            DoprfError::Sharing(s) => KeyserverError::BadRequest(s.to_string()),
            other => KeyserverError::BadRequest(other.to_string()),
        })?;
        Ok(req.points.iter().map(|p| p.exp(&e)).collect())
    }

    pub fn handle_round(&self, env: &RoundEnvelope) -> Result<RoundReply, KeyserverError> {
        if env.to != self.index {
            return Err(KeyserverError::UnknownRound(format!("addressed to server {}", env.to)));
        }
        match &env.msg {
            RoundMsg::Status => Ok(RoundReply::Status {
                status: self.holder.read().unwrap().status(),
            }),
            RoundMsg::Prepare { header, round } => {
                if header.n != self.cfg.n || header.t != self.cfg.t {
                    return Err(KeyserverError::BadRequest("round configuration differs from server".into()));
                }
                self.holder.write().unwrap().prepare(header, round)?;
                Ok(RoundReply::Ok)
            }
            RoundMsg::Deal { session } => {
                let mut rng = self.rng.lock().unwrap();
                let dealt = self.holder.write().unwrap().deal(session, &mut *rng)?;
                let mut shares = Vec::with_capacity(dealt.subshares.len());
                for (to, value) in dealt.subshares {
                    let Some(pk) = self.peers.get(&to) else {
                        self.holder.write().unwrap().abort(session);
                        return Err(KeyserverError::BadRequest(format!("no transport key for server {to}")));
                    };
                    let (ephemeral, ciphertext) = seal::seal(pk, &seal_aad(session, self.index, to), &value.to_bytes(), &mut *rng);
                    shares.push(SealedShare {
                        from: self.index,
                        to,
                        ephemeral,
                        ciphertext,
                    });
                }
                Ok(RoundReply::Dealt { shares })
            }
            RoundMsg::Deliver { session, share } => {
                if share.to != self.index {
                    return Err(KeyserverError::UnknownRound(format!("sub-share addressed to server {}", share.to)));
                }
                let plain = seal::open(&self.transport_key, &share.ephemeral, &seal_aad(session, share.from, share.to), &share.ciphertext)
                    .map_err(|e| KeyserverError::BadRequest(e.to_string()))?;
                let value = crate::group::scalar_from_slice::<G::Scalar>(&plain).map_err(|e| KeyserverError::BadRequest(e.to_string()))?;
                self.holder.write().unwrap().receive(session, share.from, value)?;
                Ok(RoundReply::Ok)
            }
            RoundMsg::Commit { session } => {
                self.holder.write().unwrap().commit(session)?;
                self.persist()?;
                Ok(RoundReply::Ok)
            }
            RoundMsg::Abort { session } => {
                self.holder.write().unwrap().abort(session);
                Ok(RoundReply::Ok)
            }
        }
    }

    fn authorize(&self, req: &Request) -> Result<Certificate, KeyserverError> {
        authenticate(req, &self.trust_root, self.clock.now_secs()).map_err(|e| KeyserverError::Unauthenticated(e.to_string()))
    }

    fn serve_eval(&self, req: &Request) -> Result<Response, KeyserverError> {
        let leaf = self.authorize(req)?;
        if !leaf.role().may_screen() {
            return Err(KeyserverError::Forbidden(leaf.role()));
        }
        let wire: EvalWire = serde_json::from_slice(&req.body).map_err(|e| KeyserverError::BadRequest(e.to_string()))?;
        let points = wire
            .points
            .iter()
            .map(|p| decode_point::<G>(p))
            .collect::<Result<Vec<G>, DecodeError>>()
            .map_err(|_| KeyserverError::MalformedPoint)?;
        let eval = EvalRequest {
            key_id: wire.key_id,
            epoch: wire.epoch,
            set: wire.set,
            points,
        };
        let out = self.handle_eval(&eval, &leaf.fingerprint(), leaf.role() == Role::Infrastructure)?;
        Ok(Response::ok(&EvalReplyWire {
            server_index: self.index,
            points: out.iter().map(encode_point).collect(),
        }))
    }

    fn serve_round(&self, req: &Request) -> Result<Response, KeyserverError> {
        let leaf = self.authorize(req)?;
        if leaf.role() != Role::Infrastructure {
            return Err(KeyserverError::Forbidden(leaf.role()));
        }
        let env: RoundEnvelope = serde_json::from_slice(&req.body).map_err(|e| KeyserverError::BadRequest(e.to_string()))?;
        Ok(Response::ok(&self.handle_round(&env)?))
    }
}

impl<G: Group> Service for Keyserver<G> {
    fn handle(&self, req: &Request) -> Response {
        let result = match req.path.as_str() {
            "/status" => Ok(Response::ok(&self.status_wire())),
            "/eval" => self.serve_eval(req),
            "/admin/round" => self.serve_round(req),
            other => return Response::error(404, "NotFound", other),
        };
        result.unwrap_or_else(|e| e.to_response())
    }
}

fn party_error(e: KeyserverError) -> PartyError {
    PartyError::Rejected(e.to_string())
}

impl<G: Group> Keyserver<G> {
    fn round(&self, msg: RoundMsg) -> Result<RoundReply, PartyError> {
        self.handle_round(&RoundEnvelope { to: self.index, msg }).map_err(party_error)
    }
}

/// In-process participation, bypassing the network.
impl<G: Group> Party for Keyserver<G> {
    type Payload = SealedShare;

    fn index(&self) -> u32 {
        self.index
    }

    fn status(&self) -> Result<PartyStatus, PartyError> {
        Ok(self.holder.read().unwrap().status())
    }

    fn prepare(&self, header: &RoundHeader, round: &DealRound) -> Result<(), PartyError> {
        self.round(RoundMsg::Prepare {
            header: header.clone(),
            round: round.clone(),
        })
        .map(|_| ())
    }

    fn deal(&self, session: &SessionId) -> Result<Vec<(u32, SealedShare)>, PartyError> {
        match self.round(RoundMsg::Deal { session: session.clone() })? {
            RoundReply::Dealt { shares } => Ok(shares.into_iter().map(|s| (s.to, s)).collect()),
            other => Err(PartyError::Rejected(format!("unexpected reply {other:?}"))),
        }
    }

    fn deliver(&self, session: &SessionId, _from: u32, payload: SealedShare) -> Result<(), PartyError> {
        self.round(RoundMsg::Deliver {
            session: session.clone(),
            share: payload,
        })
        .map(|_| ())
    }

    fn commit(&self, session: &SessionId) -> Result<(), PartyError> {
        self.round(RoundMsg::Commit { session: session.clone() }).map(|_| ())
    }

    fn abort(&self, session: &SessionId) {
        let _ = self.round(RoundMsg::Abort { session: session.clone() });
    }
}

/// Generates transport keys and configurations for `n` servers.
pub fn provision<R: rand::RngCore + rand::CryptoRng>(
    n: u32,
    t: u32,
    limiter: LimiterConfig,
    rng: &mut R,
) -> Vec<(KeyserverConfig, TransportKey)> {
    let keys: Vec<TransportKey> = (0..n).map(|_| TransportKey::generate(rng)).collect();
    let peers: BTreeMap<u32, [u8; 32]> = keys.iter().enumerate().map(|(i, k)| (i as u32 + 1, k.public())).collect();
    keys.into_iter()
        .enumerate()
        .map(|(i, k)| {
            (
                KeyserverConfig {
                    index: i as u32 + 1,
                    n,
                    t,
                    limiter,
                    peers: peers.clone(),
                },
                k,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests;
