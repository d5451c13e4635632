//! Round-structured multi-party protocols over Shamir shares.
//!
//! Every protocol here has the same shape: a set of dealers each Shamir-share
//! one value among all `n` indices, every recipient sums the sub-shares it
//! received, and the sum replaces (or supplements) its key share.
//!
//! * keygen: each dealer shares a fresh random contribution; the implied key
//!   is the sum of contributions and never exists anywhere.
//! * reshare: holder `i ∈ L` shares `λ_i^{L,0}·k_i`; the sum is a fresh
//!   degree-`(t−1)` sharing of the same key at the next epoch.
//! * product: participant `i ∈ P` (`|P| ≥ 2t−1`) shares `λ_i^{P,0}·a_i·b_i`,
//!   reducing the degree-`2(t−1)` product sharing back to degree `t−1`.
//!
//! [`ShareHolder`] is the per-party state machine; [`Party`] abstracts over
//! where it runs, and the `run_*` drivers coordinate rounds across parties.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::{lagrange_coefficients, share_values, KeyId, KeyShare, SharingConfig, SharingError};
use crate::group::Scalar;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionId(pub String);

impl SessionId {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Which share a keygen round installs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShareSlot {
    /// The evaluation key `k`.
    Primary,
    /// The rotation scalar `δ`, held alongside `k` until the product round.
    Update,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DealRound {
    Keygen { key_id: KeyId, slot: ShareSlot },
    Reshare { key_id: KeyId, holders: Vec<u32> },
    Product { participants: Vec<u32>, new_key_id: KeyId },
}

impl DealRound {
    pub fn dealers(&self, cfg: &SharingConfig) -> Vec<u32> {
        match self {
            DealRound::Keygen { .. } => cfg.indices().collect(),
            DealRound::Reshare { holders, .. } => holders.clone(),
            DealRound::Product { participants, .. } => participants.clone(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DealRound::Keygen { .. } => "keygen",
            DealRound::Reshare { .. } => "reshare",
            DealRound::Product { .. } => "product",
        }
    }
}

/// Parameters shared by every message of one protocol instance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundHeader {
    pub session: SessionId,
    pub n: u32,
    pub t: u32,
    /// Keygen(primary): the epoch the new key starts at. Otherwise the epoch
    /// of the shares being dealt from.
    pub epoch: u64,
}

impl RoundHeader {
    pub fn config(&self) -> Result<SharingConfig, SharingError> {
        SharingConfig::new(self.n, self.t)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RoundError {
    #[error("unknown round: {0}")]
    UnknownRound(String),
    #[error("epoch mismatch: holder at {held}, round at {round}")]
    EpochMismatch { held: u64, round: u64 },
    #[error("party {0} is not a dealer in this round")]
    NotDealer(u32),
    #[error("missing share required by the round: {0}")]
    MissingShare(&'static str),
    #[error("missing sub-shares from {0:?}")]
    MissingSubshares(Vec<u32>),
    #[error("duplicate sub-share from {0}")]
    DuplicateSubshare(u32),
    #[error("need at least {need} participants for degree reduction, have {have}")]
    DegreeReductionImpossible { have: usize, need: usize },
    #[error(transparent)]
    Sharing(#[from] SharingError),
}

/// What a commit installed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Committed {
    pub key_id: KeyId,
    pub epoch: u64,
    pub slot: ShareSlot,
}

/// Output of one dealing: the value the dealer shared and the sub-shares for
/// every other index. The dealer's own sub-share is retained internally.
pub struct Dealt<S> {
    pub dealt_value: S,
    pub subshares: Vec<(u32, S)>,
}

#[derive(Clone, Debug)]
struct Pending<S> {
    header: RoundHeader,
    round: DealRound,
    dealers: BTreeSet<u32>,
    received: BTreeMap<u32, S>,
}

/// One party's share state and in-flight rounds.
#[derive(Clone, Debug)]
pub struct ShareHolder<S> {
    index: u32,
    epoch: u64,
    primary: Option<KeyShare<S>>,
    update: Option<KeyShare<S>>,
    sessions: BTreeMap<SessionId, Pending<S>>,
}

impl<S: Scalar> ShareHolder<S> {
    pub fn new(index: u32) -> Self {
        Self {
            index,
            epoch: 0,
            primary: None,
            update: None,
            sessions: BTreeMap::new(),
        }
    }

    pub fn with_primary(share: KeyShare<S>) -> Self {
        let mut h = Self::new(share.server_index);
        h.epoch = share.epoch;
        h.primary = Some(share);
        h
    }

    pub fn index(&self) -> u32 {
        self.index
    }

    /// Advertised epoch; never decreases.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn primary(&self) -> Option<&KeyShare<S>> {
        self.primary.as_ref()
    }

    pub fn update(&self) -> Option<&KeyShare<S>> {
        self.update.as_ref()
    }

    pub fn status(&self) -> PartyStatus {
        PartyStatus {
            index: self.index,
            epoch: self.epoch,
            primary: self.primary.as_ref().map(|s| (s.key_id.clone(), s.epoch)),
            update: self.update.as_ref().map(|s| s.key_id.clone()),
        }
    }

    fn require_primary_at(&self, epoch: u64) -> Result<&KeyShare<S>, RoundError> {
        let p = self.primary.as_ref().ok_or(RoundError::MissingShare("primary"))?;
        if p.epoch != epoch {
            return Err(RoundError::EpochMismatch {
                held: p.epoch,
                round: epoch,
            });
        }
        Ok(p)
    }

    fn require_not_ahead(&self, epoch: u64) -> Result<(), RoundError> {
        if self.epoch > epoch {
            return Err(RoundError::EpochMismatch {
                held: self.epoch,
                round: epoch,
            });
        }
        Ok(())
    }

    pub fn prepare(&mut self, header: &RoundHeader, round: &DealRound) -> Result<(), RoundError> {
        let cfg = header.config()?;
        if self.index == 0 || self.index > cfg.n {
            return Err(RoundError::UnknownRound(format!(
                "index {} outside 1..={}",
                self.index, cfg.n
            )));
        }
        if self.sessions.contains_key(&header.session) {
            return Err(RoundError::UnknownRound(format!(
                "session {} already open",
                header.session
            )));
        }
        let dealers = round.dealers(&cfg);
        let is_dealer = dealers.contains(&self.index);
        match round {
            DealRound::Keygen { slot: ShareSlot::Primary, .. } => {
                if self.primary.is_some() && header.epoch <= self.epoch {
                    return Err(RoundError::EpochMismatch {
                        held: self.epoch,
                        round: header.epoch,
                    });
                }
                self.require_not_ahead(header.epoch)?;
            }
            DealRound::Keygen { slot: ShareSlot::Update, .. } => {
                self.require_primary_at(header.epoch)?;
            }
            DealRound::Reshare { holders, .. } => {
                if holders.len() != cfg.t as usize {
                    return Err(RoundError::Sharing(SharingError::BadConfig(format!(
                        "reshare needs exactly t={} holders, got {}",
                        cfg.t,
                        holders.len()
                    ))));
                }
                if is_dealer {
                    self.require_primary_at(header.epoch)?;
                } else {
                    self.require_not_ahead(header.epoch)?;
                }
            }
            DealRound::Product { participants, .. } => {
                let need = 2 * cfg.t as usize - 1;
                if participants.len() < need {
                    return Err(RoundError::DegreeReductionImpossible {
                        have: participants.len(),
                        need,
                    });
                }
                if is_dealer {
                    self.require_primary_at(header.epoch)?;
                    if self.update.is_none() {
                        return Err(RoundError::MissingShare("update"));
                    }
                } else {
                    self.require_not_ahead(header.epoch)?;
                }
            }
        }
        // validates the dealer set (distinct, nonzero)
        lagrange_coefficients::<S>(&dealers, 0)?;
        self.sessions.insert(
            header.session.clone(),
            Pending {
                header: header.clone(),
                round: round.clone(),
                dealers: dealers.into_iter().collect(),
                received: BTreeMap::new(),
            },
        );
        Ok(())
    }

    pub fn deal<R: RngCore + ?Sized>(
        &mut self,
        session: &SessionId,
        rng: &mut R,
    ) -> Result<Dealt<S>, RoundError> {
        let pending = self
            .sessions
            .get(session)
            .ok_or_else(|| RoundError::UnknownRound(session.to_string()))?;
        if !pending.dealers.contains(&self.index) {
            return Err(RoundError::NotDealer(self.index));
        }
        if pending.received.contains_key(&self.index) {
            return Err(RoundError::DuplicateSubshare(self.index));
        }
        let cfg = pending.header.config()?;
        let dealers: Vec<u32> = pending.dealers.iter().copied().collect();
        let own_lambda = |dealers: &[u32]| -> Result<S, RoundError> {
            let lambdas = lagrange_coefficients::<S>(dealers, 0)?;
            let pos = dealers.iter().position(|d| *d == self.index).expect("dealer");
            Ok(lambdas[pos])
        };
        let value = match &pending.round {
            DealRound::Keygen { .. } => S::random(rng),
            DealRound::Reshare { .. } => {
                let share = self.require_primary_at(pending.header.epoch)?;
                own_lambda(&dealers)? * share.value
            }
            DealRound::Product { .. } => {
                let a = self.require_primary_at(pending.header.epoch)?;
                let b = self.update.as_ref().ok_or(RoundError::MissingShare("update"))?;
                own_lambda(&dealers)? * a.value * b.value
            }
        };
        let values = share_values(value, &cfg, rng)?;
        let mut subshares = Vec::with_capacity(values.len());
        let mut own = None;
        for (j, v) in values {
            if j == self.index {
                own = Some(v);
            } else {
                subshares.push((j, v));
            }
        }
        let pending = self.sessions.get_mut(session).expect("checked above");
        pending.received.insert(self.index, own.expect("own index in 1..=n"));
        Ok(Dealt {
            dealt_value: value,
            subshares,
        })
    }

    pub fn receive(&mut self, session: &SessionId, from: u32, value: S) -> Result<(), RoundError> {
        let pending = self
            .sessions
            .get_mut(session)
            .ok_or_else(|| RoundError::UnknownRound(session.to_string()))?;
        if !pending.dealers.contains(&from) {
            return Err(RoundError::NotDealer(from));
        }
        if pending.received.insert(from, value).is_some() {
            return Err(RoundError::DuplicateSubshare(from));
        }
        Ok(())
    }

    /// Sums the sub-shares and installs the result. The share it replaces is
    /// dropped in the same step.
    pub fn commit(&mut self, session: &SessionId) -> Result<Committed, RoundError> {
        let pending = self
            .sessions
            .get(session)
            .ok_or_else(|| RoundError::UnknownRound(session.to_string()))?;
        let missing: Vec<u32> = pending
            .dealers
            .iter()
            .filter(|d| !pending.received.contains_key(d))
            .copied()
            .collect();
        if !missing.is_empty() {
            return Err(RoundError::MissingSubshares(missing));
        }
        let pending = self.sessions.remove(session).expect("checked above");
        let sum = pending.received.values().fold(S::zero(), |acc, v| acc + *v);
        let epoch = pending.header.epoch;
        let committed = match pending.round {
            DealRound::Keygen { key_id, slot: ShareSlot::Primary } => {
                self.primary = Some(KeyShare {
                    server_index: self.index,
                    value: sum,
                    epoch,
                    key_id: key_id.clone(),
                });
                self.update = None;
                self.epoch = epoch;
                Committed { key_id, epoch, slot: ShareSlot::Primary }
            }
            DealRound::Keygen { key_id, slot: ShareSlot::Update } => {
                self.update = Some(KeyShare {
                    server_index: self.index,
                    value: sum,
                    epoch,
                    key_id: key_id.clone(),
                });
                Committed { key_id, epoch, slot: ShareSlot::Update }
            }
            DealRound::Reshare { key_id, .. } => {
                let epoch = epoch + 1;
                self.primary = Some(KeyShare {
                    server_index: self.index,
                    value: sum,
                    epoch,
                    key_id: key_id.clone(),
                });
                self.epoch = self.epoch.max(epoch);
                Committed { key_id, epoch, slot: ShareSlot::Primary }
            }
            DealRound::Product { new_key_id, .. } => {
                let epoch = epoch + 1;
                self.primary = Some(KeyShare {
                    server_index: self.index,
                    value: sum,
                    epoch,
                    key_id: new_key_id.clone(),
                });
                self.update = None;
                self.epoch = self.epoch.max(epoch);
                Committed {
                    key_id: new_key_id,
                    epoch,
                    slot: ShareSlot::Primary,
                }
            }
        };
        Ok(committed)
    }

    pub fn abort(&mut self, session: &SessionId) {
        self.sessions.remove(session);
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartyStatus {
    pub index: u32,
    pub epoch: u64,
    pub primary: Option<(KeyId, u64)>,
    pub update: Option<KeyId>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PartyError {
    #[error("party unreachable: {0}")]
    Unreachable(String),
    #[error("party rejected the message: {0}")]
    Rejected(String),
}

/// A protocol participant as seen by the coordinator.
pub trait Party {
    /// What travels from a dealer to a recipient. Remote parties seal
    /// sub-shares to the recipient; in-process parties pass scalars.
    type Payload;

    fn index(&self) -> u32;
    fn status(&self) -> Result<PartyStatus, PartyError>;
    fn prepare(&self, header: &RoundHeader, round: &DealRound) -> Result<(), PartyError>;
    fn deal(&self, session: &SessionId) -> Result<Vec<(u32, Self::Payload)>, PartyError>;
    fn deliver(&self, session: &SessionId, from: u32, payload: Self::Payload) -> Result<(), PartyError>;
    fn commit(&self, session: &SessionId) -> Result<(), PartyError>;
    fn abort(&self, session: &SessionId);
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProtocolError {
    #[error("key generation aborted: party {party}: {reason}")]
    DkgAborted { party: u32, reason: String },
    #[error("resharing needs {need} live holders, found {live}")]
    ReshareImpossible { live: usize, need: usize },
    #[error("degree reduction needs n >= 2t-1 live participants (n={n}, t={t}, live={live})")]
    DegreeReductionImpossible { n: u32, t: u32, live: usize },
    #[error("{round} round aborted: party {party}: {reason}")]
    RoundAborted {
        round: &'static str,
        party: u32,
        reason: String,
    },
    #[error(transparent)]
    Sharing(#[from] SharingError),
}

/// Per-round result reported by the drivers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoundOutcome {
    pub dealers: Vec<u32>,
    pub committed: Vec<u32>,
    pub unreachable: Vec<u32>,
    pub epoch: u64,
}

fn find<P: Party>(parties: &[P], index: u32) -> Option<&P> {
    parties.iter().find(|p| p.index() == index)
}

/// Runs one dealing round. With `require_all`, any unreachable party aborts
/// the round; otherwise only dealer failures do, and unreachable recipients
/// are left at their old state.
fn run_round<P: Party>(
    parties: &[P],
    header: &RoundHeader,
    round: &DealRound,
    require_all: bool,
) -> Result<RoundOutcome, ProtocolError> {
    let cfg = header.config()?;
    let dealers = round.dealers(&cfg);
    let abort_err = |party: u32, reason: String| match round {
        DealRound::Keygen { .. } => ProtocolError::DkgAborted { party, reason },
        _ => ProtocolError::RoundAborted {
            round: round.name(),
            party,
            reason,
        },
    };

    let mut prepared: Vec<u32> = Vec::new();
    let mut unreachable: Vec<u32> = Vec::new();
    let abort_all = |prepared: &[u32]| {
        for i in prepared {
            if let Some(p) = find(parties, *i) {
                p.abort(&header.session);
            }
        }
    };

    for index in cfg.indices() {
        let result = match find(parties, index) {
            Some(p) => p.prepare(header, round),
            None => Err(PartyError::Unreachable("not in roster".into())),
        };
        match result {
            Ok(()) => prepared.push(index),
            Err(e) => {
                if require_all || dealers.contains(&index) {
                    abort_all(&prepared);
                    return Err(abort_err(index, e.to_string()));
                }
                unreachable.push(index);
            }
        }
    }

    let mut dealt = Vec::new();
    for &d in &dealers {
        let party = find(parties, d).expect("prepared dealer");
        match party.deal(&header.session) {
            Ok(out) => dealt.push((d, out)),
            Err(e) => {
                abort_all(&prepared);
                return Err(abort_err(d, e.to_string()));
            }
        }
    }

    for (from, outputs) in dealt {
        for (to, payload) in outputs {
            if !prepared.contains(&to) {
                continue;
            }
            let party = find(parties, to).expect("prepared recipient");
            if let Err(e) = party.deliver(&header.session, from, payload) {
                if require_all || dealers.contains(&to) {
                    abort_all(&prepared);
                    return Err(abort_err(to, e.to_string()));
                }
                party.abort(&header.session);
                prepared.retain(|i| *i != to);
                unreachable.push(to);
            }
        }
    }

    let mut committed = Vec::new();
    for &i in &prepared {
        let party = find(parties, i).expect("prepared");
        match party.commit(&header.session) {
            Ok(()) => committed.push(i),
            Err(_) => unreachable.push(i),
        }
    }
    unreachable.sort_unstable();
    Ok(RoundOutcome {
        dealers,
        committed,
        unreachable,
        epoch: header.epoch,
    })
}

/// Joint generation of a fresh key (or update key): every one of the `n`
/// parties must take part.
pub fn run_keygen<P: Party>(
    parties: &[P],
    cfg: &SharingConfig,
    session: SessionId,
    key_id: KeyId,
    slot: ShareSlot,
    epoch: u64,
) -> Result<RoundOutcome, ProtocolError> {
    let header = RoundHeader {
        session,
        n: cfg.n,
        t: cfg.t,
        epoch,
    };
    run_round(parties, &header, &DealRound::Keygen { key_id, slot }, true)
}

/// Generates the evaluation key at epoch 0 without it ever existing in one place.
pub fn distributed_keygen<P: Party>(
    parties: &[P],
    cfg: &SharingConfig,
    session: SessionId,
    key_id: KeyId,
) -> Result<RoundOutcome, ProtocolError> {
    run_keygen(parties, cfg, session, key_id, ShareSlot::Primary, 0)
}

fn live_statuses<P: Party>(parties: &[P]) -> Vec<PartyStatus> {
    parties.iter().filter_map(|p| p.status().ok()).collect()
}

/// Current key and epoch among reachable parties, taking the newest epoch.
fn current_key(statuses: &[PartyStatus]) -> Option<(KeyId, u64)> {
    statuses
        .iter()
        .filter_map(|s| s.primary.clone())
        .max_by_key(|(_, e)| *e)
}

/// Re-randomizes the sharing of the current key. The `t` lowest-indexed live
/// holders deal; every reachable party, including ones that missed earlier
/// epochs, receives a share for the next epoch.
pub fn proactive_reshare<P: Party>(
    parties: &[P],
    cfg: &SharingConfig,
    session: SessionId,
) -> Result<RoundOutcome, ProtocolError> {
    let statuses = live_statuses(parties);
    let (key_id, epoch) = current_key(&statuses).ok_or(ProtocolError::ReshareImpossible {
        live: 0,
        need: cfg.t as usize,
    })?;
    let mut holders: Vec<u32> = statuses
        .iter()
        .filter(|s| s.primary.as_ref() == Some(&(key_id.clone(), epoch)))
        .map(|s| s.index)
        .collect();
    holders.sort_unstable();
    if holders.len() < cfg.t as usize {
        return Err(ProtocolError::ReshareImpossible {
            live: holders.len(),
            need: cfg.t as usize,
        });
    }
    holders.truncate(cfg.t as usize);
    let header = RoundHeader {
        session,
        n: cfg.n,
        t: cfg.t,
        epoch,
    };
    let mut out = run_round(parties, &header, &DealRound::Reshare { key_id, holders }, false)?;
    out.epoch = epoch + 1;
    Ok(out)
}

/// Replaces the key `k` with `k·δ` using the update-key shares every live
/// participant holds.
pub fn run_product<P: Party>(
    parties: &[P],
    cfg: &SharingConfig,
    session: SessionId,
    new_key_id: KeyId,
) -> Result<RoundOutcome, ProtocolError> {
    let need = 2 * cfg.t as usize - 1;
    if (cfg.n as usize) < need {
        return Err(ProtocolError::DegreeReductionImpossible {
            n: cfg.n,
            t: cfg.t,
            live: 0,
        });
    }
    let statuses = live_statuses(parties);
    let (key_id, epoch) = current_key(&statuses).ok_or(ProtocolError::DegreeReductionImpossible {
        n: cfg.n,
        t: cfg.t,
        live: 0,
    })?;
    let mut participants: Vec<u32> = statuses
        .iter()
        .filter(|s| s.primary.as_ref() == Some(&(key_id.clone(), epoch)) && s.update.is_some())
        .map(|s| s.index)
        .collect();
    participants.sort_unstable();
    if participants.len() < need {
        return Err(ProtocolError::DegreeReductionImpossible {
            n: cfg.n,
            t: cfg.t,
            live: participants.len(),
        });
    }
    participants.truncate(need);
    let header = RoundHeader {
        session,
        n: cfg.n,
        t: cfg.t,
        epoch,
    };
    let mut out = run_round(
        parties,
        &header,
        &DealRound::Product {
            participants,
            new_key_id,
        },
        false,
    )?;
    out.epoch = epoch + 1;
    Ok(out)
}

/// Shares of `a·b` from shares of `a` and `b`, computed in one process.
/// Each party multiplies its two shares locally (a degree-`2(t−1)` sharing)
/// and the first `2t−1` of them reshare down to degree `t−1`.
pub fn share_mul_reduce<S: Scalar, R: RngCore + ?Sized>(
    shares_a: &[KeyShare<S>],
    shares_b: &[KeyShare<S>],
    cfg: &SharingConfig,
    new_key_id: &KeyId,
    rng: &mut R,
) -> Result<Vec<KeyShare<S>>, ProtocolError> {
    cfg.validate_for::<S>()?;
    let need = 2 * cfg.t as usize - 1;
    if (cfg.n as usize) < need {
        return Err(ProtocolError::DegreeReductionImpossible {
            n: cfg.n,
            t: cfg.t,
            live: shares_a.len().min(shares_b.len()),
        });
    }
    let mut products: Vec<(u32, S)> = Vec::new();
    for a in shares_a {
        if let Some(b) = shares_b.iter().find(|b| b.server_index == a.server_index) {
            products.push((a.server_index, a.value * b.value));
        }
    }
    products.sort_by_key(|(i, _)| *i);
    if products.len() < need {
        return Err(ProtocolError::DegreeReductionImpossible {
            n: cfg.n,
            t: cfg.t,
            live: products.len(),
        });
    }
    products.truncate(need);
    let indices: Vec<u32> = products.iter().map(|(i, _)| *i).collect();
    let lambdas = lagrange_coefficients::<S>(&indices, 0)?;
    let mut sums = vec![S::zero(); cfg.n as usize];
    for ((_, d), l) in products.iter().zip(lambdas) {
        for (j, v) in share_values(l * *d, cfg, rng)? {
            sums[j as usize - 1] = sums[j as usize - 1] + v;
        }
    }
    let epoch = shares_a.iter().map(|s| s.epoch).max().unwrap_or(0) + 1;
    Ok(sums
        .into_iter()
        .enumerate()
        .map(|(i, value)| KeyShare {
            server_index: i as u32 + 1,
            value,
            epoch,
            key_id: new_key_id.clone(),
        })
        .collect())
}

/// In-process party with its own seeded randomness and an on/off switch for
/// fault injection. Records every value it dealt so tests can check keygen
/// output against the sum of contributions.
pub struct LocalParty<S> {
    holder: Mutex<ShareHolder<S>>,
    rng: Mutex<ChaCha20Rng>,
    online: AtomicBool,
    dealt: Mutex<Vec<(SessionId, S)>>,
}

impl<S: Scalar> LocalParty<S> {
    pub fn new(index: u32, seed: u64) -> Self {
        Self::from_holder(ShareHolder::new(index), seed)
    }

    pub fn from_holder(holder: ShareHolder<S>, seed: u64) -> Self {
        let index = holder.index();
        Self {
            holder: Mutex::new(holder),
            rng: Mutex::new(ChaCha20Rng::seed_from_u64(seed ^ (u64::from(index) << 32))),
            online: AtomicBool::new(true),
            dealt: Mutex::new(Vec::new()),
        }
    }

    pub fn set_online(&self, online: bool) {
        self.online.store(online, Ordering::SeqCst);
    }

    pub fn primary(&self) -> Option<KeyShare<S>> {
        self.holder.lock().expect("holder lock").primary().cloned()
    }

    pub fn update_share(&self) -> Option<KeyShare<S>> {
        self.holder.lock().expect("holder lock").update().cloned()
    }

    pub fn dealt_values(&self, session: &SessionId) -> Vec<S> {
        self.dealt
            .lock()
            .expect("dealt lock")
            .iter()
            .filter(|(s, _)| s == session)
            .map(|(_, v)| *v)
            .collect()
    }

    fn check_online(&self) -> Result<(), PartyError> {
        if self.online.load(Ordering::SeqCst) {
            Ok(())
        } else {
            Err(PartyError::Unreachable(format!("party {} offline", self.index())))
        }
    }
}

impl<P: Party + ?Sized> Party for std::sync::Arc<P> {
    type Payload = P::Payload;

    fn index(&self) -> u32 {
        (**self).index()
    }
    fn status(&self) -> Result<PartyStatus, PartyError> {
        (**self).status()
    }
    fn prepare(&self, header: &RoundHeader, round: &DealRound) -> Result<(), PartyError> {
        (**self).prepare(header, round)
    }
    fn deal(&self, session: &SessionId) -> Result<Vec<(u32, Self::Payload)>, PartyError> {
        (**self).deal(session)
    }
    fn deliver(&self, session: &SessionId, from: u32, payload: Self::Payload) -> Result<(), PartyError> {
        (**self).deliver(session, from, payload)
    }
    fn commit(&self, session: &SessionId) -> Result<(), PartyError> {
        (**self).commit(session)
    }
    fn abort(&self, session: &SessionId) {
        (**self).abort(session)
    }
}

impl<S: Scalar> Party for LocalParty<S> {
    type Payload = S;

    fn index(&self) -> u32 {
        self.holder.lock().expect("holder lock").index()
    }

    fn status(&self) -> Result<PartyStatus, PartyError> {
        self.check_online()?;
        Ok(self.holder.lock().expect("holder lock").status())
    }

    fn prepare(&self, header: &RoundHeader, round: &DealRound) -> Result<(), PartyError> {
        self.check_online()?;
        self.holder
            .lock()
            .expect("holder lock")
            .prepare(header, round)
            .map_err(|e| PartyError::Rejected(e.to_string()))
    }

    fn deal(&self, session: &SessionId) -> Result<Vec<(u32, S)>, PartyError> {
        self.check_online()?;
        let mut rng = self.rng.lock().expect("rng lock");
        let dealt = self
            .holder
            .lock()
            .expect("holder lock")
            .deal(session, &mut *rng)
            .map_err(|e| PartyError::Rejected(e.to_string()))?;
        self.dealt
            .lock()
            .expect("dealt lock")
            .push((session.clone(), dealt.dealt_value));
        Ok(dealt.subshares)
    }

    fn deliver(&self, session: &SessionId, from: u32, payload: S) -> Result<(), PartyError> {
        self.check_online()?;
        self.holder
            .lock()
            .expect("holder lock")
            .receive(session, from, payload)
            .map_err(|e| PartyError::Rejected(e.to_string()))
    }

    fn commit(&self, session: &SessionId) -> Result<(), PartyError> {
        self.check_online()?;
        self.holder
            .lock()
            .expect("holder lock")
            .commit(session)
            .map(|_| ())
            .map_err(|e| PartyError::Rejected(e.to_string()))
    }

    fn abort(&self, session: &SessionId) {
        self.holder.lock().expect("holder lock").abort(session);
    }
}
