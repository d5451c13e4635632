//! Client side of the DOPRF: quorum selection, batching, retry.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{blind_element, unblind_combine_batch, DoprfError};
use crate::group::{hash_to_group, Group, Scalar};
use crate::sharing::{KeyId, SharingConfig};

pub const DEFAULT_BATCH_SIZE: usize = 4096;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerStatus {
    pub index: u32,
    pub key_id: KeyId,
    pub epoch: u64,
    #[serde(default)]
    pub update_key_id: Option<KeyId>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalRequest<G> {
    pub key_id: KeyId,
    pub epoch: u64,
    pub set: Vec<u32>,
    pub points: Vec<G>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HandleError {
    #[error("unreachable: {0}")]
    Unreachable(String),
    #[error("rate limited, retry after {retry_after_ms} ms")]
    RateLimited { retry_after_ms: u64 },
    #[error("server is at epoch {server_epoch}")]
    EpochMismatch { server_epoch: u64 },
    #[error("rejected: {0}")]
    Rejected(String),
}

/// One keyserver as seen by a client.
pub trait KeyserverHandle<G: Group>: Send + Sync {
    fn index(&self) -> u32;
    fn status(&self) -> Result<ServerStatus, HandleError>;
    /// Returns one point per request point, in order.
    fn evaluate(&self, req: &EvalRequest<G>) -> Result<Vec<G>, HandleError>;
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "indices", rename_all = "snake_case")]
pub enum SubsetPolicy {
    /// Lowest healthy indices first. Deterministic.
    LowestIndex,
    /// Prefer these indices in this order, then fall back to the rest.
    Fixed(Vec<u32>),
    /// Fastest status responders first, re-probed per evaluation.
    ByLatency,
}

/// Which sharing the servers should evaluate under.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KeyTarget {
    Primary,
    /// The rotation scalar held alongside the primary key.
    Update,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalOutput<G> {
    pub key_id: KeyId,
    pub epoch: u64,
    pub points: Vec<G>,
    /// Evaluation sets used, one per batch.
    pub sets: Vec<Vec<u32>>,
}

pub struct DoprfClient<G: Group> {
    handles: Vec<Arc<dyn KeyserverHandle<G>>>,
    cfg: SharingConfig,
    policy: SubsetPolicy,
    batch_size: usize,
    parallel: bool,
}

struct Quorum {
    key_id: KeyId,
    epoch: u64,
    order: Vec<u32>,
}

impl<G: Group> DoprfClient<G> {
    pub fn new(handles: Vec<Arc<dyn KeyserverHandle<G>>>, cfg: SharingConfig) -> Self {
        Self {
            handles,
            cfg,
            policy: SubsetPolicy::ByLatency,
            batch_size: DEFAULT_BATCH_SIZE,
            parallel: true,
        }
    }

    pub fn with_policy(mut self, policy: SubsetPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_batch_size(mut self, size: usize) -> Self {
        self.batch_size = size.clamp(1, DEFAULT_BATCH_SIZE);
        self
    }

    /// Sequential fan-out gives a fixed message order, which simulated runs
    /// need for reproducible transcripts.
    pub fn sequential(mut self) -> Self {
        self.parallel = false;
        self
    }

    pub fn config(&self) -> &SharingConfig {
        &self.cfg
    }

    fn handle(&self, index: u32) -> &Arc<dyn KeyserverHandle<G>> {
        self.handles
            .iter()
            .find(|h| h.index() == index)
            .expect("index comes from a handle")
    }

    fn probe(&self) -> Vec<(ServerStatus, Duration)> {
        let probe_one = |h: &Arc<dyn KeyserverHandle<G>>| {
            let start = Instant::now();
            h.status().ok().map(|s| (s, start.elapsed()))
        };
        let results: Vec<Option<(ServerStatus, Duration)>> = if self.parallel {
            std::thread::scope(|scope| {
                let joins: Vec<_> = self
                    .handles
                    .iter()
                    .map(|h| scope.spawn(move || probe_one(h)))
                    .collect();
                joins.into_iter().map(|j| j.join().ok().flatten()).collect()
            })
        } else {
            self.handles.iter().map(probe_one).collect()
        };
        results
            .into_iter()
            .zip(&self.handles)
            .filter_map(|(r, h)| r.filter(|(s, _)| s.index == h.index()))
            .collect()
    }

    fn quorum(&self, target: KeyTarget) -> Result<Quorum, DoprfError> {
        let need = self.cfg.t as usize;
        let live = self.probe();
        let eligible: Vec<&(ServerStatus, Duration)> = match target {
            KeyTarget::Primary => live.iter().collect(),
            KeyTarget::Update => live.iter().filter(|(s, _)| s.update_key_id.is_some()).collect(),
        };
        if eligible.len() < need {
            return Err(DoprfError::QuorumUnavailable {
                available: eligible.len(),
                need,
            });
        }
        let epoch = eligible.iter().map(|(s, _)| s.epoch).max().expect("nonempty");
        let key_of = |s: &ServerStatus| match target {
            KeyTarget::Primary => s.key_id.clone(),
            KeyTarget::Update => s.update_key_id.clone().expect("filtered"),
        };
        let newest_key = eligible
            .iter()
            .filter(|(s, _)| s.epoch == epoch)
            .map(|(s, _)| key_of(s))
            .min()
            .expect("nonempty");
        let mut agreeing: Vec<&(ServerStatus, Duration)> = eligible
            .iter()
            .copied()
            .filter(|(s, _)| s.epoch == epoch && key_of(s) == newest_key)
            .collect();
        if agreeing.len() < need {
            return Err(DoprfError::EpochMismatch(
                eligible.iter().map(|(s, _)| (s.index, s.epoch)).collect(),
            ));
        }
        match &self.policy {
            SubsetPolicy::LowestIndex => agreeing.sort_by_key(|(s, _)| s.index),
            SubsetPolicy::ByLatency => agreeing.sort_by_key(|(s, d)| (*d, s.index)),
            SubsetPolicy::Fixed(pref) => agreeing.sort_by_key(|(s, _)| {
                (
                    pref.iter().position(|i| *i == s.index).unwrap_or(usize::MAX),
                    s.index,
                )
            }),
        }
        Ok(Quorum {
            key_id: newest_key,
            epoch,
            order: agreeing.iter().map(|(s, _)| s.index).collect(),
        })
    }

    /// Hashes each input to the group and evaluates the PRF on it.
    pub fn eval_inputs<R: RngCore + ?Sized>(
        &self,
        inputs: &[&[u8]],
        rng: &mut R,
    ) -> Result<EvalOutput<G>, DoprfError> {
        let elements = inputs
            .iter()
            .map(|x| hash_to_group::<G>(x))
            .collect::<Result<Vec<G>, _>>()?;
        self.eval_elements(&elements, KeyTarget::Primary, rng)
    }

    /// Raises each element to the shared key (`k` or `δ`) without revealing
    /// the elements: every one is blinded by a fresh scalar first.
    pub fn eval_elements<R: RngCore + ?Sized>(
        &self,
        elements: &[G],
        target: KeyTarget,
        rng: &mut R,
    ) -> Result<EvalOutput<G>, DoprfError> {
        let quorum = self.quorum(target)?;
        let mut points = Vec::with_capacity(elements.len());
        let mut sets = Vec::new();
        for chunk in elements.chunks(self.batch_size) {
            let betas: Vec<G::Scalar> = chunk.iter().map(|_| G::Scalar::random_nonzero(rng)).collect();
            let blinded = chunk
                .iter()
                .zip(&betas)
                .map(|(m, b)| blind_element(m, b))
                .collect::<Result<Vec<G>, _>>()?;
            let (set, responses) = self.eval_blinded(&quorum, blinded)?;
            points.extend(unblind_combine_batch(&responses, &betas)?);
            sets.push(set);
        }
        Ok(EvalOutput {
            key_id: quorum.key_id,
            epoch: quorum.epoch,
            points,
            sets,
        })
    }

    fn eval_blinded(
        &self,
        quorum: &Quorum,
        blinded: Vec<G>,
    ) -> Result<(Vec<u32>, Vec<Vec<G>>), DoprfError> {
        let t = self.cfg.t as usize;
        let max_attempts = (self.cfg.n - self.cfg.t + 1) as usize;
        let mut excluded: Vec<u32> = Vec::new();
        let mut retry_after_ms: Option<u64> = None;
        let mut request = EvalRequest {
            key_id: quorum.key_id.clone(),
            epoch: quorum.epoch,
            set: Vec::new(),
            points: blinded,
        };
        for _ in 0..max_attempts {
            let mut set: Vec<u32> = quorum
                .order
                .iter()
                .copied()
                .filter(|i| !excluded.contains(i))
                .take(t)
                .collect();
            if set.len() < t {
                break;
            }
            set.sort_unstable();
            request.set = set.clone();
            let results = self.fan_out(&request);
            let mut failed = Vec::new();
            let mut responses = Vec::with_capacity(t);
            for (index, result) in set.iter().zip(results) {
                match result {
                    Ok(r) if r.len() == request.points.len() => responses.push(r),
                    Err(HandleError::RateLimited { retry_after_ms: ms }) => {
                        retry_after_ms = Some(retry_after_ms.map_or(ms, |m: u64| m.max(ms)));
                        failed.push(*index);
                    }
                    _ => failed.push(*index),
                }
            }
            if failed.is_empty() {
                return Ok((set, responses));
            }
            excluded.extend(failed);
        }
        if let Some(retry_after_ms) = retry_after_ms {
            return Err(DoprfError::RateLimited { retry_after_ms });
        }
        Err(DoprfError::QuorumUnavailable {
            available: quorum.order.len().saturating_sub(excluded.len()),
            need: t,
        })
    }

    fn fan_out(&self, req: &EvalRequest<G>) -> Vec<Result<Vec<G>, HandleError>> {
        if self.parallel && req.set.len() > 1 {
            std::thread::scope(|scope| {
                let joins: Vec<_> = req
                    .set
                    .iter()
                    .map(|i| {
                        let h = self.handle(*i);
                        scope.spawn(move || h.evaluate(req))
                    })
                    .collect();
                joins
                    .into_iter()
                    .map(|j| {
                        j.join()
                            .unwrap_or_else(|_| Err(HandleError::Unreachable("worker panicked".into())))
                    })
                    .collect()
            })
        } else {
            req.set.iter().map(|i| self.handle(*i).evaluate(req)).collect()
        }
    }
}
