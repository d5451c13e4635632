use std::marker::PhantomData;
use std::sync::Arc;

use super::{EvalReplyWire, EvalWire, Keyserver, RoundEnvelope, RoundMsg, RoundReply, SealedShare, StatusWire};
use crate::doprf::{EvalRequest, HandleError, KeyserverHandle, ServerStatus};
use crate::group::Group;
use crate::sharing::{DealRound, Party, PartyError, PartyStatus, RoundHeader, SessionId};
use crate::transport::{Credentials, Request, Response, Transport};
use crate::wire::{decode_point, encode_point};

/// A keyserver reached over a [`Transport`], usable both as a DOPRF
/// evaluation handle and as a lifecycle-round party.
pub struct RemoteKeyserver<G> {
    index: u32,
    endpoint: String,
    transport: Arc<dyn Transport>,
    creds: Credentials,
    _group: PhantomData<fn() -> G>,
}

impl<G: Group> RemoteKeyserver<G> {
    pub fn new(index: u32, endpoint: &str, transport: Arc<dyn Transport>, creds: Credentials) -> Self {
        Self {
            index,
            endpoint: endpoint.into(),
            transport,
            creds,
            _group: PhantomData,
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn send(&self, req: Request) -> Result<Response, HandleError> {
        self.transport
            .send(&self.endpoint, req.signed(&self.creds))
            .map_err(|e| HandleError::Unreachable(e.to_string()))
    }

    pub fn status_wire(&self) -> Result<StatusWire, HandleError> {
        let resp = self.send(Request::get("/status"))?;
        if !resp.is_success() {
            return Err(map_error(&resp));
        }
        resp.parse().map_err(HandleError::Rejected)
    }

    fn round(&self, msg: RoundMsg) -> Result<RoundReply, PartyError> {
        let env = RoundEnvelope { to: self.index, msg };
        let resp = self
            .send(Request::post_json("/admin/round", &env))
            .map_err(|e| PartyError::Unreachable(e.to_string()))?;
        if !resp.is_success() {
            return Err(PartyError::Rejected(
                resp.error_body().map(|b| b.message).unwrap_or_else(|| format!("status {}", resp.status)),
            ));
        }
        resp.parse().map_err(PartyError::Rejected)
    }
}

fn map_error(resp: &Response) -> HandleError {
    let body = resp.error_body().unwrap_or_default();
    match resp.status {
        429 => HandleError::RateLimited {
            retry_after_ms: body.retry_after_ms.unwrap_or(1000),
        },
        409 => HandleError::EpochMismatch {
            server_epoch: body.server_epoch.unwrap_or(0),
        },
        s => HandleError::Rejected(format!("{s} {}: {}", body.error, body.message)),
    }
}

impl<G: Group> KeyserverHandle<G> for RemoteKeyserver<G> {
    fn index(&self) -> u32 {
        self.index
    }

    fn status(&self) -> Result<ServerStatus, HandleError> {
        let wire = self.status_wire()?;
        if wire.group != G::NAME {
            return Err(HandleError::Rejected(format!("server uses group {}", wire.group)));
        }
        wire.server_status().ok_or_else(|| HandleError::Rejected("no key installed".into()))
    }

    fn evaluate(&self, req: &EvalRequest<G>) -> Result<Vec<G>, HandleError> {
        let wire = EvalWire {
            key_id: req.key_id.clone(),
            epoch: req.epoch,
            set: req.set.clone(),
            points: req.points.iter().map(encode_point).collect(),
        };
        let resp = self.send(Request::post_json("/eval", &wire))?;
        if !resp.is_success() {
            return Err(map_error(&resp));
        }
        let reply: EvalReplyWire = resp.parse().map_err(HandleError::Rejected)?;
        if reply.server_index != self.index {
            return Err(HandleError::Rejected(format!("reply from server {}", reply.server_index)));
        }
        reply
            .points
            .iter()
            .map(|p| decode_point::<G>(p))
            .collect::<Result<Vec<G>, _>>()
            .map_err(|e| HandleError::Rejected(e.to_string()))
    }
}

impl<G: Group> Party for RemoteKeyserver<G> {
    type Payload = SealedShare;

    fn index(&self) -> u32 {
        self.index
    }

    fn status(&self) -> Result<PartyStatus, PartyError> {
        match self.round(RoundMsg::Status)? {
            RoundReply::Status { status } if status.index == self.index => Ok(status),
            other => Err(PartyError::Rejected(format!("unexpected reply {other:?}"))),
        }
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

/// Evaluation handle on an in-process keyserver, billed to `client`.
pub struct LocalKeyserverHandle<G: Group> {
    pub server: Arc<Keyserver<G>>,
    pub client: String,
    pub infrastructure: bool,
}

impl<G: Group> KeyserverHandle<G> for LocalKeyserverHandle<G> {
    fn index(&self) -> u32 {
        self.server.index()
    }

    fn status(&self) -> Result<ServerStatus, HandleError> {
        self.server
            .status_wire()
            .server_status()
            .ok_or_else(|| HandleError::Rejected("no key installed".into()))
    }

    fn evaluate(&self, req: &EvalRequest<G>) -> Result<Vec<G>, HandleError> {
        self.server
            .handle_eval(req, &self.client, self.infrastructure)
            .map_err(|e| map_error(&e.to_response()))
    }
}
