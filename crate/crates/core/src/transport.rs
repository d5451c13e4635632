//! Request/response contract shared by the HTTP layer and the in-memory
//! network used for simulation.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use ed25519_dalek::VerifyingKey;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::certs::{signature_from_b64, validate_chain, verify, Certificate, ChainError, Signer};
use crate::wire::b64_encode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Get,
    Post,
}

/// Caller identity: a root-first chain plus a signature over the request.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Auth {
    pub chain: Vec<Certificate>,
    pub signature: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Request {
    pub method: Method,
    pub path: String,
    pub auth: Option<Auth>,
    pub body: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Response {
    pub status: u16,
    pub body: Vec<u8>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retry_after_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub server_epoch: Option<u64>,
}

pub fn auth_message(method: Method, path: &str, body: &[u8]) -> Vec<u8> {
    let mut m = Vec::with_capacity(path.len() + body.len() + 8);
    m.extend_from_slice(match method {
        Method::Get => b"GET ",
        Method::Post => b"POST ",
    });
    m.extend_from_slice(path.as_bytes());
    m.push(b'\n');
    m.extend_from_slice(body);
    m
}

#[derive(Clone)]
pub struct Credentials {
    pub chain: Vec<Certificate>,
    pub key: Arc<dyn Signer>,
}

impl std::fmt::Debug for Credentials {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let leaf = self.chain.last().map(|c| c.body.subject.as_str()).unwrap_or("");
        write!(f, "Credentials({leaf})")
    }
}

impl Credentials {
    pub fn fingerprint(&self) -> String {
        self.chain.last().map(|c| c.fingerprint()).unwrap_or_default()
    }
}

impl Request {
    pub fn get(path: &str) -> Self {
        Self {
            method: Method::Get,
            path: path.into(),
            auth: None,
            body: Vec::new(),
        }
    }

    pub fn post(path: &str, body: Vec<u8>) -> Self {
        Self {
            method: Method::Post,
            path: path.into(),
            auth: None,
            body,
        }
    }

    pub fn post_json<T: Serialize>(path: &str, value: &T) -> Self {
        Self::post(path, serde_json::to_vec(value).expect("serializable"))
    }

    pub fn signed(mut self, creds: &Credentials) -> Self {
        let sig = creds.key.sign(&auth_message(self.method, &self.path, &self.body));
        self.auth = Some(Auth {
            chain: creds.chain.clone(),
            signature: b64_encode(&sig.to_bytes()),
        });
        self
    }

    pub fn json<T: DeserializeOwned>(&self) -> Result<T, Response> {
        serde_json::from_slice(&self.body).map_err(|e| Response::error(400, "BadRequest", &e.to_string()))
    }
}

impl Response {
    pub fn json<T: Serialize>(status: u16, value: &T) -> Self {
        Self {
            status,
            body: serde_json::to_vec(value).expect("serializable"),
        }
    }

    pub fn ok<T: Serialize>(value: &T) -> Self {
        Self::json(200, value)
    }

    pub fn error(status: u16, code: &str, message: &str) -> Self {
        Self::with_error(
            status,
            ErrorBody {
                error: code.into(),
                message: message.into(),
                ..Default::default()
            },
        )
    }

    pub fn with_error(status: u16, body: ErrorBody) -> Self {
        Self::json(status, &body)
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }

    pub fn error_body(&self) -> Option<ErrorBody> {
        serde_json::from_slice(&self.body).ok()
    }

    pub fn parse<T: DeserializeOwned>(&self) -> Result<T, String> {
        serde_json::from_slice(&self.body).map_err(|e| format!("bad response body: {e}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AuthError {
    #[error("request is not authenticated")]
    Missing,
    #[error("certificate chain: {0}")]
    Chain(ChainError),
    #[error("request signature does not verify")]
    BadSignature,
}

/// Validates the caller's chain and request signature, returning the leaf.
pub fn authenticate(req: &Request, trust_root: &VerifyingKey, now_secs: u64) -> Result<Certificate, AuthError> {
    let auth = req.auth.as_ref().ok_or(AuthError::Missing)?;
    validate_chain(&auth.chain, trust_root, now_secs).map_err(AuthError::Chain)?;
    let leaf = auth.chain.last().expect("validated chain is nonempty");
    let key = leaf.body.public_key().ok_or(AuthError::BadSignature)?;
    let sig = signature_from_b64(&auth.signature).ok_or(AuthError::BadSignature)?;
    if !verify(&key, &auth_message(req.method, &req.path, &req.body), &sig) {
        return Err(AuthError::BadSignature);
    }
    Ok(leaf.clone())
}

pub trait Service: Send + Sync {
    fn handle(&self, req: &Request) -> Response;
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("{0} unreachable")]
    Unreachable(String),
}

pub trait Transport: Send + Sync {
    fn send(&self, endpoint: &str, req: Request) -> Result<Response, TransportError>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Request,
    Response,
}

/// One recorded message. `payload` is the message body as it would appear
/// on the wire.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub seq: u64,
    pub from: String,
    pub to: String,
    pub direction: Direction,
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<u16>,
    #[serde(with = "crate::wire::b64")]
    pub payload: Vec<u8>,
}

/// Named services reachable by direct calls, with kill/revive, injected
/// failures, and a full message transcript.
#[derive(Default)]
pub struct InMemoryNetwork {
    services: RwLock<BTreeMap<String, Arc<dyn Service>>>,
    down: RwLock<BTreeSet<String>>,
    fail_next: Mutex<BTreeMap<String, usize>>,
    transcript: Mutex<Vec<TranscriptEntry>>,
    seq: AtomicU64,
}

impl InMemoryNetwork {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn register(&self, name: &str, service: Arc<dyn Service>) {
        self.services.write().unwrap().insert(name.into(), service);
    }

    pub fn kill(&self, name: &str) {
        self.down.write().unwrap().insert(name.into());
    }

    pub fn revive(&self, name: &str) {
        self.down.write().unwrap().remove(name);
    }

    pub fn is_up(&self, name: &str) -> bool {
        !self.down.read().unwrap().contains(name)
    }

    /// The next `count` requests to `name` are dropped after delivery, so
    /// the service acts but the caller sees it as unreachable.
    pub fn fail_next(&self, name: &str, count: usize) {
        self.fail_next.lock().unwrap().insert(name.into(), count);
    }

    /// A transport whose messages are attributed to `from`.
    pub fn transport(self: &Arc<Self>, from: &str) -> Arc<dyn Transport> {
        Arc::new(NetTransport {
            net: Arc::clone(self),
            from: from.into(),
        })
    }

    pub fn transcript(&self) -> Vec<TranscriptEntry> {
        self.transcript.lock().unwrap().clone()
    }

    pub fn take_transcript(&self) -> Vec<TranscriptEntry> {
        std::mem::take(&mut *self.transcript.lock().unwrap())
    }

    fn record(&self, from: &str, to: &str, direction: Direction, path: &str, status: Option<u16>, payload: &[u8]) {
        let mut t = self.transcript.lock().unwrap();
        t.push(TranscriptEntry {
            seq: self.seq.fetch_add(1, Ordering::SeqCst),
            from: from.into(),
            to: to.into(),
            direction,
            path: path.into(),
            status,
            payload: payload.to_vec(),
        });
    }

    fn deliver(&self, from: &str, to: &str, req: Request) -> Result<Response, TransportError> {
        if !self.is_up(to) {
            return Err(TransportError::Unreachable(to.into()));
        }
        let service = self
            .services
            .read()
            .unwrap()
            .get(to)
            .cloned()
            .ok_or_else(|| TransportError::Unreachable(to.into()))?;
        self.record(from, to, Direction::Request, &req.path, None, &req.body);
        let resp = service.handle(&req);
        let dropped = {
            let mut f = self.fail_next.lock().unwrap();
            match f.get_mut(to) {
                Some(n) if *n > 0 => {
                    *n -= 1;
                    true
                }
                _ => false,
            }
        };
        if dropped {
            return Err(TransportError::Unreachable(to.into()));
        }
        self.record(to, from, Direction::Response, &req.path, Some(resp.status), &resp.body);
        Ok(resp)
    }
}

struct NetTransport {
    net: Arc<InMemoryNetwork>,
    from: String,
}

impl Transport for NetTransport {
    fn send(&self, endpoint: &str, req: Request) -> Result<Response, TransportError> {
        self.net.deliver(&self.from, endpoint, req)
    }
}
