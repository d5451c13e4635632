//! Serving a [`Service`] over HTTP, and a blocking HTTP [`Transport`].

use std::io::Read;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{HeaderMap, HeaderValue, Method as HttpMethod, StatusCode, Uri};
use axum::response::IntoResponse;
use axum::Router;
use dnascreen_core::transport::{Auth, Method, Request, Response, Service, Transport, TransportError};
use dnascreen_core::wire::{b64_decode, b64_encode};
use tokio::sync::oneshot;

pub const CHAIN_HEADER: &str = "x-dnascreen-chain";
pub const SIGNATURE_HEADER: &str = "x-dnascreen-signature";

/// Request bodies up to this size are accepted (table uploads are large).
pub const MAX_BODY: usize = 1 << 30;

fn decode_auth(headers: &HeaderMap) -> Result<Option<Auth>, String> {
    let (Some(chain), Some(sig)) = (headers.get(CHAIN_HEADER), headers.get(SIGNATURE_HEADER)) else {
        return Ok(None);
    };
    let chain = chain.to_str().map_err(|e| e.to_string())?;
    let bytes = b64_decode(chain).map_err(|e| e.to_string())?;
    let chain = serde_json::from_slice(&bytes).map_err(|e| e.to_string())?;
    let signature = sig.to_str().map_err(|e| e.to_string())?.to_string();
    Ok(Some(Auth { chain, signature }))
}

async fn dispatch(
    State(service): State<Arc<dyn Service>>,
    method: HttpMethod,
    uri: Uri,
    headers: HeaderMap,
    body: Bytes,
) -> axum::response::Response {
    let method = match method {
        HttpMethod::GET => Method::Get,
        HttpMethod::POST => Method::Post,
        _ => return (StatusCode::METHOD_NOT_ALLOWED, "").into_response(),
    };
    let auth = match decode_auth(&headers) {
        Ok(a) => a,
        Err(e) => return into_axum(Response::error(400, "BadRequest", &format!("bad auth headers: {e}"))),
    };
    let req = Request {
        method,
        path: uri.path().to_string(),
        auth,
        body: body.to_vec(),
    };
    let resp = tokio::task::spawn_blocking(move || service.handle(&req))
        .await
        .unwrap_or_else(|e| Response::error(500, "Internal", &e.to_string()));
    into_axum(resp)
}

fn into_axum(resp: Response) -> axum::response::Response {
    let status = StatusCode::from_u16(resp.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    let mut out = (status, resp.body).into_response();
    out.headers_mut()
        .insert("content-type", HeaderValue::from_static("application/json"));
    out
}

pub fn router(service: Arc<dyn Service>) -> Router {
    Router::new()
        .fallback(dispatch)
        .layer(DefaultBodyLimit::max(MAX_BODY))
        .with_state(service)
}

/// A server running on its own runtime thread.
pub struct ServerHandle {
    pub addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stop(mut self) {
        self.shutdown_now();
    }

    fn shutdown_now(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shutdown_now();
    }
}

fn runtime(workers: usize) -> std::io::Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .worker_threads(workers.max(1))
        .enable_io()
        .build()
}

/// Binds `addr` (port 0 picks one) and serves in the background.
pub fn spawn(service: Arc<dyn Service>, addr: &str) -> std::io::Result<ServerHandle> {
    let std_listener = std::net::TcpListener::bind(addr)?;
    std_listener.set_nonblocking(true)?;
    let bound = std_listener.local_addr()?;
    let rt = runtime(2)?;
    let (tx, rx) = oneshot::channel::<()>();
    let thread = std::thread::Builder::new()
        .name(format!("http-{bound}"))
        .spawn(move || {
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(std_listener).expect("listener");
                let _ = axum::serve(listener, router(service))
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await;
            });
        })?;
    Ok(ServerHandle {
        addr: bound,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}

/// Serves until the process exits.
pub fn serve_forever(service: Arc<dyn Service>, addr: &str) -> std::io::Result<()> {
    let rt = runtime(std::thread::available_parallelism().map_or(2, |n| n.get()))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        eprintln!("listening on {}", listener.local_addr()?);
        axum::serve(listener, router(service)).await
    })
}

/// Blocking HTTP client. Endpoints are base URLs such as
/// `http://127.0.0.1:7001`.
pub struct HttpTransport {
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self { agent }
    }
}

impl Default for HttpTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(120))
    }
}

impl Transport for HttpTransport {
    fn send(&self, endpoint: &str, req: Request) -> Result<Response, TransportError> {
        let url = format!("{}{}", endpoint.trim_end_matches('/'), req.path);
        let unreachable = |e: ureq::Error| TransportError::Unreachable(format!("{endpoint}: {e}"));
        let auth = req
            .auth
            .as_ref()
            .map(|a| (b64_encode(&serde_json::to_vec(&a.chain).expect("chain serializes")), a.signature.clone()));
        let result = match req.method {
            Method::Get => {
                let mut r = self.agent.get(&url);
                if let Some((chain, sig)) = &auth {
                    r = r.header(CHAIN_HEADER, chain).header(SIGNATURE_HEADER, sig);
                }
                r.call()
            }
            Method::Post => {
                let mut r = self.agent.post(&url).header("content-type", "application/json");
                if let Some((chain, sig)) = &auth {
                    r = r.header(CHAIN_HEADER, chain).header(SIGNATURE_HEADER, sig);
                }
                r.send(&req.body[..])
            }
        };
        let mut resp = result.map_err(unreachable)?;
        let status = resp.status().as_u16();
        let mut body = Vec::new();
        resp.body_mut()
            .as_reader()
            .read_to_end(&mut body)
            .map_err(|e| TransportError::Unreachable(format!("{endpoint}: {e}")))?;
        Ok(Response { status, body })
    }
}
