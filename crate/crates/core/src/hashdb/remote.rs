use std::sync::Arc;

use serde::de::DeserializeOwned;

use super::{RekeyCommand, RekeyTarget, ScreenRequest, Verdict, VersionInfo};
use crate::sharing::KeyId;
use crate::transport::{Credentials, Request, Transport};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DbClientError {
    #[error("database unreachable: {0}")]
    Unreachable(String),
    #[error("database rejected the request ({status} {code}): {message}")]
    Rejected { status: u16, code: String, message: String },
}

pub struct RemoteHashDb {
    endpoint: String,
    transport: Arc<dyn Transport>,
    creds: Credentials,
}

impl RemoteHashDb {
    pub fn new(endpoint: &str, transport: Arc<dyn Transport>, creds: Credentials) -> Self {
        Self {
            endpoint: endpoint.into(),
            transport,
            creds,
        }
    }

    fn call<T: DeserializeOwned>(&self, req: Request) -> Result<T, DbClientError> {
        let resp = self
            .transport
            .send(&self.endpoint, req.signed(&self.creds))
            .map_err(|e| DbClientError::Unreachable(e.to_string()))?;
        if !resp.is_success() {
            let body = resp.error_body().unwrap_or_default();
            return Err(DbClientError::Rejected {
                status: resp.status,
                code: body.error,
                message: body.message,
            });
        }
        resp.parse().map_err(|m| DbClientError::Rejected {
            status: resp.status,
            code: "BadResponse".into(),
            message: m,
        })
    }

    pub fn screen(&self, req: &ScreenRequest) -> Result<Verdict, DbClientError> {
        self.call(Request::post_json("/screen", req))
    }

    pub fn version(&self) -> Result<VersionInfo, DbClientError> {
        self.call(Request::get("/version"))
    }

    pub fn swap(&self, table_bytes: Vec<u8>) -> Result<u64, DbClientError> {
        let v: serde_json::Value = self.call(Request::post("/admin/swap", table_bytes))?;
        Ok(v["version"].as_u64().unwrap_or(0))
    }

    pub fn rekey(&self, cmd: &RekeyCommand) -> Result<serde_json::Value, DbClientError> {
        self.call(Request::post_json("/admin/rekey", cmd))
    }
}

impl RekeyTarget for RemoteHashDb {
    fn stage(&self, new_key_id: &KeyId, epoch: u64) -> Result<usize, String> {
        let v = self
            .rekey(&RekeyCommand::Stage {
                new_key_id: new_key_id.clone(),
                epoch,
            })
            .map_err(|e| e.to_string())?;
        Ok(v["staged"].as_u64().unwrap_or(0) as usize)
    }

    fn activate(&self) -> Result<u64, String> {
        let v = self.rekey(&RekeyCommand::Activate).map_err(|e| e.to_string())?;
        Ok(v["version"].as_u64().unwrap_or(0))
    }

    fn discard(&self) {
        let _ = self.rekey(&RekeyCommand::Discard);
    }
}
