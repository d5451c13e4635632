//! Key rotation across the keyservers and the database.

use crate::hashdb::RekeyTarget;
use crate::sharing::{run_keygen, run_product, KeyId, Party, ProtocolError, SessionId, ShareSlot, SharingConfig};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RotationOutcome {
    pub old_key: KeyId,
    pub new_key: KeyId,
    /// Epoch of the new key.
    pub epoch: u64,
    pub rekeyed_entries: usize,
    pub db_version: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RotationError {
    #[error("no reachable keyserver holds a key")]
    NoKey,
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("database: {0}")]
    Database(String),
}

/// Replaces `k` by `k·δ`: the servers jointly generate `δ`, the database
/// stages `h^δ` for every stored hash through the `δ` sharing, the servers
/// multiply and drop `δ`, and the database switches to the staged table.
pub fn rotate<P: Party>(
    parties: &[P],
    cfg: &SharingConfig,
    db: &dyn RekeyTarget,
    session: &str,
    new_key_id: KeyId,
) -> Result<RotationOutcome, RotationError> {
    let (old_key, epoch) = parties
        .iter()
        .filter_map(|p| p.status().ok())
        .filter_map(|s| s.primary)
        .max_by_key(|(_, e)| *e)
        .ok_or(RotationError::NoKey)?;
    run_keygen(
        parties,
        cfg,
        SessionId::new(format!("{session}/update")),
        KeyId::new(format!("{new_key_id}/update")),
        ShareSlot::Update,
        epoch,
    )?;
    let rekeyed_entries = db.stage(&new_key_id, epoch + 1).map_err(RotationError::Database)?;
    if let Err(e) = run_product(parties, cfg, SessionId::new(format!("{session}/product")), new_key_id.clone()) {
        db.discard();
        return Err(e.into());
    }
    let db_version = db.activate().map_err(RotationError::Database)?;
    Ok(RotationOutcome {
        old_key,
        new_key: new_key_id,
        epoch: epoch + 1,
        rekeyed_entries,
        db_version,
    })
}
