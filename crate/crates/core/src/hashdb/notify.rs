use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::certs::Contacts;

/// Audit record emitted whenever an exemption token lets a match through.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Notification {
    pub timestamp_ms: u64,
    pub nonce: String,
    /// Certificate fingerprint of the screening machine or provider.
    pub requester: String,
    /// Certificate fingerprint of the researcher who presented the token.
    pub presenter: String,
    pub exempted: Vec<String>,
    pub contacts: Contacts,
}

pub trait Notifier: Send + Sync {
    fn notify(&self, n: &Notification) -> std::io::Result<()>;
}

#[derive(Default)]
pub struct MemoryNotifier(Mutex<Vec<Notification>>);

impl MemoryNotifier {
    pub fn records(&self) -> Vec<Notification> {
        self.0.lock().unwrap().clone()
    }
}

impl Notifier for MemoryNotifier {
    fn notify(&self, n: &Notification) -> std::io::Result<()> {
        self.0.lock().unwrap().push(n.clone());
        Ok(())
    }
}

/// JSON lines, appended and synced per record.
pub struct FileNotifier(Mutex<File>);

impl FileNotifier {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        Ok(Self(Mutex::new(OpenOptions::new().create(true).append(true).open(path)?)))
    }
}

impl Notifier for FileNotifier {
    fn notify(&self, n: &Notification) -> std::io::Result<()> {
        let mut line = serde_json::to_vec(n).expect("serializable");
        line.push(b'\n');
        let mut f = self.0.lock().unwrap();
        f.write_all(&line)?;
        f.sync_data()
    }
}
