use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::ScreeningReport;
use crate::hashdb::{Decision, Receipt};

/// One line of the receipt store.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredReceipt {
    pub order_hash: String,
    pub decision: Decision,
    pub windows: usize,
    pub receipt: Receipt,
}

/// Append-only JSON-lines file of receipts keyed by order hash.
pub struct ReceiptStore {
    path: PathBuf,
    file: Mutex<File>,
}

impl ReceiptStore {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            file: Mutex::new(file),
        })
    }

    pub fn append(&self, report: &ScreeningReport) -> std::io::Result<()> {
        let entry = StoredReceipt {
            order_hash: report.order_hash.clone(),
            decision: report.decision,
            windows: report.windows,
            receipt: report.receipt.clone(),
        };
        let mut line = serde_json::to_vec(&entry)?;
        line.push(b'\n');
        let mut f = self.file.lock().unwrap();
        f.write_all(&line)?;
        f.sync_data()
    }

    pub fn entries(&self) -> std::io::Result<Vec<StoredReceipt>> {
        let reader = BufReader::new(File::open(&self.path)?);
        let mut out = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line)?);
        }
        Ok(out)
    }

    pub fn for_order(&self, order_hash: &str) -> std::io::Result<Vec<StoredReceipt>> {
        Ok(self.entries()?.into_iter().filter(|e| e.order_hash == order_hash).collect())
    }
}
