use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::protocol::{Credentials, RedactedCredentials};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditAction {
    ReadPolicy,
    ModifyPolicy,
    AccessCheck,
    Revoke,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditLogEntry {
    pub seq: u64,
    pub initiator: RedactedCredentials,
    pub action: AuditAction,
    pub subject: String,
    pub outcome: String,
    pub timestamp_ms: u64,
}

/// Append-only record of every policy access or modification.
pub struct AuditLog {
    inner: Mutex<Inner>,
}

struct Inner {
    entries: Vec<AuditLogEntry>,
    sink: Option<File>,
}

impl Default for AuditLog {
    fn default() -> Self {
        AuditLog { inner: Mutex::new(Inner { entries: Vec::new(), sink: None }) }
    }
}

impl AuditLog {
    /// Also exports each entry as one JSON line appended to `path`.
    pub fn with_export(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(AuditLog { inner: Mutex::new(Inner { entries: Vec::new(), sink: Some(file) }) })
    }

    pub fn append(&self, who: &Credentials, action: AuditAction, subject: &str, outcome: &str) {
        let mut inner = self.inner.lock();
        let entry = AuditLogEntry {
            seq: inner.entries.len() as u64,
            initiator: who.redacted(),
            action,
            subject: subject.to_owned(),
            outcome: outcome.to_owned(),
            timestamp_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
        };
        if let Some(f) = inner.sink.as_mut() {
            let line = serde_json::to_string(&entry).expect("audit entry serializes");
            if let Err(e) = writeln!(f, "{line}") {
                tracing::error!(error = %e, "audit export failed");
            }
        }
        inner.entries.push(entry);
    }

    pub fn len(&self) -> usize {
        self.inner.lock().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn entries(&self) -> Vec<AuditLogEntry> {
        self.inner.lock().entries.clone()
    }

    pub fn to_ndjson(&self) -> String {
        self.inner
            .lock()
            .entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("audit entry serializes") + "\n")
            .collect()
    }
}
