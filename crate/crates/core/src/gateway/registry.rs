//! In-memory job registry with an optional append-only log for inspection.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use parking_lot::{Mutex, RwLock};
use serde_json::json;
use tokio::sync::watch;

use super::balance::ComponentInstance;
use super::enforce::Protection;
use crate::error::{Error, Result};
use crate::protocol::{JobData, JobEvent, JobId, JobRecord, JobStatus, JobView};

pub struct JobEntry {
    pub(crate) record: Mutex<JobRecord>,
    /// Inbound buffer while the job accepts PUT chunks.
    pub(crate) channel: Mutex<Option<Vec<u8>>>,
    pub(crate) attempts: AtomicU32,
    /// Instance currently holding the job.
    pub(crate) instance: Mutex<Option<Arc<ComponentInstance>>>,
    /// Set when a component reports the job as ongoing.
    pub(crate) progress: Mutex<Option<JobData>>,
    pub(crate) protection: Mutex<Option<Protection>>,
    changed: watch::Sender<u64>,
}

impl JobEntry {
    pub fn status(&self) -> JobStatus {
        self.record.lock().status
    }

    pub fn view(&self) -> JobView {
        self.record.lock().view()
    }

    pub fn attempts(&self) -> u32 {
        self.attempts.load(Ordering::SeqCst)
    }

    pub fn progress(&self) -> Option<JobData> {
        self.progress.lock().clone()
    }

    pub fn is_open(&self) -> bool {
        self.channel.lock().is_some()
    }

    pub(crate) fn touch(&self) {
        self.changed.send_modify(|v| *v += 1);
    }

    /// Waits until `done` holds for this entry.
    pub async fn wait_until(&self, done: impl Fn(&JobEntry) -> bool) {
        let mut rx = self.changed.subscribe();
        loop {
            if done(self) {
                return;
            }
            if rx.changed().await.is_err() {
                return;
            }
        }
    }

    /// Waits for a terminal state or for the job to report itself ongoing.
    pub async fn settled(&self) -> JobView {
        self.wait_until(|e| e.status().is_terminal() || e.progress.lock().is_some()).await;
        self.view()
    }
}

pub struct JobRegistry {
    entries: RwLock<HashMap<JobId, Arc<JobEntry>>>,
    next: AtomicU64,
    wal: Option<Mutex<File>>,
    started: Instant,
}

impl Default for JobRegistry {
    fn default() -> Self {
        JobRegistry::new()
    }
}

impl JobRegistry {
    pub fn new() -> Self {
        JobRegistry { entries: RwLock::new(HashMap::new()), next: AtomicU64::new(1), wal: None, started: Instant::now() }
    }

    pub fn with_wal(mut self, path: &Path) -> Result<Self> {
        let f = OpenOptions::new().create(true).append(true).open(path)?;
        self.wal = Some(Mutex::new(f));
        Ok(self)
    }

    /// Milliseconds since the registry started; monotonic.
    pub fn now_ms(&self) -> u64 {
        self.started.elapsed().as_millis() as u64
    }

    pub fn next_id(&self) -> JobId {
        JobId(format!("job-{}", self.next.fetch_add(1, Ordering::Relaxed)))
    }

    pub fn insert(&self, record: JobRecord) -> Arc<JobEntry> {
        let (tx, _) = watch::channel(0);
        let entry = Arc::new(JobEntry {
            record: Mutex::new(record),
            channel: Mutex::new(None),
            attempts: AtomicU32::new(0),
            instance: Mutex::new(None),
            progress: Mutex::new(None),
            protection: Mutex::new(None),
            changed: tx,
        });
        let rec = entry.record.lock().clone();
        self.log(&rec, "registered");
        self.entries.write().insert(rec.job_id.clone(), entry.clone());
        entry
    }

    pub fn get(&self, id: &str) -> Result<Arc<JobEntry>> {
        self.entries.read().get(&JobId::from(id)).cloned().ok_or_else(|| Error::NotFound(format!("job {id}")))
    }

    pub fn remove(&self, id: &str) -> Option<Arc<JobEntry>> {
        let e = self.entries.write().remove(&JobId::from(id));
        if let Some(e) = &e {
            let rec = e.record.lock().clone();
            self.log(&rec, "removed");
            e.touch();
        }
        e
    }

    pub fn len(&self) -> usize {
        self.entries.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.read().is_empty()
    }

    pub fn ids(&self) -> Vec<JobId> {
        let mut v: Vec<JobId> = self.entries.read().keys().cloned().collect();
        v.sort();
        v
    }

    /// Applies one status transition atomically for this job.
    pub fn transition(&self, entry: &JobEntry, event: JobEvent, data: Option<JobData>) -> Result<JobStatus> {
        let now = self.now_ms();
        let (res, snapshot) = {
            let mut rec = entry.record.lock();
            let res = rec.apply(event, data, now).map(|_| rec.status);
            (res, rec.clone())
        };
        if res.is_ok() {
            if snapshot.status.is_terminal() {
                entry.channel.lock().take();
            }
            self.log(&snapshot, event_name(event));
            entry.touch();
        }
        res
    }

    fn log(&self, rec: &JobRecord, what: &str) {
        let Some(wal) = &self.wal else { return };
        let mut line = json!({
            "job_id": rec.job_id,
            "kind": rec.job_description,
            "principal": rec.initiator.principal_id,
            "event": what,
            "status": rec.status,
            "at": self.now_ms(),
        });
        if let Some((code, _)) = rec.error() {
            line["error"] = json!(code);
        }
        let mut f = wal.lock();
        if let Err(e) = writeln!(f, "{line}") {
            tracing::warn!(error = %e, "job log append failed");
        }
    }
}

fn event_name(e: JobEvent) -> &'static str {
    match e {
        JobEvent::Start => "start",
        JobEvent::Succeed => "succeed",
        JobEvent::Fail => "fail",
    }
}
