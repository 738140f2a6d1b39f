use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde_json::{Map, Value};
use tokio::sync::watch;

use super::engine::{Engine, EngineHost, StoredDoc, TabularError, TxnOp};
use super::{
    codes, CapabilitySet, QueryOp, Row, SnapshotEntry, StoreKind, TxnAction, UniformQuery, Wrapper,
    WrapperHealth, WrapperRequest, WrapperResponse,
};
use crate::error::{Error, Result};

pub const DEFAULT_QUEUE_CAPACITY: u64 = 1024;

/// Reference wrapper for one store kind, running in-process.
///
/// Requests wait in a bounded queue; `set_stalled(true)` holds them there
/// (fault injection) until released or their deadline passes.
pub struct LocalWrapper {
    kind: StoreKind,
    host: Arc<EngineHost>,
    queued: AtomicU64,
    capacity: u64,
    stalled: watch::Sender<bool>,
}

struct QueueSlot<'a>(&'a AtomicU64);

impl Drop for QueueSlot<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

impl LocalWrapper {
    pub fn new(kind: StoreKind, host: Arc<EngineHost>) -> Self {
        LocalWrapper {
            kind,
            host,
            queued: AtomicU64::new(0),
            capacity: DEFAULT_QUEUE_CAPACITY,
            stalled: watch::channel(false).0,
        }
    }

    pub fn with_queue_capacity(mut self, capacity: u64) -> Self {
        self.capacity = capacity.max(1);
        self
    }

    pub fn kind(&self) -> StoreKind {
        self.kind
    }

    pub fn set_stalled(&self, stalled: bool) {
        self.stalled.send_replace(stalled);
    }

    pub fn queue_depth(&self) -> u64 {
        self.queued.load(Ordering::SeqCst)
    }

    fn engine(&self, access_point: &str) -> std::result::Result<Arc<Engine>, (&'static str, String)> {
        let engine = self
            .host
            .get(access_point)
            .ok_or_else(|| (codes::STORE_UNAVAILABLE, format!("no store at {access_point}")))?;
        if engine.kind() != self.kind {
            return Err((codes::WRONG_KIND, format!("{} wrapper cannot serve a {} store", self.kind, engine.kind())));
        }
        Ok(engine)
    }

    /// Translates and runs one request against its store.
    pub fn execute(&self, req: &WrapperRequest) -> WrapperResponse {
        let id = req.request_id;
        let engine = match self.engine(&req.access_point) {
            Ok(e) => e,
            Err((code, msg)) => return WrapperResponse::error(id, code, msg),
        };
        let outcome = match (&req.query, &req.txn) {
            (Some(q), None) => self.run_query(&engine, q),
            (None, Some(ctl)) => match engine.as_ref() {
                Engine::Tabular(t) => {
                    let r = match (ctl.action, ctl.txn_id.as_deref()) {
                        (TxnAction::Begin, _) => Ok(Outcome::Payload(t.begin().into_bytes())),
                        (TxnAction::Commit, Some(x)) => t.commit(x).map(|n| Outcome::Count(n as u64)),
                        (TxnAction::Abort, Some(x)) => t.abort(x).map(|n| Outcome::Count(n as u64)),
                        (_, None) => return WrapperResponse::error(id, codes::BAD_REQUEST, "txn_id required"),
                    };
                    r.map_err(tabular_err)
                }
                _ => Err((codes::CAPABILITY_MISSING, format!("{} stores have no transactions", self.kind))),
            },
            _ => Err((codes::BAD_REQUEST, "exactly one of query and txn is required".to_owned())),
        };
        match outcome {
            Ok(Outcome::Payload(p)) => WrapperResponse::payload(id, p),
            Ok(Outcome::Rows(r)) => WrapperResponse::rows(id, r),
            Ok(Outcome::Count(n)) => WrapperResponse::count(id, n),
            Err((code, msg)) => WrapperResponse::error(id, code, msg),
        }
    }

    fn run_query(&self, engine: &Engine, q: &UniformQuery) -> std::result::Result<Outcome, (&'static str, String)> {
        q.validate().map_err(|e| (codes::BAD_REQUEST, e.detail()))?;
        if let Some(sel) = &q.selector {
            check_selector(sel)?;
        }
        if q.txn_id.is_some() && !matches!(engine, Engine::Tabular(_)) {
            return Err((codes::CAPABILITY_MISSING, format!("{} stores have no transactions", self.kind)));
        }
        let coll = q.collection.as_str();
        let not_found = || (codes::NOT_FOUND, format!("{}/{}", coll, q.key.as_deref().unwrap_or("")));
        match engine {
            Engine::KeyValue(kv) => {
                let matching = |sel: &Map<String, Value>| -> Vec<(String, Vec<u8>)> {
                    kv.entries(coll)
                        .unwrap_or_default()
                        .into_iter()
                        .filter(|(_, v)| StoredDoc::new(v.clone()).matches(sel))
                        .collect()
                };
                match (q.op, &q.key, &q.selector) {
                    (QueryOp::Read, Some(k), _) => kv.get(coll, k).map(Outcome::Payload).ok_or_else(not_found),
                    (QueryOp::Read, None, Some(sel)) => Ok(Outcome::rows(matching(sel))),
                    (QueryOp::Write, Some(k), _) => {
                        kv.set(coll, k, payload(q));
                        Ok(Outcome::Count(1))
                    }
                    (QueryOp::Update, Some(k), _) => {
                        if kv.get(coll, k).is_none() {
                            return Err(not_found());
                        }
                        kv.set(coll, k, payload(q));
                        Ok(Outcome::Count(1))
                    }
                    (QueryOp::Update, None, Some(sel)) => {
                        let hits = matching(sel);
                        for (k, _) in &hits {
                            kv.set(coll, k, payload(q));
                        }
                        Ok(Outcome::Count(hits.len() as u64))
                    }
                    (QueryOp::Delete, Some(k), _) => {
                        if kv.del(coll, k) {
                            Ok(Outcome::Count(1))
                        } else {
                            Err(not_found())
                        }
                    }
                    (QueryOp::Delete, None, Some(sel)) => {
                        let hits = matching(sel);
                        for (k, _) in &hits {
                            kv.del(coll, k);
                        }
                        Ok(Outcome::Count(hits.len() as u64))
                    }
                    _ => Err((codes::BAD_REQUEST, "unsupported query shape".into())),
                }
            }
            Engine::Document(docs) => match (q.op, &q.key, &q.selector) {
                (QueryOp::Read, Some(k), _) => {
                    docs.find_by_id(coll, k).map(|d| Outcome::Payload(d.raw)).ok_or_else(not_found)
                }
                (QueryOp::Read, None, Some(sel)) => {
                    Ok(Outcome::rows(docs.find(coll, sel).into_iter().map(|(k, d)| (k, d.raw)).collect()))
                }
                (QueryOp::Write, Some(k), _) => {
                    docs.upsert(coll, k, payload(q));
                    Ok(Outcome::Count(1))
                }
                (QueryOp::Update, Some(k), _) => {
                    if docs.find_by_id(coll, k).is_none() {
                        return Err(not_found());
                    }
                    docs.upsert(coll, k, payload(q));
                    Ok(Outcome::Count(1))
                }
                (QueryOp::Update, None, Some(sel)) => {
                    let hits = docs.find(coll, sel);
                    for (k, _) in &hits {
                        docs.upsert(coll, k, payload(q));
                    }
                    Ok(Outcome::Count(hits.len() as u64))
                }
                (QueryOp::Delete, Some(k), _) => {
                    if docs.remove(coll, k) {
                        Ok(Outcome::Count(1))
                    } else {
                        Err(not_found())
                    }
                }
                (QueryOp::Delete, None, Some(sel)) => {
                    let hits = docs.find(coll, sel);
                    for (k, _) in &hits {
                        docs.remove(coll, k);
                    }
                    Ok(Outcome::Count(hits.len() as u64))
                }
                _ => Err((codes::BAD_REQUEST, "unsupported query shape".into())),
            },
            Engine::Tabular(t) => {
                let txn = q.txn_id.as_deref();
                let table = coll.to_owned();
                match (q.op, &q.key, &q.selector) {
                    (QueryOp::Read, Some(k), _) => t
                        .select(coll, k, txn)
                        .map_err(tabular_err)?
                        .map(|d| Outcome::Payload(d.raw))
                        .ok_or_else(not_found),
                    (QueryOp::Read, None, Some(sel)) => Ok(Outcome::rows(
                        t.select_where(coll, sel, txn).map_err(tabular_err)?.into_iter().map(|(k, d)| (k, d.raw)).collect(),
                    )),
                    (QueryOp::Write, Some(k), _) => {
                        t.execute(TxnOp::Insert { table, pk: k.clone(), row: payload(q) }, txn).map_err(tabular_err)?;
                        Ok(Outcome::Count(1))
                    }
                    (QueryOp::Update, Some(k), _) => {
                        if t.select(coll, k, txn).map_err(tabular_err)?.is_none() {
                            return Err(not_found());
                        }
                        t.execute(TxnOp::Update { table, pk: k.clone(), row: payload(q) }, txn)
                            .map_err(|e| missing_as_not_found(e, txn, &not_found))?;
                        Ok(Outcome::Count(1))
                    }
                    (QueryOp::Delete, Some(k), _) => {
                        if t.select(coll, k, txn).map_err(tabular_err)?.is_none() {
                            return Err(not_found());
                        }
                        t.execute(TxnOp::Delete { table, pk: k.clone() }, txn)
                            .map_err(|e| missing_as_not_found(e, txn, &not_found))?;
                        Ok(Outcome::Count(1))
                    }
                    (QueryOp::Update, None, Some(sel)) => {
                        let hits = t.select_where(coll, sel, txn).map_err(tabular_err)?;
                        for (k, _) in &hits {
                            t.execute(TxnOp::Update { table: table.clone(), pk: k.clone(), row: payload(q) }, txn)
                                .map_err(tabular_err)?;
                        }
                        Ok(Outcome::Count(hits.len() as u64))
                    }
                    (QueryOp::Delete, None, Some(sel)) => {
                        let hits = t.select_where(coll, sel, txn).map_err(tabular_err)?;
                        for (k, _) in &hits {
                            t.execute(TxnOp::Delete { table: table.clone(), pk: k.clone() }, txn).map_err(tabular_err)?;
                        }
                        Ok(Outcome::Count(hits.len() as u64))
                    }
                    _ => Err((codes::BAD_REQUEST, "unsupported query shape".into())),
                }
            }
        }
    }
}

enum Outcome {
    Payload(Vec<u8>),
    Rows(Vec<Row>),
    Count(u64),
}

impl Outcome {
    fn rows(pairs: Vec<(String, Vec<u8>)>) -> Self {
        Outcome::Rows(pairs.into_iter().map(|(key, value)| Row { key, value }).collect())
    }
}

fn payload(q: &UniformQuery) -> Vec<u8> {
    q.payload.clone().unwrap_or_default()
}

fn tabular_err(e: TabularError) -> (&'static str, String) {
    match e {
        TabularError::NoSuchTxn(t) => (codes::TXN_UNKNOWN, t),
        TabularError::Conflict(m) => (codes::TXN_CONFLICT, m),
    }
}

// An auto-committed update/delete racing a concurrent delete is a miss, not a
// transaction conflict.
fn missing_as_not_found(
    e: TabularError,
    txn: Option<&str>,
    not_found: &dyn Fn() -> (&'static str, String),
) -> (&'static str, String) {
    match (e, txn) {
        (TabularError::Conflict(_), None) => not_found(),
        (e, _) => tabular_err(e),
    }
}

/// Conjunctive equality on top-level fields: scalar values only, no operators.
fn check_selector(sel: &Map<String, Value>) -> std::result::Result<(), (&'static str, String)> {
    for (k, v) in sel {
        if k.is_empty() || k.starts_with('$') {
            return Err((codes::BAD_SELECTOR, format!("unsupported selector field `{k}`")));
        }
        if v.is_object() || v.is_array() {
            return Err((codes::BAD_SELECTOR, format!("selector field `{k}` must be a scalar")));
        }
    }
    Ok(())
}

#[async_trait]
impl Wrapper for LocalWrapper {
    async fn handle(&self, req: WrapperRequest) -> WrapperResponse {
        let id = req.request_id;
        if self.queued.fetch_add(1, Ordering::SeqCst) >= self.capacity {
            self.queued.fetch_sub(1, Ordering::SeqCst);
            return WrapperResponse::error(id, codes::OVERLOADED, "wrapper queue is full");
        }
        let _slot = QueueSlot(&self.queued);
        let mut rx = self.stalled.subscribe();
        if *rx.borrow() {
            let wait = rx.wait_for(|s| !*s);
            let released = if req.deadline_ms == 0 {
                wait.await.is_ok()
            } else {
                matches!(tokio::time::timeout(Duration::from_millis(req.deadline_ms), wait).await, Ok(Ok(_)))
            };
            if !released {
                return WrapperResponse::error(id, codes::DEADLINE_EXCEEDED, "request deadline passed while queued");
            }
        }
        self.execute(&req)
    }

    async fn capabilities(&self) -> Result<CapabilitySet> {
        Ok(CapabilitySet::for_kind(self.kind))
    }

    async fn health(&self) -> Result<WrapperHealth> {
        Ok(WrapperHealth {
            status: "ok".into(),
            stored_records: self.host.record_count(self.kind) as u64,
            queue_depth: self.queue_depth(),
        })
    }

    async fn snapshot(&self, access_point: &str, collection: &str) -> Result<Vec<SnapshotEntry>> {
        let engine = self.engine(access_point).map_err(|(code, message)| Error::WrapperError {
            code: code.to_owned(),
            message,
        })?;
        let entries = engine.dump(collection).ok_or_else(|| Error::UnknownCollection(collection.to_owned()))?;
        Ok(entries.into_iter().map(|(k, v)| SnapshotEntry::new(k, v)).collect())
    }
}
