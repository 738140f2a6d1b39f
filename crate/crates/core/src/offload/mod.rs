//! Off-loading APIs: uniform query dispatch to wrappers, store lifecycle and
//! federation data operations.
//!
//! The catalog maps store ids to descriptors. Every mutation dispatched here
//! is serialized per collection; while a collection has consumers (a
//! continuous replication link or a running migration) each mutation is also
//! appended to that collection's change log with a monotone `(epoch, seq)`.

mod changes;
mod jobs;
mod lifecycle;
mod movement;
mod operations;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

pub use changes::Change;
pub use movement::{CopyFault, MigrationReport};
pub use operations::{OffloadAction, OffloadPlan, TransformKind, TransformReport};

use changes::CollState;
use crate::codec;
use crate::error::{Error, Result};
use crate::security::envelope::Envelope;
use crate::security::SecurityEngine;
use crate::sim::{Federation, Lambdas};
use crate::wrappers::engine::EngineHost;
pub use crate::wrappers::UniformQuery;
use crate::wrappers::{
    codes, CapabilitySet, HttpWrapper, LocalWrapper, QueryOp, Row, StoreKind, TxnAction, TxnControl, WireError,
    Wrapper, WrapperRequest, WrapperResponse,
};

/// One collection of one store.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CollectionRef {
    pub store_id: String,
    pub collection: String,
}

impl CollectionRef {
    pub fn new(store_id: &str, collection: &str) -> Self {
        CollectionRef { store_id: store_id.to_owned(), collection: collection.to_owned() }
    }
}

impl fmt::Display for CollectionRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.store_id, self.collection)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MachineDescriptor {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub machine_id: Option<String>,
    pub provider_id: String,
}

impl MachineDescriptor {
    pub fn on(provider_id: &str) -> Self {
        MachineDescriptor { machine_id: None, provider_id: provider_id.to_owned() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplicationMode {
    #[default]
    OneShot,
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoreState {
    Creating,
    Ready,
    Scaling,
    Relocating,
    Destroyed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataStoreDescriptor {
    pub store_id: String,
    pub kind: StoreKind,
    pub provider_id: String,
    pub access_point: String,
    pub instances: Vec<MachineDescriptor>,
    pub state: StoreState,
    pub acid: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WrapperRegistration {
    pub wrapper_id: String,
    pub kind: StoreKind,
    pub endpoint: String,
    #[serde(default = "no_capabilities")]
    pub capabilities: CapabilitySet,
}

fn no_capabilities() -> CapabilitySet {
    CapabilitySet { transactions: false, scan: false, stream: false }
}

impl WrapperRegistration {
    pub fn new(wrapper_id: &str, kind: StoreKind, endpoint: &str) -> Self {
        WrapperRegistration {
            wrapper_id: wrapper_id.to_owned(),
            kind,
            endpoint: endpoint.to_owned(),
            capabilities: no_capabilities(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicationLink {
    pub link_id: String,
    pub source: CollectionRef,
    pub dest: CollectionRef,
    pub mode: ReplicationMode,
    /// Last `(epoch, seq)` shipped to the destination.
    pub last_epoch: u64,
    pub last_seq: u64,
}

/// Normalised answer to a uniform query. Exactly one of `payload`, `rows`,
/// `count` and `error` is set, as on the wrapper wire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryResult {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "codec::b64_opt")]
    pub payload: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<Vec<Row>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<WireError>,
}

impl QueryResult {
    fn from_wire(r: WrapperResponse) -> Self {
        QueryResult { ok: r.ok, payload: r.payload, rows: r.rows, count: r.count, error: r.error }
    }

    pub fn is_not_found(&self) -> bool {
        self.error.as_ref().is_some_and(|e| e.code == codes::NOT_FOUND)
    }

    /// Turns a wrapper-level failure into the matching gateway error.
    pub fn into_result(self) -> Result<QueryResult> {
        let Some(e) = &self.error else { return Ok(self) };
        let msg = e.message.clone();
        Err(match e.code.as_str() {
            codes::NOT_FOUND => Error::NotFound(msg),
            codes::BAD_SELECTOR => Error::BadSelector(msg),
            codes::TXN_UNKNOWN => Error::TxnUnknown(msg),
            codes::DEADLINE_EXCEEDED => Error::DeadlineExceeded(msg),
            codes::CAPABILITY_MISSING => Error::CapabilityMissing(msg),
            codes::OVERLOADED => Error::Overloaded(msg),
            other => Error::WrapperError { code: other.to_owned(), message: msg },
        })
    }
}

/// Operational constants; all configurable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OffloadConfig {
    /// Queue depth above which a store counts as a bottleneck.
    pub q_high: u64,
    pub observation_window_ms: u64,
    pub wrapper_deadline_ms: u64,
    /// Writes allowed to wait on a scaling/relocating store.
    pub max_queued_writes: usize,
    /// Changes shipped per link per sync cycle.
    pub sync_batch: usize,
    /// Simulated machine boot time during scaling.
    pub provision_delay_ms: u64,
    /// Refuse write payloads that did not pass protocol enforcement.
    pub require_envelope: bool,
    pub lambdas: Lambdas,
}

impl Default for OffloadConfig {
    fn default() -> Self {
        OffloadConfig {
            q_high: 64,
            observation_window_ms: 2000,
            wrapper_deadline_ms: 2000,
            max_queued_writes: 1024,
            sync_batch: 128,
            provision_delay_ms: 0,
            require_envelope: false,
            lambdas: Lambdas::default(),
        }
    }
}

struct StoreEntry {
    desc: RwLock<DataStoreDescriptor>,
    /// Writes hold it shared; scaling and relocation hold it exclusively.
    gate: tokio::sync::RwLock<()>,
    /// Serializes lifecycle operations on this store.
    lease: tokio::sync::Mutex<()>,
    waiting_writes: AtomicUsize,
    inflight: AtomicU64,
    reads: AtomicU64,
    writes: AtomicU64,
}

impl StoreEntry {
    fn snapshot(&self) -> DataStoreDescriptor {
        self.desc.read().clone()
    }
}

struct WrapperSlot {
    reg: WrapperRegistration,
    client: Arc<dyn Wrapper>,
    dispatched: AtomicU64,
}

struct InflightGuard<'a>(&'a AtomicU64);

impl Drop for InflightGuard<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

/// Traffic counters of one store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StoreTraffic {
    pub reads: u64,
    pub writes: u64,
    pub inflight: u64,
}

/// `(location, key, value)`; `None` is a delete.
type PendingChange = (CollectionRef, String, Option<Vec<u8>>);

pub struct OffloadingApis {
    config: OffloadConfig,
    federation: Arc<Federation>,
    security: Arc<SecurityEngine>,
    host: Arc<EngineHost>,
    stores: RwLock<BTreeMap<String, Arc<StoreEntry>>>,
    wrappers: RwLock<Vec<Arc<WrapperSlot>>>,
    wrapper_cursor: AtomicUsize,
    colls: Mutex<HashMap<CollectionRef, Arc<CollState>>>,
    /// Cutover after migration: readers and writers of the key follow to the value.
    aliases: RwLock<HashMap<CollectionRef, CollectionRef>>,
    /// Off-load redirects: reads only.
    redirects: RwLock<HashMap<CollectionRef, CollectionRef>>,
    links: Mutex<BTreeMap<String, movement::LinkState>>,
    /// Writes buffered per open transaction, applied to the change log on commit.
    txn_changes: Mutex<HashMap<String, Vec<PendingChange>>>,
    dataset_locations: RwLock<BTreeMap<String, BTreeSet<CollectionRef>>>,
    plans: Mutex<Vec<OffloadPlan>>,
    copy_fault: RwLock<Option<CopyFault>>,
    cancelled: Mutex<HashMap<String, String>>,
    job_links: Mutex<HashMap<String, String>>,
    next_request: AtomicU64,
    next_store: AtomicU64,
    next_machine: AtomicU64,
    next_link: AtomicU64,
    started: std::time::Instant,
}

impl OffloadingApis {
    pub fn new(
        federation: Arc<Federation>,
        security: Arc<SecurityEngine>,
        host: Arc<EngineHost>,
        config: OffloadConfig,
    ) -> Self {
        OffloadingApis {
            config,
            federation,
            security,
            host,
            stores: RwLock::new(BTreeMap::new()),
            wrappers: RwLock::new(Vec::new()),
            wrapper_cursor: AtomicUsize::new(0),
            colls: Mutex::new(HashMap::new()),
            aliases: RwLock::new(HashMap::new()),
            redirects: RwLock::new(HashMap::new()),
            links: Mutex::new(BTreeMap::new()),
            txn_changes: Mutex::new(HashMap::new()),
            dataset_locations: RwLock::new(BTreeMap::new()),
            plans: Mutex::new(Vec::new()),
            copy_fault: RwLock::new(None),
            cancelled: Mutex::new(HashMap::new()),
            job_links: Mutex::new(HashMap::new()),
            next_request: AtomicU64::new(1),
            next_store: AtomicU64::new(1),
            next_machine: AtomicU64::new(1),
            next_link: AtomicU64::new(1),
            started: std::time::Instant::now(),
        }
    }

    pub fn config(&self) -> &OffloadConfig {
        &self.config
    }

    pub fn federation(&self) -> &Arc<Federation> {
        &self.federation
    }

    pub fn security(&self) -> &Arc<SecurityEngine> {
        &self.security
    }

    pub fn host(&self) -> &Arc<EngineHost> {
        &self.host
    }

    fn now_ms(&self) -> u64 {
        self.started.elapsed().as_millis() as u64
    }

    // ---- wrappers ----

    /// Registers a wrapper after probing its health; its capabilities are
    /// taken from the wrapper itself.
    pub async fn register_wrapper(&self, mut reg: WrapperRegistration, client: Arc<dyn Wrapper>) -> Result<String> {
        if self.wrappers.read().iter().any(|w| w.reg.wrapper_id == reg.wrapper_id) {
            return Err(Error::DuplicateId(reg.wrapper_id));
        }
        client
            .health()
            .await
            .map_err(|e| Error::Unreachable(format!("{}: {}", reg.endpoint, e.detail())))?;
        reg.capabilities = client
            .capabilities()
            .await
            .map_err(|e| Error::Unreachable(format!("{}: {}", reg.endpoint, e.detail())))?;
        let id = reg.wrapper_id.clone();
        let kind = reg.kind;
        {
            let mut ws = self.wrappers.write();
            if ws.iter().any(|w| w.reg.wrapper_id == id) {
                return Err(Error::DuplicateId(id));
            }
            ws.push(Arc::new(WrapperSlot { reg, client, dispatched: AtomicU64::new(0) }));
        }
        let acid = self.kind_is_transactional(kind);
        for s in self.stores.read().values() {
            let mut d = s.desc.write();
            if d.kind == kind {
                d.acid = acid;
            }
        }
        Ok(id)
    }

    /// Registers a remote wrapper reachable over the wire protocol.
    pub async fn register_http_wrapper(&self, wrapper_id: &str, kind: StoreKind, endpoint: &str) -> Result<String> {
        let client = Arc::new(HttpWrapper::new(endpoint));
        self.register_wrapper(WrapperRegistration::new(wrapper_id, kind, endpoint), client).await
    }

    /// Registers one in-process reference wrapper per store kind.
    pub async fn register_local_wrappers(&self) -> Result<Vec<Arc<LocalWrapper>>> {
        let mut out = Vec::new();
        for kind in StoreKind::ALL {
            let w = Arc::new(LocalWrapper::new(kind, self.host.clone()));
            let reg = WrapperRegistration::new(&format!("local-{kind}"), kind, &format!("local://{kind}"));
            self.register_wrapper(reg, w.clone()).await?;
            out.push(w);
        }
        Ok(out)
    }

    pub fn wrappers(&self) -> Vec<WrapperRegistration> {
        self.wrappers.read().iter().map(|w| w.reg.clone()).collect()
    }

    /// Requests dispatched to each wrapper so far.
    pub fn wrapper_dispatch_counts(&self) -> Vec<(String, u64)> {
        self.wrappers.read().iter().map(|w| (w.reg.wrapper_id.clone(), w.dispatched.load(Ordering::Relaxed))).collect()
    }

    fn kind_is_transactional(&self, kind: StoreKind) -> bool {
        self.wrappers.read().iter().any(|w| w.reg.kind == kind && w.reg.capabilities.transactions)
    }

    fn wrapper_for(&self, kind: StoreKind, need_txn: bool) -> Result<Arc<WrapperSlot>> {
        let ws = self.wrappers.read();
        let candidates: Vec<&Arc<WrapperSlot>> =
            ws.iter().filter(|w| w.reg.kind == kind && (!need_txn || w.reg.capabilities.transactions)).collect();
        if candidates.is_empty() {
            return Err(Error::NoWrapperForKind(kind.to_string()));
        }
        let i = self.wrapper_cursor.fetch_add(1, Ordering::Relaxed) % candidates.len();
        Ok(candidates[i].clone())
    }

    async fn send(&self, kind: StoreKind, access_point: &str, query: Option<UniformQuery>, txn: Option<TxnControl>) -> Result<WrapperResponse> {
        let need_txn = txn.is_some() || query.as_ref().is_some_and(|q| q.txn_id.is_some());
        let slot = self.wrapper_for(kind, need_txn)?;
        let req = WrapperRequest {
            request_id: self.next_request.fetch_add(1, Ordering::Relaxed),
            access_point: access_point.to_owned(),
            query,
            txn,
            deadline_ms: self.config.wrapper_deadline_ms,
        };
        slot.dispatched.fetch_add(1, Ordering::Relaxed);
        let id = req.request_id;
        let resp = slot.client.handle(req).await;
        if resp.request_id != id || resp.check_shape().is_err() {
            return Err(Error::WrapperError {
                code: codes::INTERNAL.into(),
                message: format!("wrapper {} broke the wire protocol", slot.reg.wrapper_id),
            });
        }
        Ok(resp)
    }

    async fn snapshot_at(&self, kind: StoreKind, access_point: &str, collection: &str) -> Result<Vec<crate::wrappers::SnapshotEntry>> {
        let slot = self.wrapper_for(kind, false)?;
        slot.client.snapshot(access_point, collection).await
    }

    // ---- catalog ----

    fn entry(&self, store_id: &str) -> Result<Arc<StoreEntry>> {
        self.stores.read().get(store_id).cloned().ok_or_else(|| Error::StoreNotFound(store_id.to_owned()))
    }

    pub fn store(&self, store_id: &str) -> Result<DataStoreDescriptor> {
        Ok(self.entry(store_id)?.snapshot())
    }

    pub fn list_stores(&self) -> Vec<DataStoreDescriptor> {
        self.stores.read().values().map(|e| e.snapshot()).collect()
    }

    pub fn traffic(&self, store_id: &str) -> Result<StoreTraffic> {
        let e = self.entry(store_id)?;
        Ok(StoreTraffic {
            reads: e.reads.load(Ordering::Relaxed),
            writes: e.writes.load(Ordering::Relaxed),
            inflight: e.inflight.load(Ordering::Relaxed),
        })
    }

    /// Where readers and writers of `c` are pointed after any cutovers.
    pub fn resolve(&self, c: &CollectionRef) -> CollectionRef {
        let aliases = self.aliases.read();
        let mut cur = c.clone();
        for _ in 0..64 {
            match aliases.get(&cur) {
                Some(next) => cur = next.clone(),
                None => break,
            }
        }
        cur
    }

    fn read_target(&self, c: &CollectionRef) -> CollectionRef {
        let resolved = self.resolve(c);
        match self.redirects.read().get(&resolved) {
            Some(r) => self.resolve(r),
            None => resolved,
        }
    }

    fn coll(&self, c: &CollectionRef) -> Arc<CollState> {
        self.colls.lock().entry(c.clone()).or_default().clone()
    }

    /// Records that `dataset_id` has data in `c`.
    pub fn note_dataset_location(&self, dataset_id: &str, c: &CollectionRef) {
        let mut m = self.dataset_locations.write();
        if !m.get(dataset_id).is_some_and(|s| s.contains(c)) {
            m.entry(dataset_id.to_owned()).or_default().insert(c.clone());
        }
    }

    /// Known locations of a dataset. Ids of the form `store/collection` name
    /// their own location.
    pub fn dataset_locations(&self, dataset_id: &str) -> Vec<CollectionRef> {
        if let Some(s) = self.dataset_locations.read().get(dataset_id) {
            return s.iter().cloned().collect();
        }
        match dataset_id.split_once('/') {
            Some((s, c)) if self.stores.read().contains_key(s) => vec![CollectionRef::new(s, c)],
            _ => Vec::new(),
        }
    }

    // ---- dispatch ----

    /// Forwards a uniform query to a wrapper serving the store's kind.
    ///
    /// Wrapper-level failures (a missing key, a bad selector) come back as an
    /// `ok: false` result; catalog and lifecycle failures are errors.
    pub async fn dispatch(&self, q: UniformQuery) -> Result<QueryResult> {
        q.validate()?;
        let origin = CollectionRef::new(&q.store_id, &q.collection);
        if !q.op.is_mutation() {
            return self.dispatch_read(q, &origin).await;
        }
        if self.config.require_envelope && q.op != QueryOp::Delete {
            if let Some(p) = &q.payload {
                if !Envelope::has_marker(p) {
                    return Err(Error::IntegrityViolation("payload did not pass protocol enforcement".into()));
                }
            }
        }
        loop {
            let target = self.resolve(&origin);
            let entry = self.entry(&target.store_id)?;
            self.check_usable(&entry, &q)?;
            let waiting = entry.waiting_writes.fetch_add(1, Ordering::SeqCst);
            if waiting >= self.config.max_queued_writes {
                entry.waiting_writes.fetch_sub(1, Ordering::SeqCst);
                return Err(Error::StoreNotReady(format!("{}: write queue full", target.store_id)));
            }
            let gate = entry.gate.read().await;
            entry.waiting_writes.fetch_sub(1, Ordering::SeqCst);
            let coll = self.coll(&target);
            let _w = coll.write_lock.lock().await;
            if self.resolve(&origin) != target {
                // Cut over while this write was queued; follow the alias.
                continue;
            }
            let desc = entry.snapshot();
            if desc.state == StoreState::Destroyed {
                return Err(Error::StoreNotFound(desc.store_id));
            }
            entry.writes.fetch_add(1, Ordering::Relaxed);
            entry.inflight.fetch_add(1, Ordering::SeqCst);
            let _g = InflightGuard(&entry.inflight);
            let mut q = q.clone();
            q.store_id = target.store_id.clone();
            q.collection = target.collection.clone();
            let res = self.mutate(&desc, &target, &coll, q).await;
            drop(gate);
            return res;
        }
    }

    async fn dispatch_read(&self, mut q: UniformQuery, origin: &CollectionRef) -> Result<QueryResult> {
        let target = self.read_target(origin);
        let entry = self.entry(&target.store_id)?;
        self.check_usable(&entry, &q)?;
        let desc = entry.snapshot();
        entry.reads.fetch_add(1, Ordering::Relaxed);
        entry.inflight.fetch_add(1, Ordering::SeqCst);
        let _g = InflightGuard(&entry.inflight);
        q.store_id = target.store_id;
        q.collection = target.collection;
        let resp = self.send(desc.kind, &desc.access_point, Some(q), None).await?;
        Ok(QueryResult::from_wire(resp))
    }

    fn check_usable(&self, entry: &StoreEntry, q: &UniformQuery) -> Result<()> {
        let d = entry.desc.read();
        match d.state {
            StoreState::Destroyed => return Err(Error::StoreNotFound(d.store_id.clone())),
            StoreState::Creating => return Err(Error::StoreNotReady(format!("{} is being created", d.store_id))),
            _ => {}
        }
        if q.txn_id.is_some() && !d.acid {
            return Err(Error::CapabilityMissing(format!("{} stores do not provide transactions", d.kind)));
        }
        Ok(())
    }

    /// Runs a mutation with the collection's write lock held.
    async fn mutate(
        &self,
        desc: &DataStoreDescriptor,
        target: &CollectionRef,
        coll: &CollState,
        q: UniformQuery,
    ) -> Result<QueryResult> {
        let watched = coll.is_watched();
        let expand = watched && q.key.is_none() && q.txn_id.is_none();
        if !expand {
            let key = q.key.clone();
            let value = match q.op {
                QueryOp::Delete => None,
                _ => q.payload.clone(),
            };
            let txn = q.txn_id.clone();
            let resp = self.send(desc.kind, &desc.access_point, Some(q), None).await?;
            if resp.ok {
                if let Some(k) = key {
                    match txn {
                        Some(t) => self.txn_changes.lock().entry(t).or_default().push((target.clone(), k, value)),
                        None if watched => coll.record(&k, value),
                        None => {}
                    }
                }
            }
            return Ok(QueryResult::from_wire(resp));
        }
        // Selector mutation on a watched collection: expand into keyed
        // operations so every change lands in the log.
        let mut select = UniformQuery::select(&target.store_id, &target.collection, q.selector.clone().unwrap_or_default());
        select.txn_id = None;
        let rows = self.send(desc.kind, &desc.access_point, Some(select), None).await?;
        if !rows.ok {
            return Ok(QueryResult::from_wire(rows));
        }
        let mut n = 0;
        for row in rows.rows.unwrap_or_default() {
            let single = match q.op {
                QueryOp::Update => UniformQuery::update(&target.store_id, &target.collection, &row.key, q.payload.clone().unwrap_or_default()),
                _ => UniformQuery::delete(&target.store_id, &target.collection, &row.key),
            };
            let value = single.payload.clone();
            let r = self.send(desc.kind, &desc.access_point, Some(single), None).await?;
            if r.ok {
                coll.record(&row.key, value);
                n += 1;
            }
        }
        Ok(QueryResult { ok: true, payload: None, rows: None, count: Some(n), error: None })
    }

    /// BEGIN/COMMIT/ABORT against a transactional store.
    pub async fn dispatch_txn(&self, store_id: &str, ctl: TxnControl) -> Result<QueryResult> {
        let entry = self.entry(store_id)?;
        let desc = entry.snapshot();
        if desc.state == StoreState::Destroyed {
            return Err(Error::StoreNotFound(store_id.to_owned()));
        }
        if !desc.acid {
            return Err(Error::CapabilityMissing(format!("{} stores do not provide transactions", desc.kind)));
        }
        let action = ctl.action;
        let txn_id = ctl.txn_id.clone();
        let resp = self.send(desc.kind, &desc.access_point, None, Some(ctl)).await?;
        if let Some(t) = txn_id {
            match action {
                TxnAction::Commit if resp.ok => {
                    let changes = self.txn_changes.lock().remove(&t).unwrap_or_default();
                    for (c, k, v) in changes {
                        let coll = self.coll(&c);
                        if coll.is_watched() {
                            coll.record(&k, v);
                        }
                    }
                }
                TxnAction::Commit | TxnAction::Abort => {
                    if resp.ok || resp.error.as_ref().is_some_and(|e| e.code == codes::TXN_CONFLICT) {
                        self.txn_changes.lock().remove(&t);
                    }
                }
                TxnAction::Begin => {}
            }
        }
        Ok(QueryResult::from_wire(resp))
    }

    /// Point-in-time contents of a collection, without following aliases.
    pub async fn snapshot(&self, c: &CollectionRef) -> Result<Vec<crate::wrappers::SnapshotEntry>> {
        let desc = self.store(&c.store_id)?;
        self.snapshot_at(desc.kind, &desc.access_point, &c.collection).await
    }

    /// Digests of every record of a collection, empty when it does not exist.
    pub async fn digest_set(&self, c: &CollectionRef) -> Result<BTreeMap<String, codec::Digest>> {
        match self.snapshot(c).await {
            Ok(entries) => Ok(entries.into_iter().map(|e| (e.key, e.digest)).collect()),
            Err(Error::UnknownCollection(_)) => Ok(BTreeMap::new()),
            Err(e) => Err(e),
        }
    }
}

#[cfg(test)]
mod tests;
