//! Embedded data-store engines and the host table that addresses them.
//!
//! Each engine keeps its data in `instances` hash shards, one per machine the
//! store runs on. The three engines expose deliberately different native
//! APIs; wrappers translate uniform queries into them.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::hash::{Hash, Hasher};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde_json::{Map, Value};

use super::StoreKind;
use crate::security::envelope::Envelope;

fn shard_of(key: &str, n: usize) -> usize {
    let mut h = DefaultHasher::new();
    key.hash(&mut h);
    (h.finish() % n as u64) as usize
}

/// Hash-sharded collections of keyed values.
pub struct Sharded<V> {
    state: RwLock<ShardState<V>>,
}

struct ShardState<V> {
    shards: Vec<BTreeMap<String, BTreeMap<String, V>>>,
    collections: BTreeSet<String>,
}

impl<V: Clone> Sharded<V> {
    pub fn new(instances: usize) -> Self {
        let n = instances.max(1);
        Sharded {
            state: RwLock::new(ShardState { shards: (0..n).map(|_| BTreeMap::new()).collect(), collections: BTreeSet::new() }),
        }
    }

    pub fn instances(&self) -> usize {
        self.state.read().shards.len()
    }

    pub fn get(&self, coll: &str, key: &str) -> Option<V> {
        let st = self.state.read();
        let n = st.shards.len();
        st.shards[shard_of(key, n)].get(coll).and_then(|c| c.get(key)).cloned()
    }

    pub fn contains(&self, coll: &str, key: &str) -> bool {
        self.get(coll, key).is_some()
    }

    pub fn put(&self, coll: &str, key: &str, v: V) -> Option<V> {
        let mut st = self.state.write();
        put_locked(&mut st, coll, key, v)
    }

    pub fn remove(&self, coll: &str, key: &str) -> Option<V> {
        let mut st = self.state.write();
        remove_locked(&mut st, coll, key)
    }

    pub fn has_collection(&self, coll: &str) -> bool {
        self.state.read().collections.contains(coll)
    }

    pub fn collections(&self) -> Vec<String> {
        self.state.read().collections.iter().cloned().collect()
    }

    pub fn ensure_collection(&self, coll: &str) {
        self.state.write().collections.insert(coll.to_owned());
    }

    pub fn drop_collection(&self, coll: &str) {
        let mut st = self.state.write();
        st.collections.remove(coll);
        for s in &mut st.shards {
            s.remove(coll);
        }
    }

    /// Point-in-time copy of a collection, ordered by key.
    pub fn scan(&self, coll: &str) -> Option<Vec<(String, V)>> {
        let st = self.state.read();
        if !st.collections.contains(coll) {
            return None;
        }
        let mut out: Vec<(String, V)> = st
            .shards
            .iter()
            .filter_map(|s| s.get(coll))
            .flat_map(|c| c.iter().map(|(k, v)| (k.clone(), v.clone())))
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        Some(out)
    }

    pub fn len(&self) -> usize {
        self.state.read().shards.iter().flat_map(|s| s.values()).map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Redistributes every key over `instances` shards.
    pub fn rebalance(&self, instances: usize) {
        let n = instances.max(1);
        let mut st = self.state.write();
        let mut shards: Vec<BTreeMap<String, BTreeMap<String, V>>> = (0..n).map(|_| BTreeMap::new()).collect();
        for shard in std::mem::take(&mut st.shards) {
            for (coll, entries) in shard {
                for (k, v) in entries {
                    let i = shard_of(&k, n);
                    shards[i].entry(coll.clone()).or_default().insert(k, v);
                }
            }
        }
        st.shards = shards;
    }

    /// Applies a batch under a single write lock after `check` approves it
    /// against the current contents. Readers see all of it or none.
    pub fn apply_batch<E>(
        &self,
        check: impl FnOnce(&dyn Fn(&str, &str) -> bool) -> Result<(), E>,
        ops: Vec<BatchOp<V>>,
    ) -> Result<(), E> {
        let mut st = self.state.write();
        {
            let view = |c: &str, k: &str| {
                let n = st.shards.len();
                st.shards[shard_of(k, n)].get(c).is_some_and(|m| m.contains_key(k))
            };
            check(&view)?;
        }
        for op in ops {
            match op {
                BatchOp::Put(c, k, v) => {
                    put_locked(&mut st, &c, &k, v);
                }
                BatchOp::Remove(c, k) => {
                    remove_locked(&mut st, &c, &k);
                }
            }
        }
        Ok(())
    }
}

fn put_locked<V>(st: &mut ShardState<V>, coll: &str, key: &str, v: V) -> Option<V> {
    st.collections.insert(coll.to_owned());
    let n = st.shards.len();
    st.shards[shard_of(key, n)].entry(coll.to_owned()).or_default().insert(key.to_owned(), v)
}

fn remove_locked<V>(st: &mut ShardState<V>, coll: &str, key: &str) -> Option<V> {
    let n = st.shards.len();
    st.shards[shard_of(key, n)].get_mut(coll).and_then(|c| c.remove(key))
}

pub enum BatchOp<V> {
    Put(String, String, V),
    Remove(String, String),
}

/// Byte-map store: buckets of opaque values.
pub struct KvEngine {
    data: Sharded<Vec<u8>>,
}

impl KvEngine {
    pub fn get(&self, bucket: &str, key: &str) -> Option<Vec<u8>> {
        self.data.get(bucket, key)
    }

    /// Returns true when the key was newly created.
    pub fn set(&self, bucket: &str, key: &str, value: Vec<u8>) -> bool {
        self.data.put(bucket, key, value).is_none()
    }

    pub fn del(&self, bucket: &str, key: &str) -> bool {
        self.data.remove(bucket, key).is_some()
    }

    pub fn entries(&self, bucket: &str) -> Option<Vec<(String, Vec<u8>)>> {
        self.data.scan(bucket)
    }
}

/// A stored document: the exact bytes written plus their parsed top-level
/// fields when the bytes are a JSON object, either bare or inside an
/// unencrypted protection envelope.
#[derive(Debug, Clone)]
pub struct StoredDoc {
    pub raw: Vec<u8>,
    pub fields: Option<Map<String, Value>>,
}

fn object_fields(bytes: &[u8]) -> Option<Map<String, Value>> {
    match serde_json::from_slice::<Value>(bytes) {
        Ok(Value::Object(m)) => Some(m),
        _ => None,
    }
}

impl StoredDoc {
    pub fn new(raw: Vec<u8>) -> Self {
        let fields = if Envelope::has_marker(&raw) {
            Envelope::decode(&raw).ok().filter(|e| !e.flags.encrypted).and_then(|e| object_fields(&e.body))
        } else {
            object_fields(&raw)
        };
        StoredDoc { raw, fields }
    }

    pub fn matches(&self, filter: &Map<String, Value>) -> bool {
        match &self.fields {
            Some(f) => filter.iter().all(|(k, v)| f.get(k) == Some(v)),
            None => filter.is_empty(),
        }
    }
}

/// Document store: collections of JSON-ish documents addressed by `_id`.
pub struct DocumentEngine {
    docs: Sharded<StoredDoc>,
}

impl DocumentEngine {
    pub fn find_by_id(&self, coll: &str, id: &str) -> Option<StoredDoc> {
        self.docs.get(coll, id)
    }

    pub fn upsert(&self, coll: &str, id: &str, raw: Vec<u8>) -> bool {
        self.docs.put(coll, id, StoredDoc::new(raw)).is_none()
    }

    pub fn remove(&self, coll: &str, id: &str) -> bool {
        self.docs.remove(coll, id).is_some()
    }

    pub fn find(&self, coll: &str, filter: &Map<String, Value>) -> Vec<(String, StoredDoc)> {
        self.docs
            .scan(coll)
            .unwrap_or_default()
            .into_iter()
            .filter(|(_, d)| d.matches(filter))
            .collect()
    }

    pub fn all(&self, coll: &str) -> Option<Vec<(String, StoredDoc)>> {
        self.docs.scan(coll)
    }
}

#[derive(Debug, Clone)]
pub enum TxnOp {
    Insert { table: String, pk: String, row: Vec<u8> },
    Update { table: String, pk: String, row: Vec<u8> },
    Delete { table: String, pk: String },
}

#[derive(Debug, Default)]
struct Txn {
    ops: Vec<TxnOp>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TabularError {
    NoSuchTxn(String),
    Conflict(String),
}

/// Row store with transactions. Commits are serialized by a single commit
/// lock and applied atomically; uncommitted work is invisible to others.
pub struct TabularEngine {
    rows: Sharded<StoredDoc>,
    txns: Mutex<HashMap<String, Txn>>,
    commit_lock: Mutex<()>,
    next_txn: AtomicU64,
}

impl TabularEngine {
    pub fn begin(&self) -> String {
        let id = format!("txn-{}", self.next_txn.fetch_add(1, Ordering::Relaxed) + 1);
        self.txns.lock().insert(id.clone(), Txn::default());
        id
    }

    pub fn has_txn(&self, txn: &str) -> bool {
        self.txns.lock().contains_key(txn)
    }

    /// Row as seen by `txn` (its own pending writes on top of committed data).
    pub fn select(&self, table: &str, pk: &str, txn: Option<&str>) -> Result<Option<StoredDoc>, TabularError> {
        let mut row = self.rows.get(table, pk);
        if let Some(t) = txn {
            let txns = self.txns.lock();
            let pending = txns.get(t).ok_or_else(|| TabularError::NoSuchTxn(t.to_owned()))?;
            for op in &pending.ops {
                match op {
                    TxnOp::Insert { table: tb, pk: k, row: r } | TxnOp::Update { table: tb, pk: k, row: r }
                        if tb == table && k == pk =>
                    {
                        row = Some(StoredDoc::new(r.clone()))
                    }
                    TxnOp::Delete { table: tb, pk: k } if tb == table && k == pk => row = None,
                    _ => {}
                }
            }
        }
        Ok(row)
    }

    pub fn select_where(
        &self,
        table: &str,
        filter: &Map<String, Value>,
        txn: Option<&str>,
    ) -> Result<Vec<(String, StoredDoc)>, TabularError> {
        let mut keys: BTreeSet<String> =
            self.rows.scan(table).unwrap_or_default().into_iter().map(|(k, _)| k).collect();
        if let Some(t) = txn {
            let txns = self.txns.lock();
            let pending = txns.get(t).ok_or_else(|| TabularError::NoSuchTxn(t.to_owned()))?;
            for op in &pending.ops {
                match op {
                    TxnOp::Insert { table: tb, pk, .. } | TxnOp::Update { table: tb, pk, .. } if tb == table => {
                        keys.insert(pk.clone());
                    }
                    _ => {}
                }
            }
        }
        let mut out = Vec::new();
        for k in keys {
            if let Some(r) = self.select(table, &k, txn)? {
                if r.matches(filter) {
                    out.push((k, r));
                }
            }
        }
        Ok(out)
    }

    /// Executes (no txn) or buffers (txn) a write. Returns whether the row
    /// existed beforehand.
    pub fn execute(&self, op: TxnOp, txn: Option<&str>) -> Result<(), TabularError> {
        match txn {
            Some(t) => {
                let mut txns = self.txns.lock();
                let pending = txns.get_mut(t).ok_or_else(|| TabularError::NoSuchTxn(t.to_owned()))?;
                pending.ops.push(op);
                Ok(())
            }
            None => self.apply(vec![op]),
        }
    }

    pub fn commit(&self, txn: &str) -> Result<usize, TabularError> {
        let pending = self.txns.lock().remove(txn).ok_or_else(|| TabularError::NoSuchTxn(txn.to_owned()))?;
        let n = pending.ops.len();
        self.apply(pending.ops)?;
        Ok(n)
    }

    pub fn abort(&self, txn: &str) -> Result<usize, TabularError> {
        let pending = self.txns.lock().remove(txn).ok_or_else(|| TabularError::NoSuchTxn(txn.to_owned()))?;
        Ok(pending.ops.len())
    }

    /// Validates the op list against committed state and applies it as one
    /// unit. Updates and deletes of rows that do not exist at commit time
    /// abort the whole batch.
    fn apply(&self, ops: Vec<TxnOp>) -> Result<(), TabularError> {
        let _c = self.commit_lock.lock();
        let plan = ops.clone();
        let batch = ops
            .into_iter()
            .map(|op| match op {
                TxnOp::Insert { table, pk, row } | TxnOp::Update { table, pk, row } => {
                    BatchOp::Put(table, pk, StoredDoc::new(row))
                }
                TxnOp::Delete { table, pk } => BatchOp::Remove(table, pk),
            })
            .collect();
        self.rows.apply_batch(
            |exists| {
                let mut overlay: HashMap<(&str, &str), bool> = HashMap::new();
                for op in &plan {
                    let (table, pk, needs_row, leaves_row) = match op {
                        TxnOp::Insert { table, pk, .. } => (table, pk, false, true),
                        TxnOp::Update { table, pk, .. } => (table, pk, true, true),
                        TxnOp::Delete { table, pk } => (table, pk, true, false),
                    };
                    let present = *overlay
                        .get(&(table.as_str(), pk.as_str()))
                        .unwrap_or(&exists(table, pk));
                    if needs_row && !present {
                        return Err(TabularError::Conflict(format!("{table}/{pk} does not exist")));
                    }
                    overlay.insert((table, pk), leaves_row);
                }
                Ok(())
            },
            batch,
        )
    }

    pub fn rows(&self, table: &str) -> Option<Vec<(String, StoredDoc)>> {
        self.rows.scan(table)
    }
}

pub enum Engine {
    KeyValue(KvEngine),
    Document(DocumentEngine),
    Tabular(TabularEngine),
}

impl Engine {
    pub fn new(kind: StoreKind, instances: usize) -> Engine {
        match kind {
            StoreKind::KeyValue => Engine::KeyValue(KvEngine { data: Sharded::new(instances) }),
            StoreKind::Document => Engine::Document(DocumentEngine { docs: Sharded::new(instances) }),
            StoreKind::Tabular => Engine::Tabular(TabularEngine {
                rows: Sharded::new(instances),
                txns: Mutex::new(HashMap::new()),
                commit_lock: Mutex::new(()),
                next_txn: AtomicU64::new(0),
            }),
        }
    }

    pub fn kind(&self) -> StoreKind {
        match self {
            Engine::KeyValue(_) => StoreKind::KeyValue,
            Engine::Document(_) => StoreKind::Document,
            Engine::Tabular(_) => StoreKind::Tabular,
        }
    }

    pub fn record_count(&self) -> usize {
        match self {
            Engine::KeyValue(e) => e.data.len(),
            Engine::Document(e) => e.docs.len(),
            Engine::Tabular(e) => e.rows.len(),
        }
    }

    pub fn instances(&self) -> usize {
        match self {
            Engine::KeyValue(e) => e.data.instances(),
            Engine::Document(e) => e.docs.instances(),
            Engine::Tabular(e) => e.rows.instances(),
        }
    }

    pub fn rebalance(&self, instances: usize) {
        match self {
            Engine::KeyValue(e) => e.data.rebalance(instances),
            Engine::Document(e) => e.docs.rebalance(instances),
            Engine::Tabular(e) => e.rows.rebalance(instances),
        }
    }

    pub fn has_collection(&self, coll: &str) -> bool {
        match self {
            Engine::KeyValue(e) => e.data.has_collection(coll),
            Engine::Document(e) => e.docs.has_collection(coll),
            Engine::Tabular(e) => e.rows.has_collection(coll),
        }
    }

    pub fn collections(&self) -> Vec<String> {
        match self {
            Engine::KeyValue(e) => e.data.collections(),
            Engine::Document(e) => e.docs.collections(),
            Engine::Tabular(e) => e.rows.collections(),
        }
    }

    pub fn ensure_collection(&self, coll: &str) {
        match self {
            Engine::KeyValue(e) => e.data.ensure_collection(coll),
            Engine::Document(e) => e.docs.ensure_collection(coll),
            Engine::Tabular(e) => e.rows.ensure_collection(coll),
        }
    }

    pub fn drop_collection(&self, coll: &str) {
        match self {
            Engine::KeyValue(e) => e.data.drop_collection(coll),
            Engine::Document(e) => e.docs.drop_collection(coll),
            Engine::Tabular(e) => e.rows.drop_collection(coll),
        }
    }

    /// Raw `(key, value)` pairs of a collection, ordered by key.
    pub fn dump(&self, coll: &str) -> Option<Vec<(String, Vec<u8>)>> {
        match self {
            Engine::KeyValue(e) => e.entries(coll),
            Engine::Document(e) => e.all(coll).map(|v| v.into_iter().map(|(k, d)| (k, d.raw)).collect()),
            Engine::Tabular(e) => e.rows(coll).map(|v| v.into_iter().map(|(k, d)| (k, d.raw)).collect()),
        }
    }
}

/// The simulated machines hosting store engines, addressed by access point.
#[derive(Default)]
pub struct EngineHost {
    engines: RwLock<HashMap<String, Arc<Engine>>>,
    next: AtomicU64,
}

impl EngineHost {
    pub fn new() -> Self {
        Self::default()
    }

    /// Boots a new engine and returns its access point.
    pub fn provision(&self, kind: StoreKind, provider_id: &str, instances: usize) -> String {
        let n = self.next.fetch_add(1, Ordering::Relaxed) + 1;
        let ap = format!("sim://{provider_id}/{}-{n}", kind.as_str());
        self.engines.write().insert(ap.clone(), Arc::new(Engine::new(kind, instances)));
        ap
    }

    pub fn get(&self, access_point: &str) -> Option<Arc<Engine>> {
        self.engines.read().get(access_point).cloned()
    }

    pub fn decommission(&self, access_point: &str) -> bool {
        self.engines.write().remove(access_point).is_some()
    }

    pub fn record_count(&self, kind: StoreKind) -> usize {
        self.engines.read().values().filter(|e| e.kind() == kind).map(|e| e.record_count()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rebalance_keeps_every_key() {
        let s: Sharded<u32> = Sharded::new(1);
        for i in 0..500 {
            s.put("c", &format!("k{i}"), i);
        }
        s.rebalance(3);
        assert_eq!(s.instances(), 3);
        for i in 0..500 {
            assert_eq!(s.get("c", &format!("k{i}")), Some(i));
        }
        s.rebalance(1);
        assert_eq!(s.len(), 500);
    }

    #[test]
    fn tabular_abort_and_conflict() {
        let Engine::Tabular(t) = Engine::new(StoreKind::Tabular, 1) else { unreachable!() };
        t.execute(TxnOp::Insert { table: "t".into(), pk: "a".into(), row: b"1".to_vec() }, None).unwrap();
        let x = t.begin();
        t.execute(TxnOp::Insert { table: "t".into(), pk: "b".into(), row: b"2".to_vec() }, Some(&x)).unwrap();
        assert!(t.select("t", "b", None).unwrap().is_none());
        assert!(t.select("t", "b", Some(&x)).unwrap().is_some());
        t.abort(&x).unwrap();
        assert!(t.select("t", "b", None).unwrap().is_none());

        let y = t.begin();
        let z = t.begin();
        t.execute(TxnOp::Delete { table: "t".into(), pk: "a".into() }, Some(&y)).unwrap();
        t.execute(TxnOp::Update { table: "t".into(), pk: "a".into(), row: b"3".to_vec() }, Some(&z)).unwrap();
        t.commit(&y).unwrap();
        assert!(matches!(t.commit(&z), Err(TabularError::Conflict(_))));
        assert!(t.select("t", "a", None).unwrap().is_none());
        assert!(matches!(t.commit("txn-99"), Err(TabularError::NoSuchTxn(_))));
    }
}
