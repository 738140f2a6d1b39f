//! Access point for analytics modules.
//!
//! The engine saves and retrieves described datasets across stores of any
//! kind. It never looks inside records: bytes handed to `save` are the bytes
//! written, and `retrieve` returns stored bytes as they are. Protection
//! transforms happen in the Core, outside this module.

pub mod sample;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::offload::{CollectionRef, OffloadingApis};
use crate::protocol::{Credentials, Execution, ForwardedJob, JobData, JobDetails};
use crate::security::envelope::{Envelope, EnvelopeFlags};
use crate::security::{DataAction, SecurityEngine};
use crate::wrappers::{StoreKind, UniformQuery};

/// Store holding the dataset catalog.
pub const CATALOG_STORE: &str = "_catalog";
pub const CATALOG_COLLECTION: &str = "_datasets";
const CATALOG_OWNER: &str = "federation";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub dataset_id: String,
    /// Attribute filters this dataset answers to (source, class, time range).
    #[serde(default)]
    pub description: Map<String, Value>,
    pub locations: Vec<CollectionRef>,
}

impl DatasetDescriptor {
    /// Conjunctive equality over top-level attributes; `dataset_id` matches
    /// the id itself.
    pub fn matches(&self, filter: &Map<String, Value>) -> bool {
        filter.iter().all(|(k, v)| match k.as_str() {
            "dataset_id" => v.as_str() == Some(self.dataset_id.as_str()),
            _ => self.description.get(k) == Some(v),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub descriptor: DatasetDescriptor,
    pub records: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleRegistration {
    pub module_id: String,
    pub endpoint: String,
    pub registered_by: String,
}

/// Key of the `n`th record of a dataset.
pub fn record_key(dataset_id: &str, n: u64) -> String {
    format!("{dataset_id}#{n:010}")
}

fn is_record_of(key: &str, dataset_id: &str) -> bool {
    key.strip_prefix(dataset_id)
        .and_then(|r| r.strip_prefix('#'))
        .is_some_and(|n| n.len() == 10 && n.bytes().all(|b| b.is_ascii_digit()))
}

pub struct AnalyticsEngine {
    offload: Arc<OffloadingApis>,
    security: Arc<SecurityEngine>,
    catalog_ready: tokio::sync::Mutex<bool>,
    save_locks: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
    results: Mutex<HashMap<String, usize>>,
    revoked: Mutex<HashSet<String>>,
    modules: RwLock<BTreeMap<String, ModuleRegistration>>,
    http: reqwest::Client,
}

impl AnalyticsEngine {
    pub fn new(offload: Arc<OffloadingApis>, security: Arc<SecurityEngine>) -> Self {
        AnalyticsEngine {
            offload,
            security,
            catalog_ready: tokio::sync::Mutex::new(false),
            save_locks: Mutex::new(HashMap::new()),
            results: Mutex::new(HashMap::new()),
            revoked: Mutex::new(HashSet::new()),
            modules: RwLock::new(BTreeMap::new()),
            http: reqwest::Client::builder().timeout(Duration::from_secs(2)).build().expect("http client"),
        }
    }

    fn catalog_ref() -> CollectionRef {
        CollectionRef::new(CATALOG_STORE, CATALOG_COLLECTION)
    }

    /// Creates the catalog store on first use, next to `near` when given.
    async fn ensure_catalog(&self, near: Option<&str>) -> Result<()> {
        let mut ready = self.catalog_ready.lock().await;
        if *ready || self.offload.store(CATALOG_STORE).is_ok() {
            *ready = true;
            return Ok(());
        }
        let fed = self.offload.federation();
        let mut candidates: Vec<String> = near.into_iter().map(str::to_owned).collect();
        candidates.extend(fed.with_free().into_iter().filter(|(_, f)| *f > 0).map(|(p, _)| p.provider_id));
        let mut last = Error::CapacityExceeded("no provider can host the dataset catalog".into());
        for p in candidates {
            match self.offload.create_store(StoreKind::KeyValue, &p, 1, Some(CATALOG_STORE.into())).await {
                Ok(_) => {
                    *ready = true;
                    return Ok(());
                }
                Err(e) => last = e,
            }
        }
        Err(last)
    }

    pub async fn catalog_entry(&self, dataset_id: &str) -> Result<Option<CatalogEntry>> {
        if self.offload.store(CATALOG_STORE).is_err() {
            return Ok(None);
        }
        let c = Self::catalog_ref();
        let res = self.offload.dispatch(UniformQuery::read(&c.store_id, &c.collection, dataset_id)).await?;
        if res.is_not_found() {
            return Ok(None);
        }
        let bytes = res.into_result()?.payload.unwrap_or_default();
        decode_entry(&bytes).map(Some)
    }

    /// Every catalog entry, ordered by dataset id.
    pub async fn catalog(&self) -> Result<Vec<CatalogEntry>> {
        if self.offload.store(CATALOG_STORE).is_err() {
            return Ok(Vec::new());
        }
        let entries = match self.offload.snapshot(&Self::catalog_ref()).await {
            Err(Error::UnknownCollection(_)) => return Ok(Vec::new()),
            other => other?,
        };
        entries.iter().map(|e| decode_entry(&e.value)).collect()
    }

    async fn put_entry(&self, entry: &CatalogEntry) -> Result<()> {
        let body = serde_json::to_vec(entry).expect("catalog entry serializes");
        let env = Envelope {
            flags: EnvelopeFlags { integrity: true, ..Default::default() },
            owner: CATALOG_OWNER.into(),
            body,
        };
        let c = Self::catalog_ref();
        let q = UniformQuery::write(&c.store_id, &c.collection, &entry.descriptor.dataset_id, env.encode()?);
        self.offload.dispatch(q).await?.into_result().map(|_| ())
    }

    fn save_lock(&self, dataset_id: &str) -> Arc<tokio::sync::Mutex<()>> {
        self.save_locks.lock().entry(dataset_id.to_owned()).or_default().clone()
    }

    /// Appends records to a dataset, spreading them round-robin over its
    /// locations. Access has been checked by the Core.
    pub async fn save(&self, descriptor: &DatasetDescriptor, records: &[Vec<u8>]) -> Result<u64> {
        if descriptor.locations.is_empty() {
            return Err(Error::SchemaViolation("descriptor needs at least one location".into()));
        }
        for loc in &descriptor.locations {
            self.offload.store(&loc.store_id)?;
        }
        let lock = self.save_lock(&descriptor.dataset_id);
        let _guard = lock.lock().await;
        let near = self.offload.store(&descriptor.locations[0].store_id)?.provider_id;
        self.ensure_catalog(Some(&near)).await?;
        let mut entry = match self.catalog_entry(&descriptor.dataset_id).await? {
            Some(mut e) => {
                for l in &descriptor.locations {
                    if !e.descriptor.locations.contains(l) {
                        e.descriptor.locations.push(l.clone());
                    }
                }
                e.descriptor.description.extend(descriptor.description.clone());
                e
            }
            None => CatalogEntry { descriptor: descriptor.clone(), records: 0 },
        };
        let locs = entry.descriptor.locations.clone();
        for (i, r) in records.iter().enumerate() {
            let n = entry.records + i as u64;
            let loc = &locs[(n % locs.len() as u64) as usize];
            let key = record_key(&descriptor.dataset_id, n);
            self.offload.dispatch(UniformQuery::write(&loc.store_id, &loc.collection, &key, r.clone())).await?.into_result()?;
        }
        for l in &locs {
            self.offload.note_dataset_location(&descriptor.dataset_id, l);
        }
        entry.records += records.len() as u64;
        self.put_entry(&entry).await?;
        Ok(records.len() as u64)
    }

    /// Datasets whose description matches `filter`.
    pub async fn matching(&self, filter: &Map<String, Value>) -> Result<Vec<CatalogEntry>> {
        Ok(self.catalog().await?.into_iter().filter(|e| e.descriptor.matches(filter)).collect())
    }

    /// Stored records of every matching dataset, merged across locations.
    /// Fails closed: one unauthorized dataset denies the whole request.
    pub async fn retrieve(&self, who: &Credentials, filter: &Map<String, Value>) -> Result<Vec<Vec<u8>>> {
        let matched = self.matching(filter).await?;
        for e in &matched {
            let id = &e.descriptor.dataset_id;
            let allowed = match self.security.check_access(who, id, DataAction::Read) {
                Ok(d) => d.allowed,
                Err(Error::UnknownDataset(_)) => false,
                Err(err) => return Err(err),
            };
            if !allowed {
                return Err(Error::AccessDenied(format!("no read grant on matched dataset {id}")));
            }
        }
        let mut out = Vec::new();
        for e in &matched {
            let id = &e.descriptor.dataset_id;
            for loc in &e.descriptor.locations {
                let target = self.offload.resolve(loc);
                let entries = match self.offload.snapshot(&target).await {
                    Err(Error::UnknownCollection(_)) | Err(Error::StoreNotFound(_)) => continue,
                    other => other?,
                };
                out.extend(entries.into_iter().filter(|s| is_record_of(&s.key, id)).map(|s| s.value));
            }
        }
        Ok(out)
    }

    /// Forgets an analytics request: its results can no longer be fetched.
    pub fn revoke_request(&self, request_id: &str) -> Result<()> {
        self.results.lock().remove(request_id);
        self.revoked.lock().insert(request_id.to_owned());
        Ok(())
    }

    pub fn is_revoked(&self, request_id: &str) -> bool {
        self.revoked.lock().contains(request_id)
    }

    /// Number of records a retrieve request returned, while not revoked.
    pub fn result_size(&self, request_id: &str) -> Option<usize> {
        self.results.lock().get(request_id).copied()
    }

    pub async fn register_module(&self, who: &Credentials, module_id: &str, endpoint: &str) -> Result<ModuleRegistration> {
        if !who.is_admin() {
            return Err(Error::AccessDenied("module registration requires the admin role".into()));
        }
        if module_id.trim().is_empty() {
            return Err(Error::SchemaViolation("module_id must be non-empty".into()));
        }
        if self.modules.read().contains_key(module_id) {
            return Err(Error::DuplicateId(module_id.to_owned()));
        }
        self.probe(endpoint).await?;
        let reg = ModuleRegistration {
            module_id: module_id.to_owned(),
            endpoint: endpoint.to_owned(),
            registered_by: who.principal_id.clone(),
        };
        let mut m = self.modules.write();
        if m.contains_key(module_id) {
            return Err(Error::DuplicateId(module_id.to_owned()));
        }
        m.insert(module_id.to_owned(), reg.clone());
        Ok(reg)
    }

    async fn probe(&self, endpoint: &str) -> Result<()> {
        if endpoint.starts_with("local://") {
            return Ok(());
        }
        if !(endpoint.starts_with("http://") || endpoint.starts_with("https://")) {
            return Err(Error::Unreachable(format!("{endpoint}: unsupported scheme")));
        }
        match self.http.get(endpoint).send().await {
            Ok(r) if r.status().is_success() => Ok(()),
            Ok(r) => Err(Error::Unreachable(format!("{endpoint}: probe answered {}", r.status()))),
            Err(e) => Err(Error::Unreachable(format!("{endpoint}: {e}"))),
        }
    }

    pub fn modules(&self) -> Vec<ModuleRegistration> {
        self.modules.read().values().cloned().collect()
    }

    pub async fn execute(&self, job: &ForwardedJob) -> Result<Execution> {
        let request_id = job.job_id.as_str();
        match job.typed()? {
            JobDetails::AnalyticsSave(d) => {
                let records: Vec<Vec<u8>> = match &job.data {
                    Some(JobData::Records { records }) => records.clone(),
                    Some(JobData::Bytes { base64 }) => vec![base64.clone()],
                    _ => d.records.iter().map(|r| serde_json::to_vec(r).expect("json serializes")).collect(),
                };
                let n = self.save(&d.descriptor, &records).await?;
                Ok(Execution::done(JobData::Document {
                    value: json!({ "dataset_id": d.descriptor.dataset_id, "count": n }),
                }))
            }
            JobDetails::AnalyticsRetrieve(d) => {
                if self.is_revoked(request_id) {
                    return Err(Error::AccessDenied(format!("request {request_id} was revoked")));
                }
                let records = self.retrieve(&job.initiator, &d.description).await?;
                self.results.lock().insert(request_id.to_owned(), records.len());
                Ok(Execution::done(JobData::Records { records }))
            }
            _ => Err(Error::MalformedRequest(format!("{} is not handled by the analytics engine", job.kind))),
        }
    }
}

fn decode_entry(bytes: &[u8]) -> Result<CatalogEntry> {
    let body = if Envelope::has_marker(bytes) { Envelope::decode(bytes)?.body } else { bytes.to_vec() };
    serde_json::from_slice(&body).map_err(|e| Error::IntegrityViolation(format!("catalog entry: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_keys_do_not_collide_across_datasets() {
        assert!(is_record_of(&record_key("a", 3), "a"));
        assert!(!is_record_of(&record_key("a#b", 3), "a"));
        assert!(!is_record_of("a#12", "a"));
        let mut keys: Vec<String> = (0..12).map(|n| record_key("d", n)).collect();
        let sorted = {
            let mut k = keys.clone();
            k.sort();
            k
        };
        assert_eq!(keys, sorted);
        keys.dedup();
        assert_eq!(keys.len(), 12);
    }

    #[test]
    fn descriptor_matching_is_conjunctive() {
        let d = DatasetDescriptor {
            dataset_id: "mon".into(),
            description: json!({"source": "probe", "class": "monitoring"}).as_object().unwrap().clone(),
            locations: vec![],
        };
        let f = |v: Value| v.as_object().unwrap().clone();
        assert!(d.matches(&f(json!({}))));
        assert!(d.matches(&f(json!({"source": "probe"}))));
        assert!(d.matches(&f(json!({"source": "probe", "dataset_id": "mon"}))));
        assert!(!d.matches(&f(json!({"source": "probe", "class": "application"}))));
        assert!(!d.matches(&f(json!({"region": "eu"}))));
    }
}
