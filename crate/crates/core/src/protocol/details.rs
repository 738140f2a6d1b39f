//! Per-kind `job_details` schemas.
//!
//! Every job kind has one schema. Unknown fields are ignored so the gateway can
//! inject `job_id` without breaking validation downstream.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::kind::JobKind;
use crate::analytics::DatasetDescriptor;
use crate::error::{Error, Result};
use crate::offload::{CollectionRef, MachineDescriptor, ReplicationMode};
use crate::security::{DataAction, DataClass, PolicyUpdate};
use crate::wrappers::StoreKind;

pub const DEFAULT_COLLECTION: &str = "default";

fn default_collection() -> String {
    DEFAULT_COLLECTION.to_owned()
}

/// read / write / update / delete.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataDetails {
    pub store_id: String,
    #[serde(default = "default_collection")]
    pub collection: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selector: Option<Map<String, Value>>,
    /// Dataset governed by this request; defaults to `store_id/collection`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_id: Option<String>,
    /// Metadata travelling with the data; `data_class` drives protection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<Value>,
    /// Keep a PUT channel open instead of carrying the payload in the POST.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub stream: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub txn_id: Option<String>,
}

impl DataDetails {
    pub fn dataset_id(&self) -> String {
        self.dataset_id.clone().unwrap_or_else(|| format!("{}/{}", self.store_id, self.collection))
    }

    pub fn collection_ref(&self) -> CollectionRef {
        CollectionRef { store_id: self.store_id.clone(), collection: self.collection.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateStoreDetails {
    pub kind: StoreKind,
    pub provider_id: String,
    #[serde(default = "one")]
    pub machines: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub store_id: Option<String>,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreRef {
    pub store_id: String,
}

/// Horizontal scaling: either extend the store onto `machines` or release
/// `release` of its instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleDetails {
    pub store_id: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub machines: Vec<MachineDescriptor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub release: Option<u32>,
    /// Current access point of the store, checked against the catalog when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub access_point: Option<String>,
    /// Credentials for the store and the machines; opaque to the gateway.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credentials: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelocateDetails {
    pub store_id: String,
    pub provider_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MigrateDetails {
    pub source: CollectionRef,
    pub destination: CollectionRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateDetails {
    pub source: CollectionRef,
    pub destination: CollectionRef,
    #[serde(default)]
    pub mode: ReplicationMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffloadDetails {
    pub store_id: String,
    /// Observed queue depth; when absent the live gauge is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queue_depth: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublishDetails {
    pub dataset_id: String,
    #[serde(default)]
    pub audience: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRef {
    pub dataset_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessCheckDetails {
    pub dataset_id: String,
    pub action: DataAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolQueryDetails {
    pub data_class: DataClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub owner: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticsSaveDetails {
    pub descriptor: DatasetDescriptor,
    /// Inline records (JSON documents); alternatively streamed over PUT.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub records: Vec<Value>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub stream: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticsRetrieveDetails {
    #[serde(default)]
    pub description: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatusScope {
    Job,
    Stores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusQueryDetails {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_job_id: Option<String>,
    #[serde(default = "default_scope")]
    pub scope: StatusScope,
}

fn default_scope() -> StatusScope {
    StatusScope::Job
}

/// Typed view over a job's details.
#[derive(Debug, Clone, PartialEq)]
pub enum JobDetails {
    Data(DataDetails),
    CreateStore(CreateStoreDetails),
    DestroyStore(StoreRef),
    ScaleStore(ScaleDetails),
    RelocateStore(RelocateDetails),
    Migrate(MigrateDetails),
    Replicate(ReplicateDetails),
    Offload(OffloadDetails),
    Publish(PublishDetails),
    Transform(DatasetRef),
    PolicyUpdate(PolicyUpdate),
    AccessCheck(AccessCheckDetails),
    ProtocolQuery(ProtocolQueryDetails),
    AnalyticsSave(AnalyticsSaveDetails),
    AnalyticsRetrieve(AnalyticsRetrieveDetails),
    StatusQuery(StatusQueryDetails),
}

fn typed<T: DeserializeOwned>(kind: JobKind, details: &Value) -> Result<T> {
    serde_json::from_value(details.clone())
        .map_err(|e| Error::SchemaViolation(format!("{kind}: {e}")))
}

fn non_empty(kind: JobKind, field: &str, v: &str) -> Result<()> {
    if v.trim().is_empty() {
        return Err(Error::SchemaViolation(format!("{kind}: `{field}` must be non-empty")));
    }
    Ok(())
}

impl JobDetails {
    /// Validates `details` against the schema of `kind`.
    pub fn parse(kind: JobKind, details: &Value) -> Result<JobDetails> {
        if !details.is_object() {
            return Err(Error::SchemaViolation(format!("{kind}: job_details must be an object")));
        }
        use JobKind::*;
        let parsed = match kind {
            Read | Write | Update | Delete => {
                let d: DataDetails = typed(kind, details)?;
                non_empty(kind, "store_id", &d.store_id)?;
                non_empty(kind, "collection", &d.collection)?;
                match (kind, d.key.is_some(), d.selector.is_some()) {
                    (Write, false, _) => {
                        return Err(Error::SchemaViolation("write: `key` is required".into()))
                    }
                    (_, true, true) | (_, false, false) => {
                        return Err(Error::SchemaViolation(format!(
                            "{kind}: exactly one of `key` and `selector` is required"
                        )))
                    }
                    _ => {}
                }
                if d.stream && !kind.accepts_stream() {
                    return Err(Error::SchemaViolation(format!("{kind}: cannot stream")));
                }
                JobDetails::Data(d)
            }
            CreateStore => {
                let d: CreateStoreDetails = typed(kind, details)?;
                non_empty(kind, "provider_id", &d.provider_id)?;
                if d.machines == 0 {
                    return Err(Error::SchemaViolation("create_store: `machines` must be >= 1".into()));
                }
                JobDetails::CreateStore(d)
            }
            DestroyStore => {
                let d: StoreRef = typed(kind, details)?;
                non_empty(kind, "store_id", &d.store_id)?;
                JobDetails::DestroyStore(d)
            }
            ScaleStore => {
                let d: ScaleDetails = typed(kind, details)?;
                non_empty(kind, "store_id", &d.store_id)?;
                match (d.machines.is_empty(), d.release) {
                    (true, None) => {
                        return Err(Error::SchemaViolation(
                            "scale_store: a non-empty list of `machines` is required".into(),
                        ))
                    }
                    (false, Some(_)) => {
                        return Err(Error::SchemaViolation(
                            "scale_store: `machines` and `release` are exclusive".into(),
                        ))
                    }
                    (true, Some(0)) => {
                        return Err(Error::SchemaViolation("scale_store: `release` must be >= 1".into()))
                    }
                    _ => {}
                }
                JobDetails::ScaleStore(d)
            }
            RelocateStore => {
                let d: RelocateDetails = typed(kind, details)?;
                non_empty(kind, "store_id", &d.store_id)?;
                non_empty(kind, "provider_id", &d.provider_id)?;
                JobDetails::RelocateStore(d)
            }
            Migrate => JobDetails::Migrate(typed(kind, details)?),
            Replicate => JobDetails::Replicate(typed(kind, details)?),
            Offload => {
                let d: OffloadDetails = typed(kind, details)?;
                non_empty(kind, "store_id", &d.store_id)?;
                JobDetails::Offload(d)
            }
            Publish => {
                let d: PublishDetails = typed(kind, details)?;
                non_empty(kind, "dataset_id", &d.dataset_id)?;
                JobDetails::Publish(d)
            }
            Anonymize | Encrypt => {
                let d: DatasetRef = typed(kind, details)?;
                non_empty(kind, "dataset_id", &d.dataset_id)?;
                JobDetails::Transform(d)
            }
            PolicyUpdate => JobDetails::PolicyUpdate(typed(kind, details)?),
            AccessCheck => JobDetails::AccessCheck(typed(kind, details)?),
            ProtocolQuery => JobDetails::ProtocolQuery(typed(kind, details)?),
            AnalyticsSave => {
                let d: AnalyticsSaveDetails = typed(kind, details)?;
                non_empty(kind, "descriptor.dataset_id", &d.descriptor.dataset_id)?;
                if d.descriptor.locations.is_empty() {
                    return Err(Error::SchemaViolation(
                        "analytics_save: descriptor needs at least one location".into(),
                    ));
                }
                JobDetails::AnalyticsSave(d)
            }
            AnalyticsRetrieve => JobDetails::AnalyticsRetrieve(typed(kind, details)?),
            StatusQuery => {
                let d: StatusQueryDetails = typed(kind, details)?;
                if d.scope == StatusScope::Job && d.target_job_id.is_none() {
                    return Err(Error::SchemaViolation(
                        "status_query: `target_job_id` is required for scope job".into(),
                    ));
                }
                JobDetails::StatusQuery(d)
            }
        };
        Ok(parsed)
    }

    /// Whether this job keeps a PUT channel open after dispatch begins.
    pub fn is_streaming(&self) -> bool {
        match self {
            JobDetails::Data(d) => d.stream,
            JobDetails::AnalyticsSave(d) => d.stream,
            _ => false,
        }
    }
}
