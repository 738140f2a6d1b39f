//! Store wrappers: translate uniform queries into one store kind's native
//! operations and normalise the answers.
//!
//! A wrapper is a client of the stores it serves. The [`Wrapper`] trait is the
//! wire protocol; [`LocalWrapper`] runs the reference translators in-process
//! and [`HttpWrapper`] reaches a wrapper over HTTP (`POST /handle`,
//! `GET /capabilities`, `GET /health`, `POST /snapshot`).

pub mod engine;
mod http;
mod local;

use std::fmt;
use std::str::FromStr;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub use http::{router, HttpWrapper};
pub use local::LocalWrapper;

use crate::codec::{self, Digest};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoreKind {
    KeyValue,
    Document,
    Tabular,
}

impl StoreKind {
    pub const ALL: [StoreKind; 3] = [StoreKind::KeyValue, StoreKind::Document, StoreKind::Tabular];

    pub fn as_str(self) -> &'static str {
        match self {
            StoreKind::KeyValue => "key_value",
            StoreKind::Document => "document",
            StoreKind::Tabular => "tabular",
        }
    }
}

impl fmt::Display for StoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StoreKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::SchemaViolation(format!("unknown store kind `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapabilitySet {
    pub transactions: bool,
    pub scan: bool,
    pub stream: bool,
}

impl CapabilitySet {
    pub fn for_kind(kind: StoreKind) -> Self {
        match kind {
            StoreKind::KeyValue | StoreKind::Document => {
                CapabilitySet { transactions: false, scan: true, stream: true }
            }
            StoreKind::Tabular => CapabilitySet { transactions: true, scan: true, stream: false },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryOp {
    Read,
    Write,
    Update,
    Delete,
}

impl QueryOp {
    pub fn is_mutation(self) -> bool {
        !matches!(self, QueryOp::Read)
    }
}

/// One request in the common glossary, valid against any store kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformQuery {
    pub op: QueryOp,
    pub store_id: String,
    pub collection: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selector: Option<Map<String, Value>>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "codec::b64_opt")]
    pub payload: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub txn_id: Option<String>,
}

impl UniformQuery {
    fn base(op: QueryOp, store_id: &str, collection: &str) -> Self {
        UniformQuery {
            op,
            store_id: store_id.to_owned(),
            collection: collection.to_owned(),
            key: None,
            selector: None,
            payload: None,
            txn_id: None,
        }
    }

    pub fn read(store_id: &str, collection: &str, key: &str) -> Self {
        UniformQuery { key: Some(key.to_owned()), ..Self::base(QueryOp::Read, store_id, collection) }
    }

    pub fn write(store_id: &str, collection: &str, key: &str, payload: impl Into<Vec<u8>>) -> Self {
        UniformQuery {
            key: Some(key.to_owned()),
            payload: Some(payload.into()),
            ..Self::base(QueryOp::Write, store_id, collection)
        }
    }

    pub fn update(store_id: &str, collection: &str, key: &str, payload: impl Into<Vec<u8>>) -> Self {
        UniformQuery {
            key: Some(key.to_owned()),
            payload: Some(payload.into()),
            ..Self::base(QueryOp::Update, store_id, collection)
        }
    }

    pub fn delete(store_id: &str, collection: &str, key: &str) -> Self {
        UniformQuery { key: Some(key.to_owned()), ..Self::base(QueryOp::Delete, store_id, collection) }
    }

    pub fn select(store_id: &str, collection: &str, selector: Map<String, Value>) -> Self {
        UniformQuery { selector: Some(selector), ..Self::base(QueryOp::Read, store_id, collection) }
    }

    pub fn in_txn(mut self, txn_id: &str) -> Self {
        self.txn_id = Some(txn_id.to_owned());
        self
    }

    /// Key xor selector; payload iff write/update; writes are keyed.
    pub fn validate(&self) -> Result<()> {
        if self.store_id.is_empty() || self.collection.is_empty() {
            return Err(Error::SchemaViolation("store_id and collection are required".into()));
        }
        if self.key.is_some() == self.selector.is_some() {
            return Err(Error::SchemaViolation("exactly one of key and selector is required".into()));
        }
        if self.key.as_deref() == Some("") {
            return Err(Error::SchemaViolation("key must be non-empty".into()));
        }
        let wants_payload = matches!(self.op, QueryOp::Write | QueryOp::Update);
        if wants_payload != self.payload.is_some() {
            return Err(Error::SchemaViolation(format!(
                "payload is {} for {:?}",
                if wants_payload { "required" } else { "not allowed" },
                self.op
            )));
        }
        if self.op == QueryOp::Write && self.key.is_none() {
            return Err(Error::SchemaViolation("writes must address a key".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxnAction {
    Begin,
    Commit,
    Abort,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxnControl {
    pub action: TxnAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub txn_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WrapperRequest {
    pub request_id: u64,
    /// Store instance the wrapper should talk to.
    pub access_point: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<UniformQuery>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub txn: Option<TxnControl>,
    pub deadline_ms: u64,
}

impl WrapperRequest {
    pub fn query(request_id: u64, access_point: &str, q: UniformQuery, deadline_ms: u64) -> Self {
        WrapperRequest { request_id, access_point: access_point.to_owned(), query: Some(q), txn: None, deadline_ms }
    }

    pub fn txn(request_id: u64, access_point: &str, ctl: TxnControl, deadline_ms: u64) -> Self {
        WrapperRequest { request_id, access_point: access_point.to_owned(), query: None, txn: Some(ctl), deadline_ms }
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self> {
        serde_json::from_slice(bytes).map_err(|e| Error::MalformedRequest(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Row {
    pub key: String,
    #[serde(with = "codec::b64")]
    pub value: Vec<u8>,
}

/// Wire-level error codes a wrapper may return.
pub mod codes {
    pub const NOT_FOUND: &str = "NOT_FOUND";
    pub const BAD_SELECTOR: &str = "BAD_SELECTOR";
    pub const BAD_REQUEST: &str = "BAD_REQUEST";
    pub const TXN_UNKNOWN: &str = "TXN_UNKNOWN";
    pub const TXN_CONFLICT: &str = "TXN_CONFLICT";
    pub const DEADLINE_EXCEEDED: &str = "DEADLINE_EXCEEDED";
    pub const CAPABILITY_MISSING: &str = "CAPABILITY_MISSING";
    pub const STORE_UNAVAILABLE: &str = "STORE_UNAVAILABLE";
    pub const WRONG_KIND: &str = "WRONG_KIND";
    pub const OVERLOADED: &str = "OVERLOADED";
    pub const INTERNAL: &str = "INTERNAL";

    pub const ALL: [&str; 11] = [
        NOT_FOUND,
        BAD_SELECTOR,
        BAD_REQUEST,
        TXN_UNKNOWN,
        TXN_CONFLICT,
        DEADLINE_EXCEEDED,
        CAPABILITY_MISSING,
        STORE_UNAVAILABLE,
        WRONG_KIND,
        OVERLOADED,
        INTERNAL,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireError {
    pub code: String,
    pub message: String,
}

/// Normalised answer: exactly one of payload, rows, count or error is set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WrapperResponse {
    pub request_id: u64,
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

impl WrapperResponse {
    fn empty(request_id: u64, ok: bool) -> Self {
        WrapperResponse { request_id, ok, payload: None, rows: None, count: None, error: None }
    }

    pub fn payload(request_id: u64, p: Vec<u8>) -> Self {
        WrapperResponse { payload: Some(p), ..Self::empty(request_id, true) }
    }

    pub fn rows(request_id: u64, rows: Vec<Row>) -> Self {
        WrapperResponse { rows: Some(rows), ..Self::empty(request_id, true) }
    }

    pub fn count(request_id: u64, n: u64) -> Self {
        WrapperResponse { count: Some(n), ..Self::empty(request_id, true) }
    }

    pub fn error(request_id: u64, code: &str, message: impl Into<String>) -> Self {
        WrapperResponse {
            error: Some(WireError { code: code.to_owned(), message: message.into() }),
            ..Self::empty(request_id, false)
        }
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self> {
        let r: WrapperResponse =
            serde_json::from_slice(bytes).map_err(|e| Error::Transport(format!("bad wrapper response: {e}")))?;
        r.check_shape()?;
        Ok(r)
    }

    /// The exactly-one-of invariant.
    pub fn check_shape(&self) -> Result<()> {
        let present = [self.payload.is_some(), self.rows.is_some(), self.count.is_some(), self.error.is_some()]
            .iter()
            .filter(|b| **b)
            .count();
        if present != 1 || self.ok == self.error.is_some() {
            return Err(Error::Transport("wrapper response must carry exactly one result".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WrapperHealth {
    pub status: String,
    pub stored_records: u64,
    pub queue_depth: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub key: String,
    #[serde(with = "codec::b64")]
    pub value: Vec<u8>,
    #[serde(with = "hex_digest")]
    pub digest: Digest,
}

impl SnapshotEntry {
    pub fn new(key: String, value: Vec<u8>) -> Self {
        let digest = codec::digest(&value);
        SnapshotEntry { key, value, digest }
    }
}

mod hex_digest {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::codec::Digest;

    pub fn serialize<S: Serializer>(d: &Digest, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(d))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Digest, D::Error> {
        let s = String::deserialize(d)?;
        let v = hex::decode(s).map_err(serde::de::Error::custom)?;
        v.try_into().map_err(|_| serde::de::Error::custom("digest must be 32 bytes"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotRequest {
    pub access_point: String,
    pub collection: String,
}

/// The wrapper wire protocol.
#[async_trait]
pub trait Wrapper: Send + Sync {
    async fn handle(&self, req: WrapperRequest) -> WrapperResponse;
    async fn capabilities(&self) -> Result<CapabilitySet>;
    async fn health(&self) -> Result<WrapperHealth>;
    async fn snapshot(&self, access_point: &str, collection: &str) -> Result<Vec<SnapshotEntry>>;
}
