use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::credentials::{Credentials, RedactedCredentials};
use super::details::JobDetails;
use super::kind::JobKind;
use super::status::{transition, JobEvent, JobStatus};
use crate::codec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JobId(pub String);

impl JobId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for JobId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for JobId {
    fn from(s: &str) -> Self {
        JobId(s.to_owned())
    }
}

/// The `data` member: inserted bytes, retrieved results, or an error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JobData {
    Bytes {
        #[serde(with = "codec::b64")]
        base64: Vec<u8>,
    },
    Records {
        #[serde(with = "codec::b64_vec")]
        records: Vec<Vec<u8>>,
    },
    Document {
        value: Value,
    },
    Error {
        code: String,
        message: String,
    },
}

impl JobData {
    pub fn bytes(b: impl Into<Vec<u8>>) -> Self {
        JobData::Bytes { base64: b.into() }
    }

    pub fn error(e: &Error) -> Self {
        JobData::Error { code: e.code().to_owned(), message: e.detail() }
    }

    pub fn is_error(&self) -> bool {
        matches!(self, JobData::Error { .. })
    }

    pub fn as_bytes(&self) -> Option<&[u8]> {
        match self {
            JobData::Bytes { base64 } => Some(base64),
            _ => None,
        }
    }
}

/// A validated submission, before the gateway has assigned an id.
#[derive(Debug, Clone, PartialEq)]
pub struct JobRequest {
    pub initiator: Credentials,
    pub kind: JobKind,
    pub details: Value,
    pub typed: JobDetails,
    pub data: Option<JobData>,
}

impl JobRequest {
    /// Parses and validates a raw request document.
    pub fn parse(raw: &Value) -> Result<JobRequest> {
        let obj = raw
            .as_object()
            .ok_or_else(|| Error::MalformedRequest("request must be a JSON object".into()))?;
        let initiator = obj
            .get("initiator")
            .ok_or_else(|| Error::MalformedRequest("missing `initiator`".into()))?;
        let initiator: Credentials = serde_json::from_value(initiator.clone())
            .map_err(|e| Error::MalformedRequest(format!("initiator: {e}")))?;
        if initiator.principal_id.trim().is_empty() {
            return Err(Error::MalformedRequest("initiator.principal_id is empty".into()));
        }
        let token = obj
            .get("job_description")
            .ok_or_else(|| Error::MalformedRequest("missing `job_description`".into()))?
            .as_str()
            .ok_or_else(|| Error::MalformedRequest("`job_description` must be a string".into()))?;
        let kind: JobKind = token.parse()?;
        let mut details = obj.get("job_details").cloned().unwrap_or_else(|| Value::Object(Default::default()));
        if let Some(map) = details.as_object_mut() {
            // Job ids come from the gateway only.
            map.remove("job_id");
        }
        let typed = JobDetails::parse(kind, &details)?;
        let data = match obj.get("data") {
            None | Some(Value::Null) => None,
            Some(v) => {
                let d: JobData = serde_json::from_value(v.clone())
                    .map_err(|e| Error::SchemaViolation(format!("data: {e}")))?;
                if d.is_error() {
                    return Err(Error::SchemaViolation("data: clients cannot submit errors".into()));
                }
                Some(d)
            }
        };
        Ok(JobRequest { initiator, kind, details, typed, data })
    }

    pub fn parse_slice(raw: &[u8]) -> Result<JobRequest> {
        let v: Value = serde_json::from_slice(raw)
            .map_err(|e| Error::MalformedRequest(format!("not a JSON document: {e}")))?;
        JobRequest::parse(&v)
    }

    /// Builds the request document a client would POST.
    pub fn to_document(&self) -> Value {
        let mut doc = serde_json::json!({
            "initiator": self.initiator,
            "job_description": self.kind,
            "job_details": self.details,
        });
        if let Some(d) = &self.data {
            doc["data"] = serde_json::to_value(d).expect("job data serializes");
        }
        doc
    }
}

/// Parses a raw request into a pending [`JobRecord`] with the given id.
pub fn parse_job_request(raw: &Value, job_id: JobId, now: u64) -> Result<JobRecord> {
    let req = JobRequest::parse(raw)?;
    Ok(JobRecord::new(req, job_id, now))
}

/// One submitted job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: JobId,
    pub initiator: Credentials,
    pub job_description: JobKind,
    pub job_details: Value,
    pub status: JobStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<JobData>,
    pub created_at: u64,
    pub updated_at: u64,
}

impl JobRecord {
    pub fn new(req: JobRequest, job_id: JobId, now: u64) -> JobRecord {
        let mut details = req.details;
        if let Some(map) = details.as_object_mut() {
            map.insert("job_id".into(), Value::String(job_id.0.clone()));
        }
        JobRecord {
            job_id,
            initiator: req.initiator,
            job_description: req.kind,
            job_details: details,
            status: JobStatus::Pending,
            data: req.data,
            created_at: now,
            updated_at: now,
        }
    }

    pub fn details(&self) -> Result<JobDetails> {
        JobDetails::parse(self.job_description, &self.job_details)
    }

    /// Applies a state-machine event. `fail` requires an error payload and
    /// `succeed` refuses one, keeping `data` consistent with `status`.
    pub fn apply(&mut self, event: JobEvent, data: Option<JobData>, now: u64) -> Result<()> {
        let next = transition(self.status, event)?;
        match (event, &data) {
            (JobEvent::Fail, Some(d)) if d.is_error() => {}
            (JobEvent::Fail, _) => {
                return Err(Error::IllegalTransition("fail requires an error description".into()))
            }
            (_, Some(d)) if d.is_error() => {
                return Err(Error::IllegalTransition("only crashed jobs carry errors".into()))
            }
            _ => {}
        }
        self.status = next;
        if data.is_some() || event == JobEvent::Fail {
            self.data = data;
        }
        self.updated_at = now.max(self.updated_at);
        Ok(())
    }

    pub fn error(&self) -> Option<(&str, &str)> {
        match &self.data {
            Some(JobData::Error { code, message }) => Some((code, message)),
            _ => None,
        }
    }

    pub fn view(&self) -> JobView {
        let data = match self.status {
            JobStatus::Finished | JobStatus::Crashed => self.data.clone(),
            _ => None,
        };
        JobView {
            job_id: self.job_id.clone(),
            initiator: self.initiator.redacted(),
            job_description: self.job_description,
            job_details: self.job_details.clone(),
            status: self.status,
            data,
            created_at: self.created_at,
            updated_at: self.updated_at,
        }
    }
}

/// A job as the Core forwards it to a component: the id is already injected
/// into `details` and the initiator's token is stripped, since
/// authentication has concluded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardedJob {
    pub job_id: JobId,
    pub initiator: Credentials,
    pub kind: JobKind,
    pub details: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<JobData>,
}

impl ForwardedJob {
    pub fn from_record(rec: &JobRecord, data: Option<JobData>) -> Self {
        let mut initiator = rec.initiator.clone();
        initiator.token.clear();
        ForwardedJob {
            job_id: rec.job_id.clone(),
            initiator,
            kind: rec.job_description,
            details: rec.job_details.clone(),
            data,
        }
    }

    pub fn typed(&self) -> Result<JobDetails> {
        JobDetails::parse(self.kind, &self.details)
    }
}

/// Outcome of a component executing a forwarded job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum Execution {
    Done { data: JobData },
    /// The job keeps running (a continuous replication link); `data`
    /// describes what was set up.
    Ongoing { data: JobData },
}

impl Execution {
    pub fn done(data: JobData) -> Self {
        Execution::Done { data }
    }

    pub fn ongoing(data: JobData) -> Self {
        Execution::Ongoing { data }
    }

    pub fn data(&self) -> &JobData {
        match self {
            Execution::Done { data } | Execution::Ongoing { data } => data,
        }
    }
}

/// What GET returns: the record without the initiator's secret, and data only
/// once the job has reached a terminal state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobView {
    pub job_id: JobId,
    pub initiator: RedactedCredentials,
    pub job_description: JobKind,
    pub job_details: Value,
    pub status: JobStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<JobData>,
    pub created_at: u64,
    pub updated_at: u64,
}

#[cfg(test)]
mod tests {
    use serde_json::json;

    use super::*;

    fn read_req() -> Value {
        json!({
            "initiator": {"principal_id": "app1", "token": "t"},
            "job_description": "read",
            "job_details": {"store_id": "s1", "key": "k"}
        })
    }

    #[test]
    fn minimal_read_is_pending() {
        let rec = parse_job_request(&read_req(), JobId::from("job-1"), 0).unwrap();
        assert_eq!(rec.status, JobStatus::Pending);
        assert_eq!(rec.job_details["job_id"], "job-1");
    }

    #[test]
    fn unknown_token() {
        let mut r = read_req();
        r["job_description"] = json!("frobnicate");
        assert!(matches!(JobRequest::parse(&r), Err(Error::UnknownJobType(_))));
    }

    #[test]
    fn missing_members_are_malformed() {
        let mut r = read_req();
        r.as_object_mut().unwrap().remove("initiator");
        assert!(matches!(JobRequest::parse(&r), Err(Error::MalformedRequest(_))));
        let mut r = read_req();
        r.as_object_mut().unwrap().remove("job_description");
        assert!(matches!(JobRequest::parse(&r), Err(Error::MalformedRequest(_))));
        assert!(matches!(JobRequest::parse_slice(b"{"), Err(Error::MalformedRequest(_))));
    }

    #[test]
    fn scale_store_needs_machines() {
        let r = json!({
            "initiator": {"principal_id": "app1", "token": "t"},
            "job_description": "scale_store",
            "job_details": {}
        });
        assert!(matches!(JobRequest::parse(&r), Err(Error::SchemaViolation(_))));
    }

    #[test]
    fn client_job_id_is_replaced() {
        let mut r = read_req();
        r["job_details"]["job_id"] = json!("spoofed");
        let rec = parse_job_request(&r, JobId::from("job-9"), 0).unwrap();
        assert_eq!(rec.job_details["job_id"], "job-9");
    }

    #[test]
    fn error_data_only_when_crashed() {
        let mut rec = parse_job_request(&read_req(), JobId::from("job-1"), 0).unwrap();
        assert!(rec.apply(JobEvent::Fail, Some(JobData::error(&Error::Cancelled)), 1).is_err());
        rec.apply(JobEvent::Start, None, 1).unwrap();
        assert!(rec
            .apply(JobEvent::Succeed, Some(JobData::error(&Error::Cancelled)), 2)
            .is_err());
        assert!(rec.apply(JobEvent::Fail, None, 2).is_err());
        rec.apply(JobEvent::Fail, Some(JobData::error(&Error::Cancelled)), 2).unwrap();
        assert_eq!(rec.status, JobStatus::Crashed);
        assert!(rec.data.as_ref().unwrap().is_error());
    }
}
