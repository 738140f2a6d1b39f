//! Job-level interface: what the Core forwards to this component.

use serde_json::{json, Value};

use super::{OffloadingApis, ReplicationMode, TransformKind};
use crate::error::{Error, Result};
use crate::protocol::details::{DataDetails, ScaleDetails};
use crate::protocol::{Execution, ForwardedJob, JobData, JobDetails, JobKind};
use crate::wrappers::{QueryOp, UniformQuery};

fn doc<T: serde::Serialize>(v: &T) -> JobData {
    JobData::Document { value: serde_json::to_value(v).expect("component results serialize") }
}

impl OffloadingApis {
    pub async fn execute(&self, job: &ForwardedJob) -> Result<Execution> {
        let details = job.typed()?;
        let job_id = job.job_id.as_str();
        if self.cancelled.lock().contains_key(job_id) {
            return Err(Error::Cancelled);
        }
        let out = match (job.kind, details) {
            (kind, JobDetails::Data(d)) => Execution::done(self.data_job(kind, &d, job.data.as_ref()).await?),
            (_, JobDetails::CreateStore(d)) => {
                Execution::done(doc(&self.create_store(d.kind, &d.provider_id, d.machines, d.store_id).await?))
            }
            (_, JobDetails::DestroyStore(d)) => Execution::done(doc(&self.destroy_store(&d.store_id).await?)),
            (_, JobDetails::ScaleStore(d)) => Execution::done(doc(&self.scale_job(&d).await?)),
            (_, JobDetails::RelocateStore(d)) => {
                Execution::done(doc(&self.relocate_store(&d.store_id, &d.provider_id).await?))
            }
            (_, JobDetails::Migrate(d)) => Execution::done(doc(&self.migrate(&d.source, &d.destination).await?)),
            (_, JobDetails::Replicate(d)) => {
                let link = self.replicate(&d.source, &d.destination, d.mode).await?;
                if d.mode == ReplicationMode::Continuous {
                    self.job_links.lock().insert(job_id.to_owned(), link.link_id.clone());
                    Execution::ongoing(doc(&link))
                } else {
                    Execution::done(doc(&link))
                }
            }
            (_, JobDetails::Offload(d)) => Execution::done(doc(&self.offload(&d.store_id, d.queue_depth).await?)),
            (_, JobDetails::Publish(d)) => {
                let v = self.publish(&job.initiator, &d.dataset_id, &d.audience)?;
                Execution::done(JobData::Document { value: json!({"policy_version": v, "audience": d.audience}) })
            }
            (kind, JobDetails::Transform(d)) => {
                let which = if kind == JobKind::Anonymize { TransformKind::Anonymize } else { TransformKind::Encrypt };
                Execution::done(doc(&self.apply_transform(&job.initiator, &d.dataset_id, which).await?))
            }
            (kind, _) => {
                return Err(Error::MalformedRequest(format!("{kind} is not handled by the off-loading APIs")))
            }
        };
        Ok(out)
    }

    async fn scale_job(&self, d: &ScaleDetails) -> Result<super::DataStoreDescriptor> {
        if let Some(ap) = &d.access_point {
            let cur = self.store(&d.store_id)?;
            if &cur.access_point != ap {
                return Err(Error::SchemaViolation(format!("{} is not served at {ap}", d.store_id)));
            }
        }
        match d.release {
            Some(n) => self.release_instances(&d.store_id, n).await,
            None => self.scale_store(&d.store_id, &d.machines).await,
        }
    }

    async fn data_job(&self, kind: JobKind, d: &DataDetails, data: Option<&JobData>) -> Result<JobData> {
        let op = match kind {
            JobKind::Read => QueryOp::Read,
            JobKind::Write => QueryOp::Write,
            JobKind::Update => QueryOp::Update,
            _ => QueryOp::Delete,
        };
        let payload = match op {
            QueryOp::Write | QueryOp::Update => Some(
                data.and_then(|d| d.as_bytes())
                    .ok_or_else(|| Error::SchemaViolation(format!("{kind} needs a bytes payload")))?
                    .to_vec(),
            ),
            _ => None,
        };
        let q = UniformQuery {
            op,
            store_id: d.store_id.clone(),
            collection: d.collection.clone(),
            key: d.key.clone(),
            selector: d.selector.clone(),
            payload,
            txn_id: d.txn_id.clone(),
        };
        let res = self.dispatch(q).await?.into_result()?;
        if op.is_mutation() {
            self.note_dataset_location(&d.dataset_id(), &d.collection_ref());
        }
        Ok(match (res.payload, res.rows, res.count) {
            (Some(p), _, _) => JobData::bytes(p),
            (_, Some(rows), _) => JobData::Document { value: json!({ "rows": rows }) },
            (_, _, Some(n)) => JobData::Document { value: json!({ "count": n }) },
            _ => JobData::Document { value: Value::Null },
        })
    }

    /// Stops a job: a continuous link is torn down, a job that has not
    /// started yet will refuse to run.
    pub fn cancel(&self, job_id: &str) -> Result<()> {
        self.cancelled.lock().insert(job_id.to_owned(), "cancelled".into());
        if let Some(link) = self.job_links.lock().remove(job_id) {
            let _ = self.remove_link(&link);
        }
        Ok(())
    }
}
