//! Job-level interface of the security engine.

use serde_json::json;

use super::SecurityEngine;
use crate::error::{Error, Result};
use crate::protocol::{Execution, ForwardedJob, JobData, JobDetails};

impl SecurityEngine {
    /// Executes a Core-forwarded `policy_update`, `access_check` or
    /// `protocol_query` job.
    pub fn execute(&self, job: &ForwardedJob) -> Result<Execution> {
        let who = &job.initiator;
        let value = match job.typed()? {
            JobDetails::PolicyUpdate(u) => {
                let version = self.policy_update(who, &u)?;
                json!({ "policy_version": version })
            }
            JobDetails::AccessCheck(d) => {
                serde_json::to_value(self.check_access(who, &d.dataset_id, d.action)?).expect("decision serializes")
            }
            JobDetails::ProtocolQuery(d) => {
                let p = self.protocol_query(who, d.data_class, d.owner.as_deref());
                json!({ "data_class": d.data_class, "protocols": p, "policy_version": self.version() })
            }
            _ => return Err(Error::MalformedRequest(format!("{} is not handled by the security engine", job.kind))),
        };
        Ok(Execution::done(JobData::Document { value }))
    }
}
