//! Job glossary shared by every component: the request/record encodings,
//! the per-kind detail schemas, the status machine and the routing table.

mod credentials;
pub mod details;
mod job;
mod kind;
mod status;

pub use credentials::{Credentials, RedactedCredentials, Role};
pub use details::JobDetails;
pub use job::{parse_job_request, Execution, ForwardedJob, JobData, JobId, JobRecord, JobRequest, JobView};
pub use kind::{route_table, ComponentName, JobKind};
pub use status::{transition, JobEvent, JobStatus};
