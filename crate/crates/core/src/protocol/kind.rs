use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Every job type the gateway accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Read,
    Write,
    Update,
    Delete,
    CreateStore,
    DestroyStore,
    ScaleStore,
    RelocateStore,
    Migrate,
    Replicate,
    Offload,
    Publish,
    Anonymize,
    Encrypt,
    PolicyUpdate,
    AccessCheck,
    ProtocolQuery,
    AnalyticsSave,
    AnalyticsRetrieve,
    StatusQuery,
}

impl JobKind {
    pub const ALL: [JobKind; 20] = [
        JobKind::Read,
        JobKind::Write,
        JobKind::Update,
        JobKind::Delete,
        JobKind::CreateStore,
        JobKind::DestroyStore,
        JobKind::ScaleStore,
        JobKind::RelocateStore,
        JobKind::Migrate,
        JobKind::Replicate,
        JobKind::Offload,
        JobKind::Publish,
        JobKind::Anonymize,
        JobKind::Encrypt,
        JobKind::PolicyUpdate,
        JobKind::AccessCheck,
        JobKind::ProtocolQuery,
        JobKind::AnalyticsSave,
        JobKind::AnalyticsRetrieve,
        JobKind::StatusQuery,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            JobKind::Read => "read",
            JobKind::Write => "write",
            JobKind::Update => "update",
            JobKind::Delete => "delete",
            JobKind::CreateStore => "create_store",
            JobKind::DestroyStore => "destroy_store",
            JobKind::ScaleStore => "scale_store",
            JobKind::RelocateStore => "relocate_store",
            JobKind::Migrate => "migrate",
            JobKind::Replicate => "replicate",
            JobKind::Offload => "offload",
            JobKind::Publish => "publish",
            JobKind::Anonymize => "anonymize",
            JobKind::Encrypt => "encrypt",
            JobKind::PolicyUpdate => "policy_update",
            JobKind::AccessCheck => "access_check",
            JobKind::ProtocolQuery => "protocol_query",
            JobKind::AnalyticsSave => "analytics_save",
            JobKind::AnalyticsRetrieve => "analytics_retrieve",
            JobKind::StatusQuery => "status_query",
        }
    }

    /// Jobs that may keep a PUT channel open while running.
    pub fn accepts_stream(self) -> bool {
        matches!(self, JobKind::Write | JobKind::Update | JobKind::AnalyticsSave)
    }

    /// Jobs whose finished view carries retrieved data.
    pub fn is_retrieval(self) -> bool {
        matches!(
            self,
            JobKind::Read
                | JobKind::AnalyticsRetrieve
                | JobKind::ProtocolQuery
                | JobKind::AccessCheck
                | JobKind::StatusQuery
        )
    }
}

impl fmt::Display for JobKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for JobKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        JobKind::ALL
            .iter()
            .copied()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::UnknownJobType(s.to_owned()))
    }
}

/// The four gateway components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentName {
    CoreGateway,
    SecurityEngine,
    OffloadingApis,
    AnalyticsEngine,
}

impl ComponentName {
    pub fn as_str(self) -> &'static str {
        match self {
            ComponentName::CoreGateway => "core_gateway",
            ComponentName::SecurityEngine => "security_engine",
            ComponentName::OffloadingApis => "offloading_apis",
            ComponentName::AnalyticsEngine => "analytics_engine",
        }
    }
}

impl fmt::Display for ComponentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ComponentName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "core_gateway" | "core" => Ok(ComponentName::CoreGateway),
            "security_engine" => Ok(ComponentName::SecurityEngine),
            "offloading_apis" | "off_loading_apis" => Ok(ComponentName::OffloadingApis),
            "analytics_engine" => Ok(ComponentName::AnalyticsEngine),
            other => Err(Error::Config(format!("unknown component `{other}`"))),
        }
    }
}

/// Which component is responsible for a job kind.
pub fn route_table(kind: JobKind) -> ComponentName {
    use JobKind::*;
    match kind {
        Read | Write | Update | Delete | CreateStore | DestroyStore | ScaleStore | RelocateStore
        | Migrate | Replicate | Offload | Publish | Anonymize | Encrypt => {
            ComponentName::OffloadingApis
        }
        PolicyUpdate | AccessCheck | ProtocolQuery => ComponentName::SecurityEngine,
        AnalyticsSave | AnalyticsRetrieve => ComponentName::AnalyticsEngine,
        StatusQuery => ComponentName::CoreGateway,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens_round_trip() {
        for k in JobKind::ALL {
            assert_eq!(k.as_str().parse::<JobKind>().unwrap(), k);
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(json, format!("\"{}\"", k.as_str()));
        }
        assert!(matches!("frobnicate".parse::<JobKind>(), Err(Error::UnknownJobType(_))));
    }

    #[test]
    fn routing_examples() {
        assert_eq!(route_table(JobKind::Migrate), ComponentName::OffloadingApis);
        assert_eq!(route_table(JobKind::AnalyticsRetrieve), ComponentName::AnalyticsEngine);
        assert_eq!(route_table(JobKind::StatusQuery), ComponentName::CoreGateway);
        assert_eq!(route_table(JobKind::AccessCheck), ComponentName::SecurityEngine);
    }

    #[test]
    fn routing_is_total_and_stable() {
        for k in JobKind::ALL {
            assert_eq!(route_table(k), route_table(k));
        }
        let offloading = JobKind::ALL
            .iter()
            .filter(|k| route_table(**k) == ComponentName::OffloadingApis)
            .count();
        assert_eq!(offloading, 14);
    }
}
