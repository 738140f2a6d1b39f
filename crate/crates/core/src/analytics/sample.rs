//! Sample analytics module: summarizes monitoring records per store.
//!
//! It talks to the federation only through Core jobs, under its own
//! principal, exactly as an external module would.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, ErrorBody, Result};
use crate::gateway::Gateway;
use crate::offload::CollectionRef;
use crate::protocol::{Credentials, JobData, JobKind, JobStatus};

/// One monitoring observation of a store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitoringRecord {
    pub store_id: String,
    pub at_ms: u64,
    pub queue_depth: u64,
}

/// Half-open interval `[from_ms, to_ms)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub from_ms: u64,
    pub to_ms: u64,
}

impl Window {
    pub fn contains(&self, at_ms: u64) -> bool {
        at_ms >= self.from_ms && at_ms < self.to_ms
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreSummary {
    pub requests: u64,
    pub mean_queue_depth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub window: Window,
    pub stores: BTreeMap<String, StoreSummary>,
    /// Dataset the report was saved under.
    pub dataset_id: String,
}

/// Pure summary step; records outside the window or not parseable as
/// monitoring records are ignored.
pub fn summarize(records: &[Vec<u8>], window: Window) -> BTreeMap<String, StoreSummary> {
    let mut acc: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    for r in records {
        let Ok(m) = serde_json::from_slice::<MonitoringRecord>(r) else { continue };
        if !window.contains(m.at_ms) {
            continue;
        }
        let e = acc.entry(m.store_id).or_default();
        e.0 += 1;
        e.1 += m.queue_depth;
    }
    acc.into_iter()
        .map(|(s, (n, depth))| (s, StoreSummary { requests: n, mean_queue_depth: depth as f64 / n as f64 }))
        .collect()
}

pub struct SampleModule {
    gw: Arc<Gateway>,
    creds: Credentials,
    /// Which datasets count as monitoring input.
    pub source_filter: Map<String, Value>,
    /// Where reports are saved.
    pub report_location: CollectionRef,
}

impl SampleModule {
    pub const MODULE_ID: &'static str = "sample-monitoring-summary";

    pub fn new(gw: Arc<Gateway>, creds: Credentials, report_location: CollectionRef) -> Self {
        let source_filter = json!({ "class": "monitoring" }).as_object().cloned().unwrap_or_default();
        SampleModule { gw, creds, source_filter, report_location }
    }

    async fn job(&self, kind: JobKind, details: Value) -> Result<Option<JobData>> {
        let view = self.gw.run(&self.creds, kind, details, None).await?;
        match (view.status, view.data) {
            (JobStatus::Crashed, Some(JobData::Error { code, message })) => Err(Error::from_body(ErrorBody { code, message })),
            (_, data) => Ok(data),
        }
    }

    /// Retrieves monitoring records, summarizes the window and saves the
    /// report as a federation-class dataset.
    pub async fn run(&self, window: Window) -> Result<SampleReport> {
        let data = self.job(JobKind::AnalyticsRetrieve, json!({ "description": self.source_filter })).await?;
        let records = match data {
            Some(JobData::Records { records }) => records,
            _ => Vec::new(),
        };
        let stores = summarize(&records, window);
        let dataset_id = format!("report-{}-{}", window.from_ms, window.to_ms);
        let report = SampleReport { window, stores, dataset_id: dataset_id.clone() };
        let details = json!({
            "descriptor": {
                "dataset_id": dataset_id,
                "description": {"class": "federation", "kind": "sample_report", "module": Self::MODULE_ID},
                "locations": [self.report_location],
            },
            "records": [report],
            "metadata": {"data_class": "federation"},
        });
        self.job(JobKind::AnalyticsSave, details).await?;
        Ok(report)
    }
}
