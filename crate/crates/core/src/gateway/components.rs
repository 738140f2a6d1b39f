//! Clients through which the Core reaches component instances.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use tokio::sync::watch;

use crate::analytics::AnalyticsEngine;
use crate::error::{Error, ErrorBody, Result};
use crate::offload::OffloadingApis;
use crate::protocol::{ComponentName, Execution, ForwardedJob};
use crate::security::SecurityEngine;

#[async_trait]
pub trait ComponentClient: Send + Sync {
    async fn submit(&self, job: ForwardedJob) -> Result<Execution>;
    async fn cancel(&self, job_id: &str) -> Result<()>;
    async fn health(&self) -> Result<()>;
}

pub struct LocalOffload(pub Arc<OffloadingApis>);

#[async_trait]
impl ComponentClient for LocalOffload {
    async fn submit(&self, job: ForwardedJob) -> Result<Execution> {
        self.0.execute(&job).await
    }

    async fn cancel(&self, job_id: &str) -> Result<()> {
        self.0.cancel(job_id)
    }

    async fn health(&self) -> Result<()> {
        Ok(())
    }
}

pub struct LocalSecurity(pub Arc<SecurityEngine>);

#[async_trait]
impl ComponentClient for LocalSecurity {
    async fn submit(&self, job: ForwardedJob) -> Result<Execution> {
        self.0.execute(&job)
    }

    async fn cancel(&self, _job_id: &str) -> Result<()> {
        Ok(())
    }

    async fn health(&self) -> Result<()> {
        Ok(())
    }
}

pub struct LocalAnalytics(pub Arc<AnalyticsEngine>);

#[async_trait]
impl ComponentClient for LocalAnalytics {
    async fn submit(&self, job: ForwardedJob) -> Result<Execution> {
        self.0.execute(&job).await
    }

    async fn cancel(&self, job_id: &str) -> Result<()> {
        self.0.revoke_request(job_id)
    }

    async fn health(&self) -> Result<()> {
        Ok(())
    }
}

/// Accepts nothing; placeholder for balancing tests.
pub struct NullClient;

#[async_trait]
impl ComponentClient for NullClient {
    async fn submit(&self, job: ForwardedJob) -> Result<Execution> {
        Err(Error::Unreachable(format!("no component behind {}", job.job_id)))
    }

    async fn cancel(&self, _job_id: &str) -> Result<()> {
        Ok(())
    }

    async fn health(&self) -> Result<()> {
        Ok(())
    }
}

/// A component instance reached over HTTP at `base`, e.g.
/// `http://10.0.0.2:8080/off_loading_apis/`.
pub struct HttpComponent {
    base: String,
    http: reqwest::Client,
    /// The security engine's DELETE revokes datasets, so jobs there are
    /// never cancelled remotely.
    cancellable: bool,
}

impl HttpComponent {
    pub fn new(base: &str) -> Self {
        let base = if base.ends_with('/') { base.to_owned() } else { format!("{base}/") };
        HttpComponent { base, http: reqwest::Client::new(), cancellable: true }
    }

    pub fn for_component(component: ComponentName, base: &str) -> Self {
        HttpComponent { cancellable: component != ComponentName::SecurityEngine, ..HttpComponent::new(base) }
    }

    async fn decode<T: serde::de::DeserializeOwned>(resp: reqwest::Response) -> Result<T> {
        let status = resp.status();
        let bytes = resp.bytes().await.map_err(|e| Error::Transport(e.to_string()))?;
        if status.is_success() {
            return serde_json::from_slice(&bytes).map_err(|e| Error::Transport(format!("bad component reply: {e}")));
        }
        match serde_json::from_slice::<ErrorBody>(&bytes) {
            Ok(body) => Err(Error::from_body(body)),
            Err(_) => Err(Error::Transport(format!("component answered {status}"))),
        }
    }
}

fn transport(e: reqwest::Error) -> Error {
    if e.is_connect() {
        Error::Unreachable(e.to_string())
    } else {
        Error::Transport(e.to_string())
    }
}

#[async_trait]
impl ComponentClient for HttpComponent {
    async fn submit(&self, job: ForwardedJob) -> Result<Execution> {
        let resp = self.http.post(&self.base).json(&job).send().await.map_err(transport)?;
        Self::decode(resp).await
    }

    async fn cancel(&self, job_id: &str) -> Result<()> {
        if !self.cancellable {
            return Ok(());
        }
        let resp = self.http.delete(format!("{}{job_id}", self.base)).send().await.map_err(transport)?;
        Self::decode::<serde_json::Value>(resp).await.map(|_| ())
    }

    async fn health(&self) -> Result<()> {
        let resp = self
            .http
            .get(format!("{}health", self.base))
            .timeout(Duration::from_secs(2))
            .send()
            .await
            .map_err(transport)?;
        Self::decode::<serde_json::Value>(resp).await.map(|_| ())
    }
}

/// Fault injection: while stalled, every call hangs until released.
pub struct StallingClient {
    inner: Arc<dyn ComponentClient>,
    stalled: watch::Sender<bool>,
    calls: AtomicU64,
}

impl StallingClient {
    pub fn new(inner: Arc<dyn ComponentClient>) -> Self {
        StallingClient { inner, stalled: watch::channel(false).0, calls: AtomicU64::new(0) }
    }

    pub fn set_stalled(&self, on: bool) {
        self.stalled.send_replace(on);
    }

    /// Submissions received, stalled or not.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    async fn gate(&self) {
        let mut rx = self.stalled.subscribe();
        let _ = rx.wait_for(|s| !*s).await;
    }
}

#[async_trait]
impl ComponentClient for StallingClient {
    async fn submit(&self, job: ForwardedJob) -> Result<Execution> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.gate().await;
        self.inner.submit(job).await
    }

    async fn cancel(&self, job_id: &str) -> Result<()> {
        self.inner.cancel(job_id).await
    }

    async fn health(&self) -> Result<()> {
        self.gate().await;
        self.inner.health().await
    }
}
