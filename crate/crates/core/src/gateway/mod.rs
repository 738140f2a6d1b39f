//! The Core: single entry point and coordinator.
//!
//! A submission is parsed, authenticated, registered as `pending`, checked
//! against the security engine and, when allowed, moved to `running` and
//! handed to an instance of the responsible component. Payloads pass
//! protocol enforcement on the way in and its inverse on the way out. A
//! dispatch that times out marks its instance suspect and is redirected once
//! to another healthy instance.

pub mod balance;
pub mod components;
pub mod config;
pub mod enforce;
pub mod principals;
pub mod registry;

use std::path::Path;
use std::sync::{Arc, Weak};
use std::time::Duration;

use parking_lot::{Mutex, RwLock};
use rand::RngCore;
use serde_json::{json, Value};

pub use balance::{ComponentInstance, Health, Incident, IncidentKind, InstanceStatus, PATIENCE};
pub use components::{ComponentClient, HttpComponent, LocalAnalytics, LocalOffload, LocalSecurity, StallingClient};
pub use config::GatewayConfig;
pub use enforce::Protection;
pub use principals::{basic_auth_header, parse_basic_auth, PrincipalEntry, PrincipalRegistry};
pub use registry::{JobEntry, JobRegistry};

use balance::{Balancer, IncidentLog};
use crate::analytics::{AnalyticsEngine, ModuleRegistration};
use crate::error::{Error, Result};
use crate::offload::OffloadingApis;
use crate::protocol::details::StatusScope;
use crate::protocol::{
    route_table, ComponentName, Credentials, Execution, ForwardedJob, JobData, JobDetails, JobEvent, JobId, JobKind,
    JobRecord, JobRequest, JobStatus, JobView, Role,
};
use crate::security::{classify, DataAction, DataClass, SecurityEngine};
use crate::sim::Federation;
use crate::wrappers::engine::EngineHost;
use crate::wrappers::{LocalWrapper, Row};

/// Dataset id under which a store's ownership is recorded.
pub fn store_dataset(store_id: &str) -> String {
    format!("store:{store_id}")
}

pub struct Gateway {
    config: GatewayConfig,
    principals: RwLock<PrincipalRegistry>,
    jobs: JobRegistry,
    balancer: Balancer,
    incidents: IncidentLog,
    security: Arc<SecurityEngine>,
    offload: Arc<OffloadingApis>,
    analytics: Arc<AnalyticsEngine>,
    local_wrappers: Vec<Arc<LocalWrapper>>,
    background: Mutex<Vec<tokio::task::JoinHandle<()>>>,
}

impl Drop for Gateway {
    fn drop(&mut self) {
        for h in self.background.lock().drain(..) {
            h.abort();
        }
    }
}

impl Gateway {
    /// Builds every component in-process per `config` and starts the
    /// background loops. Must run inside a tokio runtime.
    pub async fn start(config: GatewayConfig, principals: PrincipalRegistry) -> Result<Arc<Gateway>> {
        config.validate()?;
        let federation = Arc::new(Federation::new(config.providers.clone())?);
        let mut security = SecurityEngine::new();
        if let Some(p) = &config.policy_file {
            security = security.with_policy_file(p.clone())?;
        }
        if let Some(p) = &config.audit_log {
            security = security.with_audit_export(p)?;
        }
        let security = Arc::new(security);
        let host = Arc::new(EngineHost::new());
        let offload = Arc::new(OffloadingApis::new(federation, security.clone(), host, config.offload.clone()));
        let local_wrappers = if config.local_wrappers { offload.register_local_wrappers().await? } else { Vec::new() };
        for w in &config.wrappers {
            offload.register_http_wrapper(&w.wrapper_id, w.kind, &w.endpoint).await?;
        }
        let analytics = Arc::new(AnalyticsEngine::new(offload.clone(), security.clone()));
        let mut jobs = JobRegistry::new();
        if let Some(p) = &config.job_log {
            jobs = jobs.with_wal(p)?;
        }
        let gw = Arc::new(Gateway {
            principals: RwLock::new(principals),
            jobs,
            balancer: Balancer::default(),
            incidents: IncidentLog::default(),
            security,
            offload,
            analytics,
            local_wrappers,
            background: Mutex::new(Vec::new()),
            config,
        });
        for c in [ComponentName::SecurityEngine, ComponentName::OffloadingApis, ComponentName::AnalyticsEngine] {
            let configured: Vec<_> = gw.config.instances.iter().filter(|i| i.component == c).cloned().collect();
            if configured.is_empty() {
                gw.add_instance(c, &format!("{}-1", c.as_str()), "local", gw.local_client(c))?;
            }
            for i in configured {
                let client: Arc<dyn ComponentClient> = if i.endpoint == "local" {
                    gw.local_client(c)
                } else {
                    Arc::new(HttpComponent::for_component(c, &i.endpoint))
                };
                gw.add_instance(c, &i.instance_id, &i.endpoint, client)?;
            }
        }
        gw.spawn_background();
        Ok(gw)
    }

    /// Loads the config file, applies environment overrides and starts.
    pub async fn from_config_file(path: &Path) -> Result<Arc<Gateway>> {
        let mut cfg = GatewayConfig::load(path)?;
        cfg.apply_env()?;
        let principals = match &cfg.principals {
            Some(p) => PrincipalRegistry::load(p)?,
            None => PrincipalRegistry::new(),
        };
        Gateway::start(cfg, principals).await
    }

    fn spawn_background(self: &Arc<Self>) {
        let mut bg = self.background.lock();
        if self.config.sync_period_ms > 0 {
            bg.push(self.offload.spawn_sync_loop(Duration::from_millis(self.config.sync_period_ms)));
        }
        if self.config.probe_period_ms > 0 {
            let weak: Weak<Gateway> = Arc::downgrade(self);
            let period = Duration::from_millis(self.config.probe_period_ms);
            bg.push(tokio::spawn(async move {
                let mut tick = tokio::time::interval(period);
                tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
                loop {
                    tick.tick().await;
                    let Some(gw) = weak.upgrade() else { break };
                    gw.probe_instances().await;
                }
            }));
        }
    }

    pub fn local_client(&self, c: ComponentName) -> Arc<dyn ComponentClient> {
        match c {
            ComponentName::SecurityEngine => Arc::new(LocalSecurity(self.security.clone())),
            ComponentName::AnalyticsEngine => Arc::new(LocalAnalytics(self.analytics.clone())),
            _ => Arc::new(LocalOffload(self.offload.clone())),
        }
    }

    pub fn add_instance(
        &self,
        component: ComponentName,
        instance_id: &str,
        endpoint: &str,
        client: Arc<dyn ComponentClient>,
    ) -> Result<Arc<ComponentInstance>> {
        if component == ComponentName::CoreGateway {
            return Err(Error::Config("the Core is not a dispatch target".into()));
        }
        self.balancer.add(ComponentInstance::new(component, instance_id, endpoint, client))
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn security(&self) -> &Arc<SecurityEngine> {
        &self.security
    }

    pub fn offload(&self) -> &Arc<OffloadingApis> {
        &self.offload
    }

    pub fn analytics(&self) -> &Arc<AnalyticsEngine> {
        &self.analytics
    }

    pub fn jobs(&self) -> &JobRegistry {
        &self.jobs
    }

    pub fn local_wrappers(&self) -> &[Arc<LocalWrapper>] {
        &self.local_wrappers
    }

    pub fn instances(&self, c: ComponentName) -> Vec<Arc<ComponentInstance>> {
        self.balancer.instances(c)
    }

    pub fn incidents(&self) -> Vec<Incident> {
        self.incidents.entries()
    }

    pub fn incident_count(&self, kind: IncidentKind) -> usize {
        self.incidents.count(kind)
    }

    fn incident(&self, kind: IncidentKind, component: ComponentName, instance: Option<&str>, job: Option<&JobId>, msg: String) {
        self.incidents.record(Incident {
            at_ms: self.jobs.now_ms(),
            kind,
            component,
            instance_id: instance.map(str::to_owned),
            job_id: job.map(|j| j.0.clone()),
            message: msg,
        });
    }

    // ---- principals ----

    pub fn authenticate(&self, claimed: &Credentials) -> Result<Credentials> {
        self.principals.read().authenticate(claimed)
    }

    pub fn add_principal(&self, entry: PrincipalEntry) -> Result<()> {
        self.principals.write().insert(entry)
    }

    /// Registers an analytics module and issues the credentials it will
    /// submit jobs with.
    pub async fn register_module(&self, who: &Credentials, module_id: &str, endpoint: &str) -> Result<(ModuleRegistration, Credentials)> {
        let who = self.authenticate(who)?;
        if self.principals.read().contains(module_id) {
            return Err(Error::DuplicateId(module_id.to_owned()));
        }
        let reg = self.analytics.register_module(&who, module_id, endpoint).await?;
        let mut raw = [0u8; 16];
        rand::rng().fill_bytes(&mut raw);
        let token = hex::encode(raw);
        self.add_principal(PrincipalEntry {
            principal_id: module_id.to_owned(),
            token: token.clone(),
            roles: [Role::AnalyticsModule].into_iter().collect(),
        })?;
        Ok((reg, Credentials::new(module_id, token).with_roles([Role::AnalyticsModule])))
    }

    // ---- balancing and health ----

    /// Round-robin over healthy instances. With none left the caller is told
    /// to be patient and the event is logged.
    pub fn balance(&self, c: ComponentName) -> Result<Arc<ComponentInstance>> {
        self.pick(c, None, None)
    }

    fn pick(&self, c: ComponentName, exclude: Option<&str>, job: Option<&JobId>) -> Result<Arc<ComponentInstance>> {
        self.balancer.pick(c, exclude).inspect_err(|e| {
            self.incident(IncidentKind::Overloaded, c, None, job, e.detail());
        })
    }

    /// Probes every non-healthy instance; a successful probe restores it.
    pub async fn probe_instances(&self) {
        let timeout = Duration::from_millis(self.config.timeout_ms);
        for inst in self.balancer.all() {
            if inst.health() == Health::Healthy {
                continue;
            }
            if let Ok(Ok(())) = tokio::time::timeout(timeout, inst.client.health()).await {
                tracing::info!(instance = %inst.instance_id, "instance restored by health probe");
                inst.set_health(Health::Healthy);
            }
        }
    }

    // ---- submission ----

    /// Convenience wrapper building the request document.
    pub async fn submit(
        self: &Arc<Self>,
        who: &Credentials,
        kind: JobKind,
        details: Value,
        data: Option<JobData>,
    ) -> Result<JobId> {
        let mut raw = json!({ "initiator": who, "job_description": kind, "job_details": details });
        if let Some(d) = data {
            raw["data"] = serde_json::to_value(d).expect("job data serializes");
        }
        self.submit_job(&raw).await
    }

    /// Submits and waits until the job settles.
    pub async fn run(self: &Arc<Self>, who: &Credentials, kind: JobKind, details: Value, data: Option<JobData>) -> Result<JobView> {
        let id = self.submit(who, kind, details, data).await?;
        self.wait(id.as_str()).await
    }

    /// Waits for a terminal state, or for an ongoing job to report progress.
    pub async fn wait(&self, job_id: &str) -> Result<JobView> {
        let entry = self.jobs.get(job_id)?;
        Ok(entry.settled().await)
    }

    pub async fn submit_job(self: &Arc<Self>, raw: &Value) -> Result<JobId> {
        let mut req = JobRequest::parse(raw)?;
        let who = self.authenticate(&req.initiator)?;
        req.initiator = Credentials { token: String::new(), ..who.clone() };
        let kind = req.kind;
        let typed = req.typed.clone();
        let id = self.jobs.next_id();
        let entry = self.jobs.insert(JobRecord::new(req, id.clone(), self.jobs.now_ms()));

        let protection = match self.admit(&who, kind, &typed) {
            Ok(p) => p,
            Err(e) => {
                self.crash(&entry, e.clone());
                return Err(match e {
                    Error::AccessDenied(m) => Error::AccessDenied(format!("{id}: {m}")),
                    other => other,
                });
            }
        };
        *entry.protection.lock() = protection;

        let component = route_table(kind);
        if component == ComponentName::CoreGateway {
            self.jobs.transition(&entry, JobEvent::Start, None)?;
            match self.status_query(&who, &typed) {
                Ok(v) => {
                    let _ = self.jobs.transition(&entry, JobEvent::Succeed, Some(JobData::Document { value: v }));
                }
                Err(e) => self.crash(&entry, e),
            }
            return Ok(id);
        }
        if typed.is_streaming() {
            self.jobs.transition(&entry, JobEvent::Start, None)?;
            *entry.channel.lock() = Some(Vec::new());
            return Ok(id);
        }
        let inst = match self.pick(component, None, Some(&id)) {
            Ok(i) => i,
            Err(e) => {
                self.crash(&entry, e.clone());
                return Err(e);
            }
        };
        self.jobs.transition(&entry, JobEvent::Start, None)?;
        let gw = self.clone();
        tokio::spawn(async move { gw.dispatch(entry, inst, None).await });
        Ok(id)
    }

    /// Access decision for a submission. Returns the protection to apply to
    /// inbound payloads, if the job carries any.
    fn admit(&self, who: &Credentials, kind: JobKind, typed: &JobDetails) -> Result<Option<Protection>> {
        match typed {
            JobDetails::Data(d) if kind == JobKind::Read => {
                self.require(who, &d.dataset_id(), DataAction::Read)?;
                Ok(None)
            }
            JobDetails::Data(d) => self.writable(who, &d.dataset_id(), d.metadata.as_ref()).map(Some),
            JobDetails::CreateStore(_) => Ok(None),
            JobDetails::DestroyStore(s) => self.require_store_admin(who, &s.store_id).map(|_| None),
            JobDetails::ScaleStore(s) => self.require_store_admin(who, &s.store_id).map(|_| None),
            JobDetails::RelocateStore(s) => self.require_store_admin(who, &s.store_id).map(|_| None),
            JobDetails::Offload(s) => self.require_store_admin(who, &s.store_id).map(|_| None),
            JobDetails::Migrate(m) => self.require_movement(who, &m.source, &m.destination).map(|_| None),
            JobDetails::Replicate(m) => self.require_movement(who, &m.source, &m.destination).map(|_| None),
            JobDetails::Publish(p) => self.require(who, &p.dataset_id, DataAction::Admin).map(|_| None),
            JobDetails::Transform(t) => {
                if !who.has_role(Role::SecurityAdmin) {
                    self.require(who, &t.dataset_id, DataAction::Admin)?;
                }
                Ok(None)
            }
            JobDetails::AnalyticsSave(s) => {
                self.writable(who, &s.descriptor.dataset_id, s.metadata.as_ref()).map(Some)
            }
            JobDetails::PolicyUpdate(_)
            | JobDetails::AccessCheck(_)
            | JobDetails::ProtocolQuery(_)
            | JobDetails::AnalyticsRetrieve(_)
            | JobDetails::StatusQuery(_) => Ok(None),
        }
    }

    fn require(&self, who: &Credentials, dataset_id: &str, action: DataAction) -> Result<crate::security::AccessDecision> {
        let d = self.security.check_access(who, dataset_id, action)?;
        if !d.allowed {
            return Err(Error::AccessDenied(format!("{} has no {action} grant on {dataset_id}", who.principal_id)));
        }
        Ok(d)
    }

    /// Write access, registering unknown datasets to the writer. Missing or
    /// invalid class metadata classifies as application data.
    fn writable(&self, who: &Credentials, dataset_id: &str, metadata: Option<&Value>) -> Result<Protection> {
        if self.security.dataset(dataset_id).is_none() {
            let class = metadata.map(classify).unwrap_or(DataClass::Application);
            match self.security.register_dataset(who, dataset_id, class) {
                Ok(_) | Err(Error::DuplicateId(_)) => {}
                Err(e) => return Err(e),
            }
        }
        let d = self.require(who, dataset_id, DataAction::Write)?;
        Ok(Protection { protocols: d.protocols, owner: d.owner })
    }

    fn require_store_admin(&self, who: &Credentials, store_id: &str) -> Result<()> {
        if who.is_admin() {
            return Ok(());
        }
        match self.security.check_access(who, &store_dataset(store_id), DataAction::Admin) {
            Ok(d) if d.allowed => Ok(()),
            Ok(_) | Err(Error::UnknownDataset(_)) => {
                Err(Error::AccessDenied(format!("{} may not administer store {store_id}", who.principal_id)))
            }
            Err(e) => Err(e),
        }
    }

    fn require_movement(&self, who: &Credentials, src: &crate::offload::CollectionRef, dst: &crate::offload::CollectionRef) -> Result<()> {
        if who.is_admin() {
            return Ok(());
        }
        self.require(who, &src.to_string(), DataAction::Admin)?;
        self.require_store_admin(who, &dst.store_id)
    }

    fn status_query(&self, who: &Credentials, typed: &JobDetails) -> Result<Value> {
        let JobDetails::StatusQuery(q) = typed else {
            return Err(Error::MalformedRequest("not a status query".into()));
        };
        match q.scope {
            StatusScope::Job => {
                let target = q.target_job_id.as_deref().unwrap_or_default();
                let entry = self.jobs.get(target)?;
                self.check_owner(who, &entry)?;
                Ok(serde_json::to_value(entry.view()).expect("view serializes"))
            }
            StatusScope::Stores => {
                let stores: Vec<Value> = self
                    .offload
                    .list_stores()
                    .into_iter()
                    .map(|d| {
                        let traffic = self.offload.traffic(&d.store_id).unwrap_or_default();
                        json!({ "store": d, "traffic": traffic })
                    })
                    .collect();
                let instances: Vec<InstanceStatus> = self.balancer.all().iter().map(|i| i.status()).collect();
                Ok(json!({ "stores": stores, "instances": instances, "incidents": self.incidents.entries().len() }))
            }
        }
    }

    // ---- dispatch ----

    async fn dispatch(self: Arc<Self>, entry: Arc<JobEntry>, first: Arc<ComponentInstance>, inbound: Option<Vec<u8>>) {
        let job = match self.prepare(&entry, inbound) {
            Ok(j) => j,
            Err(e) => return self.crash(&entry, e),
        };
        let component = first.component;
        let timeout = Duration::from_millis(self.config.timeout_ms);
        let mut inst = first;
        loop {
            let attempt = entry.attempts.fetch_add(1, std::sync::atomic::Ordering::SeqCst) + 1;
            *entry.instance.lock() = Some(inst.clone());
            let res = {
                let _inflight = inst.begin();
                tokio::time::timeout(timeout, inst.client.submit(job.clone())).await
            };
            match res {
                Ok(Ok(exec)) => return self.complete(&entry, exec),
                Ok(Err(e)) => return self.crash(&entry, self.component_error(e, component, &job.job_id)),
                Err(_) => {
                    inst.set_health(Health::Suspect);
                    let msg = format!("{} did not answer within {} ms", inst.instance_id, self.config.timeout_ms);
                    self.incident(IncidentKind::Timeout, component, Some(&inst.instance_id), Some(&job.job_id), msg.clone());
                    if attempt >= 2 {
                        return self.crash(&entry, Error::Timeout(format!("{msg} on retry")));
                    }
                    match self.balancer.pick(component, Some(&inst.instance_id)) {
                        Ok(next) => inst = next,
                        Err(_) => {
                            return self.crash(&entry, Error::Timeout(format!("{msg}; no alternative instance")))
                        }
                    }
                }
            }
        }
    }

    fn component_error(&self, e: Error, component: ComponentName, job: &JobId) -> Error {
        match e {
            Error::NoRemedy(m) => {
                let msg = format!("{m}; {PATIENCE}");
                self.incident(IncidentKind::NoRemedy, component, None, Some(job), msg.clone());
                Error::Overloaded(msg)
            }
            other => other,
        }
    }

    /// Builds the forwarded job, applying protocol enforcement to inbound
    /// payloads.
    fn prepare(&self, entry: &JobEntry, inbound: Option<Vec<u8>>) -> Result<ForwardedJob> {
        let rec = entry.record.lock().clone();
        let protection = entry.protection.lock().clone();
        let mut job = ForwardedJob::from_record(&rec, rec.data.clone());
        match (rec.details()?, protection) {
            (JobDetails::Data(_), Some(p)) if matches!(rec.job_description, JobKind::Write | JobKind::Update) => {
                let payload = match (inbound, &rec.data) {
                    (Some(buf), _) => buf,
                    (None, Some(JobData::Bytes { base64 })) => base64.clone(),
                    _ => return Err(Error::SchemaViolation(format!("{} needs a bytes payload", rec.job_description))),
                };
                job.data = Some(JobData::bytes(enforce::enforce(&self.security, &payload, &p)?));
            }
            (JobDetails::AnalyticsSave(s), Some(p)) => {
                let mut raw: Vec<Vec<u8>> =
                    s.records.iter().map(|r| serde_json::to_vec(r).expect("json serializes")).collect();
                match &rec.data {
                    Some(JobData::Records { records }) => raw.extend(records.iter().cloned()),
                    Some(JobData::Bytes { base64 }) => raw.extend(split_lines(base64)),
                    _ => {}
                }
                if let Some(buf) = inbound {
                    raw.extend(split_lines(&buf));
                }
                let sealed = raw.iter().map(|r| enforce::enforce(&self.security, r, &p)).collect::<Result<Vec<_>>>()?;
                if let Some(m) = job.details.as_object_mut() {
                    m.remove("records");
                }
                job.data = Some(JobData::Records { records: sealed });
            }
            _ => {}
        }
        Ok(job)
    }

    fn complete(&self, entry: &JobEntry, exec: Execution) {
        let kind = entry.record.lock().job_description;
        match exec {
            Execution::Ongoing { data } => {
                *entry.progress.lock() = Some(data);
                entry.touch();
            }
            Execution::Done { data } => {
                let data = match self.outbound(kind, data) {
                    Ok(d) => d,
                    Err(e) => return self.crash(entry, e),
                };
                if kind == JobKind::CreateStore {
                    self.record_store_owner(entry, &data);
                }
                if let Err(e) = self.jobs.transition(entry, JobEvent::Succeed, Some(data)) {
                    tracing::debug!(error = %e, "job finished after leaving the running state");
                }
            }
        }
    }

    fn record_store_owner(&self, entry: &JobEntry, data: &JobData) {
        let JobData::Document { value } = data else { return };
        let Some(store_id) = value.get("store_id").and_then(Value::as_str) else { return };
        let who = entry.record.lock().initiator.clone();
        if let Err(e) = self.security.register_dataset(&who, &store_dataset(store_id), DataClass::Federation) {
            tracing::warn!(error = %e, store_id, "could not record store ownership");
        }
    }

    /// Inverse enforcement on data leaving the gateway.
    fn outbound(&self, kind: JobKind, data: JobData) -> Result<JobData> {
        match (kind, data) {
            (JobKind::Read, JobData::Bytes { base64 }) => Ok(JobData::bytes(enforce::invert(&self.security, &base64)?)),
            (JobKind::Read, JobData::Document { value }) if value.get("rows").is_some() => {
                let rows: Vec<Row> = serde_json::from_value(value["rows"].clone())
                    .map_err(|e| Error::Transport(format!("bad rows from component: {e}")))?;
                let plain = rows
                    .into_iter()
                    .map(|r| Ok(Row { key: r.key, value: enforce::invert(&self.security, &r.value)? }))
                    .collect::<Result<Vec<Row>>>()?;
                Ok(JobData::Document { value: json!({ "rows": plain }) })
            }
            (JobKind::AnalyticsRetrieve, JobData::Records { records }) => Ok(JobData::Records {
                records: records.iter().map(|r| enforce::invert(&self.security, r)).collect::<Result<_>>()?,
            }),
            (_, d) => Ok(d),
        }
    }

    fn crash(&self, entry: &JobEntry, e: Error) {
        if entry.status() == JobStatus::Pending {
            let _ = self.jobs.transition(entry, JobEvent::Start, None);
        }
        if let Err(t) = self.jobs.transition(entry, JobEvent::Fail, Some(JobData::error(&e))) {
            tracing::debug!(error = %t, "job already terminal");
        }
    }

    // ---- GET / PUT / DELETE ----

    fn check_owner(&self, who: &Credentials, entry: &JobEntry) -> Result<()> {
        let owner = entry.record.lock().initiator.principal_id.clone();
        if owner != who.principal_id && !who.is_admin() {
            return Err(Error::AccessDenied(format!("job belongs to {owner}")));
        }
        Ok(())
    }

    pub fn get_job(&self, job_id: &str, who: &Credentials) -> Result<JobView> {
        let who = self.authenticate(who)?;
        let entry = self.jobs.get(job_id)?;
        self.check_owner(&who, &entry)?;
        Ok(entry.view())
    }

    /// Appends a chunk to a streaming job; `last` closes the channel and
    /// dispatches the job with the concatenated payload.
    pub async fn stream_put(self: &Arc<Self>, job_id: &str, chunk: &[u8], last: bool, who: &Credentials) -> Result<()> {
        let who = self.authenticate(who)?;
        let entry = self.jobs.get(job_id)?;
        self.check_owner(&who, &entry)?;
        let inbound = {
            let mut ch = entry.channel.lock();
            let Some(buf) = ch.as_mut() else {
                return Err(Error::ChannelClosed(format!("job {job_id} does not accept data")));
            };
            buf.extend_from_slice(chunk);
            if !last {
                return Ok(());
            }
            ch.take().expect("channel checked above")
        };
        let component = route_table(entry.record.lock().job_description);
        let id = JobId::from(job_id);
        let inst = match self.pick(component, None, Some(&id)) {
            Ok(i) => i,
            Err(e) => {
                self.crash(&entry, e.clone());
                return Err(e);
            }
        };
        let gw = self.clone();
        tokio::spawn(async move { gw.dispatch(entry, inst, Some(inbound)).await });
        Ok(())
    }

    /// Removes a job. A running job is cancelled at its component and
    /// recorded as crashed before removal.
    pub async fn delete_job(&self, job_id: &str, who: &Credentials) -> Result<()> {
        let who = self.authenticate(who)?;
        let entry = self.jobs.get(job_id)?;
        self.check_owner(&who, &entry)?;
        let kind = entry.record.lock().job_description;
        if entry.status() == JobStatus::Running {
            let inst = entry.instance.lock().clone();
            if let Some(inst) = inst {
                if let Err(e) = inst.client.cancel(job_id).await {
                    tracing::warn!(error = %e, job_id, "cancellation signal failed");
                }
            }
            self.crash(&entry, Error::Cancelled);
        }
        if kind == JobKind::AnalyticsRetrieve {
            self.analytics.revoke_request(job_id)?;
        }
        entry.channel.lock().take();
        self.jobs.remove(job_id);
        Ok(())
    }

    /// Revokes access to the results of an analytics request.
    pub async fn revoke_analytics(&self, request_id: &str, who: &Credentials) -> Result<()> {
        let entry = self.jobs.get(request_id)?;
        if entry.record.lock().job_description != JobKind::AnalyticsRetrieve {
            return Err(Error::NotFound(format!("{request_id} is not an analytics request")));
        }
        self.delete_job(request_id, who).await
    }
}

fn split_lines(buf: &[u8]) -> Vec<Vec<u8>> {
    buf.split(|b| *b == b'\n').filter(|l| !l.iter().all(u8::is_ascii_whitespace)).map(<[u8]>::to_vec).collect()
}
