//! Component instances, health and round-robin selection.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use super::components::ComponentClient;
use crate::error::{Error, Result};
use crate::protocol::ComponentName;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Health {
    Healthy,
    Suspect,
    Down,
}

pub struct ComponentInstance {
    pub component: ComponentName,
    pub instance_id: String,
    pub endpoint: String,
    health: RwLock<Health>,
    inflight: AtomicU64,
    dispatched: AtomicU64,
    pub(crate) client: Arc<dyn ComponentClient>,
}

impl std::fmt::Debug for ComponentInstance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ComponentInstance")
            .field("component", &self.component)
            .field("instance_id", &self.instance_id)
            .field("endpoint", &self.endpoint)
            .field("health", &self.health())
            .finish_non_exhaustive()
    }
}

impl ComponentInstance {
    pub fn new(component: ComponentName, instance_id: &str, endpoint: &str, client: Arc<dyn ComponentClient>) -> Self {
        ComponentInstance {
            component,
            instance_id: instance_id.to_owned(),
            endpoint: endpoint.to_owned(),
            health: RwLock::new(Health::Healthy),
            inflight: AtomicU64::new(0),
            dispatched: AtomicU64::new(0),
            client,
        }
    }

    pub fn health(&self) -> Health {
        *self.health.read()
    }

    pub fn set_health(&self, h: Health) {
        *self.health.write() = h;
    }

    pub fn inflight(&self) -> u64 {
        self.inflight.load(Ordering::SeqCst)
    }

    /// Jobs handed to this instance so far.
    pub fn dispatched(&self) -> u64 {
        self.dispatched.load(Ordering::SeqCst)
    }

    pub(crate) fn begin(&self) -> InflightGuard<'_> {
        self.dispatched.fetch_add(1, Ordering::SeqCst);
        self.inflight.fetch_add(1, Ordering::SeqCst);
        InflightGuard(&self.inflight)
    }

    pub fn status(&self) -> InstanceStatus {
        InstanceStatus {
            component: self.component,
            instance_id: self.instance_id.clone(),
            endpoint: self.endpoint.clone(),
            health: self.health(),
            inflight: self.inflight(),
            dispatched: self.dispatched(),
        }
    }
}

pub(crate) struct InflightGuard<'a>(&'a AtomicU64);

impl Drop for InflightGuard<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceStatus {
    pub component: ComponentName,
    pub instance_id: String,
    pub endpoint: String,
    pub health: Health,
    pub inflight: u64,
    pub dispatched: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IncidentKind {
    /// No healthy instance was available.
    Overloaded,
    /// A dispatch exceeded its timeout.
    Timeout,
    /// An off-load request found neither a replica nor capacity.
    NoRemedy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Incident {
    pub at_ms: u64,
    pub kind: IncidentKind,
    pub component: ComponentName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub job_id: Option<String>,
    pub message: String,
}

#[derive(Default)]
pub struct IncidentLog {
    entries: Mutex<Vec<Incident>>,
}

impl IncidentLog {
    pub fn record(&self, incident: Incident) {
        tracing::warn!(kind = ?incident.kind, component = %incident.component, message = %incident.message, "incident");
        self.entries.lock().push(incident);
    }

    pub fn entries(&self) -> Vec<Incident> {
        self.entries.lock().clone()
    }

    pub fn count(&self, kind: IncidentKind) -> usize {
        self.entries.lock().iter().filter(|i| i.kind == kind).count()
    }
}

pub const PATIENCE: &str = "high load, patience is advised";

/// Instances per component with one round-robin cursor each.
#[derive(Default)]
pub struct Balancer {
    instances: RwLock<BTreeMap<ComponentName, Vec<Arc<ComponentInstance>>>>,
    cursors: RwLock<BTreeMap<ComponentName, Arc<AtomicUsize>>>,
}

impl Balancer {
    pub fn add(&self, inst: ComponentInstance) -> Result<Arc<ComponentInstance>> {
        let mut all = self.instances.write();
        let list = all.entry(inst.component).or_default();
        if list.iter().any(|i| i.instance_id == inst.instance_id) {
            return Err(Error::DuplicateId(inst.instance_id));
        }
        let inst = Arc::new(inst);
        list.push(inst.clone());
        self.cursors.write().entry(inst.component).or_default();
        Ok(inst)
    }

    pub fn instances(&self, c: ComponentName) -> Vec<Arc<ComponentInstance>> {
        self.instances.read().get(&c).cloned().unwrap_or_default()
    }

    pub fn all(&self) -> Vec<Arc<ComponentInstance>> {
        self.instances.read().values().flatten().cloned().collect()
    }

    pub fn find(&self, c: ComponentName, instance_id: &str) -> Option<Arc<ComponentInstance>> {
        self.instances(c).into_iter().find(|i| i.instance_id == instance_id)
    }

    /// Round-robin over healthy instances, skipping `exclude`.
    pub fn pick(&self, c: ComponentName, exclude: Option<&str>) -> Result<Arc<ComponentInstance>> {
        let healthy: Vec<Arc<ComponentInstance>> = self
            .instances(c)
            .into_iter()
            .filter(|i| i.health() == Health::Healthy && Some(i.instance_id.as_str()) != exclude)
            .collect();
        if healthy.is_empty() {
            return Err(Error::Overloaded(format!("no healthy {c} instance; {PATIENCE}")));
        }
        let cursor = self.cursors.read().get(&c).cloned().unwrap_or_default();
        let n = cursor.fetch_add(1, Ordering::SeqCst);
        Ok(healthy[n % healthy.len()].clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::components::NullClient;

    fn balancer(n: usize) -> Balancer {
        let b = Balancer::default();
        for i in 0..n {
            b.add(ComponentInstance::new(ComponentName::OffloadingApis, &format!("i{i}"), "local", Arc::new(NullClient)))
                .unwrap();
        }
        b
    }

    #[test]
    fn round_robin_is_fair() {
        let b = balancer(3);
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for _ in 0..6 {
            *counts.entry(b.pick(ComponentName::OffloadingApis, None).unwrap().instance_id.clone()).or_default() += 1;
        }
        assert_eq!(counts.values().copied().collect::<Vec<_>>(), vec![2, 2, 2]);
    }

    #[test]
    fn only_healthy_instances_are_chosen() {
        let b = balancer(3);
        for i in b.instances(ComponentName::OffloadingApis).iter().skip(1) {
            i.set_health(Health::Down);
        }
        for _ in 0..5 {
            assert_eq!(b.pick(ComponentName::OffloadingApis, None).unwrap().instance_id, "i0");
        }
    }

    #[test]
    fn no_healthy_instance_is_overloaded() {
        let b = balancer(2);
        for i in b.instances(ComponentName::OffloadingApis) {
            i.set_health(Health::Suspect);
        }
        let e = b.pick(ComponentName::OffloadingApis, None).unwrap_err();
        assert!(matches!(e, Error::Overloaded(ref m) if m.contains("patience is advised")));
        assert!(matches!(b.pick(ComponentName::AnalyticsEngine, None), Err(Error::Overloaded(_))));
    }

    #[test]
    fn exclusion_skips_the_failed_instance() {
        let b = balancer(2);
        for _ in 0..4 {
            assert_eq!(b.pick(ComponentName::OffloadingApis, Some("i0")).unwrap().instance_id, "i1");
        }
        let b = balancer(1);
        assert!(b.pick(ComponentName::OffloadingApis, Some("i0")).is_err());
    }

    #[test]
    fn duplicate_instance_ids_are_rejected() {
        let b = balancer(1);
        let dup = ComponentInstance::new(ComponentName::OffloadingApis, "i0", "local", Arc::new(NullClient));
        assert!(matches!(b.add(dup), Err(Error::DuplicateId(_))));
    }
}
