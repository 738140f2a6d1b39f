use std::sync::atomic::Ordering;

use serde::{Deserialize, Serialize};

use super::{CollectionRef, MachineDescriptor, OffloadingApis, ReplicationMode};
use crate::error::{Error, Result};
use crate::protocol::{Credentials, Role};
use crate::security::envelope::Envelope;
use crate::security::DataAction;
use crate::sim::{choose_placement, PlacementRequest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum OffloadAction {
    /// Reads of each source collection now go to its continuous replica.
    Redirect { targets: Vec<(CollectionRef, CollectionRef)> },
    /// Machines added from the cheapest provider.
    Scale { provider_id: String, machines: Vec<MachineDescriptor>, score: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffloadPlan {
    pub store_id: String,
    /// Queue-depth reading that triggered the plan.
    pub trigger: u64,
    pub action: OffloadAction,
    pub created_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Anonymize,
    Encrypt,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformReport {
    pub dataset_id: String,
    pub which: TransformKind,
    pub records: u64,
    pub rewritten: u64,
}

impl OffloadingApis {
    /// Relieves a bottlenecked store: redirect reads to a continuous replica
    /// when one exists, otherwise scale onto the cheapest available machine.
    pub async fn offload(&self, store_id: &str, reading: Option<u64>) -> Result<OffloadPlan> {
        let entry = self.entry(store_id)?;
        let depth = reading.unwrap_or_else(|| entry.inflight.load(Ordering::SeqCst));
        if depth <= self.config.q_high {
            return Err(Error::NoBottleneck(format!(
                "{store_id}: queue depth {depth} is within Q_high {}",
                self.config.q_high
            )));
        }
        let replicas: Vec<(CollectionRef, CollectionRef)> = self
            .links()
            .into_iter()
            .filter(|l| l.mode == ReplicationMode::Continuous && l.source.store_id == store_id)
            .map(|l| (l.source, l.dest))
            .collect();
        let action = if !replicas.is_empty() {
            let mut r = self.redirects.write();
            for (s, d) in &replicas {
                r.insert(s.clone(), d.clone());
            }
            OffloadAction::Redirect { targets: replicas }
        } else {
            let desc = entry.snapshot();
            let region = self.federation.provider(&desc.provider_id).map(|p| p.region.clone()).unwrap_or_default();
            let req = PlacementRequest::new(1, &region);
            let decision = choose_placement(&self.federation.with_free(), &req, &self.config.lambdas)
                .map_err(|_| Error::NoRemedy(format!("{store_id}: no replica and no free capacity in the federation")))?;
            let machines = vec![MachineDescriptor::on(&decision.primary.provider_id)];
            let scaled = match self.scale_store(store_id, &machines).await {
                Ok(d) => d,
                Err(Error::CapacityExceeded(m)) => return Err(Error::NoRemedy(m)),
                Err(e) => return Err(e),
            };
            let added = scaled.instances[scaled.instances.len() - machines.len()..].to_vec();
            OffloadAction::Scale { provider_id: decision.primary.provider_id, machines: added, score: decision.primary.score }
        };
        let plan = OffloadPlan { store_id: store_id.to_owned(), trigger: depth, action, created_at: self.now_ms() };
        self.plans.lock().push(plan.clone());
        tracing::info!(store = store_id, depth, "off-load plan applied");
        Ok(plan)
    }

    pub fn plans(&self) -> Vec<OffloadPlan> {
        self.plans.lock().clone()
    }

    /// Drops read redirects from `store_id`'s collections.
    pub fn clear_redirects(&self, store_id: &str) {
        self.redirects.write().retain(|k, _| k.store_id != store_id);
    }

    /// Broadens read access to `audience`. Only the owner may publish.
    pub fn publish(&self, who: &Credentials, dataset_id: &str, audience: &[String]) -> Result<u64> {
        let entry = self.security.dataset(dataset_id).ok_or_else(|| Error::UnknownDataset(dataset_id.to_owned()))?;
        if entry.owner != who.principal_id {
            return Err(Error::AccessDenied(format!("only the owner of {dataset_id} may publish it")));
        }
        if audience.is_empty() {
            return Ok(self.security.version());
        }
        self.security.grant(who, dataset_id, DataAction::Read, audience)
    }

    /// Rewrites every stored record of a dataset with the transform, under a
    /// fresh epoch per location. Records already carrying the transform are
    /// left alone. If any record cannot be transformed nothing is written.
    pub async fn apply_transform(&self, who: &Credentials, dataset_id: &str, which: TransformKind) -> Result<TransformReport> {
        let entry = self.security.dataset(dataset_id).ok_or_else(|| Error::UnknownDataset(dataset_id.to_owned()))?;
        if entry.owner != who.principal_id && !who.has_role(Role::SecurityAdmin) {
            return Err(Error::AccessDenied(format!("{which:?} of {dataset_id} requires ownership or security_admin").to_lowercase()));
        }
        let protocols = self.security.snapshot().protocols(entry.class);
        let permitted = match which {
            TransformKind::Anonymize => protocols.anonymize,
            TransformKind::Encrypt => protocols.encrypt,
        };
        if !permitted {
            return Err(Error::TransformFailure(format!("protocols for class {} forbid this transform", entry.class)));
        }
        let mut report = TransformReport { dataset_id: dataset_id.to_owned(), which, records: 0, rewritten: 0 };
        for loc in self.dataset_locations(dataset_id) {
            let target = self.resolve(&loc);
            let store = self.entry(&target.store_id)?;
            let _gate = store.gate.read().await;
            let coll = self.coll(&target);
            let _w = coll.write_lock.lock().await;
            coll.bump_epoch();
            let d = store.snapshot();
            let entries = match self.snapshot_at(d.kind, &d.access_point, &target.collection).await {
                Err(Error::UnknownCollection(_)) => continue,
                other => other?,
            };
            let mut out = Vec::new();
            for e in &entries {
                let env = Envelope::decode(&e.value).map_err(|err| {
                    Error::TransformFailure(format!("{}: not a protected record ({})", e.key, err.detail()))
                })?;
                if let Some(next) = self.transform_one(env, which, &protocols.anonymize_fields)? {
                    out.push((e.key.clone(), next));
                }
            }
            report.records += entries.len() as u64;
            for (k, v) in out {
                self.raw_put(d.kind, &d.access_point, &target.collection, &k, Some(v.clone())).await?;
                if coll.is_watched() {
                    coll.record(&k, Some(v));
                }
                report.rewritten += 1;
            }
        }
        Ok(report)
    }

    fn transform_one(&self, mut env: Envelope, which: TransformKind, fields: &[String]) -> Result<Option<Vec<u8>>> {
        match which {
            TransformKind::Encrypt if env.flags.encrypted => return Ok(None),
            TransformKind::Encrypt => {
                env.body = self.security.cipher().seal(&env.owner, &env.body)?;
                env.flags.encrypted = true;
            }
            TransformKind::Anonymize => {
                let plain = if env.flags.encrypted {
                    self.security.cipher().open(&env.owner, &env.body)?
                } else {
                    env.body.clone()
                };
                let masked = self.security.anonymizer().mask(&plain, fields)?;
                if masked == plain && env.flags.anonymized {
                    return Ok(None);
                }
                env.body = if env.flags.encrypted { self.security.cipher().seal(&env.owner, &masked)? } else { masked };
                env.flags.anonymized = true;
            }
        }
        env.flags.integrity = true;
        env.encode().map(Some)
    }
}
