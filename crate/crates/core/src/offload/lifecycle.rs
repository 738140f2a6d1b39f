use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::RwLock;

use super::{DataStoreDescriptor, MachineDescriptor, OffloadingApis, StoreEntry, StoreState};
use crate::error::{Error, Result};
use crate::wrappers::StoreKind;

impl OffloadingApis {
    fn machines_on(&self, provider_id: &str, n: u32) -> Vec<MachineDescriptor> {
        (0..n)
            .map(|_| {
                let m = self.next_machine.fetch_add(1, Ordering::Relaxed);
                MachineDescriptor { machine_id: Some(format!("{provider_id}/m{m}")), provider_id: provider_id.to_owned() }
            })
            .collect()
    }

    /// Allocates a new store of `kind` on `provider_id`.
    pub async fn create_store(
        &self,
        kind: StoreKind,
        provider_id: &str,
        machines: u32,
        store_id: Option<String>,
    ) -> Result<DataStoreDescriptor> {
        if machines == 0 {
            return Err(Error::SchemaViolation("a store needs at least one machine".into()));
        }
        self.wrapper_for(kind, false)?;
        let store_id = match store_id {
            Some(s) if s.trim().is_empty() || s.contains('/') => {
                return Err(Error::SchemaViolation("store_id must be non-empty and contain no `/`".into()))
            }
            Some(s) => s,
            None => loop {
                let s = format!("store-{}", self.next_store.fetch_add(1, Ordering::Relaxed));
                if !self.stores.read().contains_key(&s) {
                    break s;
                }
            },
        };
        if self.stores.read().contains_key(&store_id) {
            return Err(Error::DuplicateId(store_id));
        }
        self.federation.allocate(provider_id, machines)?;
        let access_point = self.host.provision(kind, provider_id, machines as usize);
        let desc = DataStoreDescriptor {
            store_id: store_id.clone(),
            kind,
            provider_id: provider_id.to_owned(),
            access_point: access_point.clone(),
            instances: self.machines_on(provider_id, machines),
            state: StoreState::Ready,
            acid: self.kind_is_transactional(kind),
        };
        let entry = Arc::new(StoreEntry {
            desc: RwLock::new(desc.clone()),
            gate: tokio::sync::RwLock::new(()),
            lease: tokio::sync::Mutex::new(()),
            waiting_writes: AtomicUsize::new(0),
            inflight: AtomicU64::new(0),
            reads: AtomicU64::new(0),
            writes: AtomicU64::new(0),
        });
        {
            let mut stores = self.stores.write();
            if stores.contains_key(&store_id) {
                drop(stores);
                self.host.decommission(&access_point);
                self.federation.release(provider_id, machines);
                return Err(Error::DuplicateId(store_id));
            }
            stores.insert(store_id, entry);
        }
        Ok(desc)
    }

    fn release_machines(&self, machines: &[MachineDescriptor]) {
        let mut per: BTreeMap<&str, u32> = BTreeMap::new();
        for m in machines {
            *per.entry(m.provider_id.as_str()).or_default() += 1;
        }
        for (p, n) in per {
            self.federation.release(p, n);
        }
    }

    /// Tears a store down, releasing its machines and every link touching it.
    pub async fn destroy_store(&self, store_id: &str) -> Result<DataStoreDescriptor> {
        let entry = self.entry(store_id)?;
        let _lease = entry.lease.lock().await;
        let _gate = entry.gate.write().await;
        let mut desc = {
            let mut d = entry.desc.write();
            if d.state == StoreState::Destroyed {
                return Err(Error::StoreNotFound(store_id.to_owned()));
            }
            d.state = StoreState::Destroyed;
            d.clone()
        };
        self.stores.write().remove(store_id);
        self.drop_links_touching(store_id);
        self.aliases.write().retain(|k, v| k.store_id != store_id && v.store_id != store_id);
        self.redirects.write().retain(|k, v| k.store_id != store_id && v.store_id != store_id);
        self.colls.lock().retain(|c, _| c.store_id != store_id);
        self.host.decommission(&desc.access_point);
        self.release_machines(&desc.instances);
        desc.instances.clear();
        Ok(desc)
    }

    /// Horizontal scaling onto additional machines. Reads continue during
    /// scaling; writes wait and are applied once the new layout is in place.
    pub async fn scale_store(&self, store_id: &str, machines: &[MachineDescriptor]) -> Result<DataStoreDescriptor> {
        if machines.is_empty() {
            return Err(Error::SchemaViolation("scale_store needs a non-empty list of machines".into()));
        }
        let entry = self.entry(store_id)?;
        let _lease = entry.lease.lock().await;
        self.ensure_ready(&entry)?;
        let mut per: BTreeMap<String, u32> = BTreeMap::new();
        for m in machines {
            *per.entry(m.provider_id.clone()).or_default() += 1;
        }
        let mut taken: Vec<(String, u32)> = Vec::new();
        for (p, n) in &per {
            if let Err(e) = self.federation.allocate(p, *n) {
                for (q, k) in taken {
                    self.federation.release(&q, k);
                }
                return Err(e);
            }
            taken.push((p.clone(), *n));
        }
        let _gate = entry.gate.write().await;
        entry.desc.write().state = StoreState::Scaling;
        if self.config.provision_delay_ms > 0 {
            tokio::time::sleep(Duration::from_millis(self.config.provision_delay_ms)).await;
        }
        let mut added: Vec<MachineDescriptor> = Vec::new();
        for m in machines {
            let id = m.machine_id.clone().unwrap_or_else(|| {
                format!("{}/m{}", m.provider_id, self.next_machine.fetch_add(1, Ordering::Relaxed))
            });
            added.push(MachineDescriptor { machine_id: Some(id), provider_id: m.provider_id.clone() });
        }
        let mut d = entry.desc.write();
        d.instances.extend(added);
        if let Some(engine) = self.host.get(&d.access_point) {
            engine.rebalance(d.instances.len());
        }
        d.state = StoreState::Ready;
        Ok(d.clone())
    }

    /// Releases the `n` most recently added instances.
    pub async fn release_instances(&self, store_id: &str, n: u32) -> Result<DataStoreDescriptor> {
        let entry = self.entry(store_id)?;
        let _lease = entry.lease.lock().await;
        self.ensure_ready(&entry)?;
        let have = entry.desc.read().instances.len();
        if n == 0 || n as usize >= have {
            return Err(Error::SchemaViolation(format!("cannot release {n} of {have} instances")));
        }
        let _gate = entry.gate.write().await;
        entry.desc.write().state = StoreState::Scaling;
        let mut d = entry.desc.write();
        let keep = have - n as usize;
        let released: Vec<MachineDescriptor> = d.instances.split_off(keep);
        if let Some(engine) = self.host.get(&d.access_point) {
            engine.rebalance(keep);
        }
        self.release_machines(&released);
        d.state = StoreState::Ready;
        Ok(d.clone())
    }

    pub(super) fn ensure_ready(&self, entry: &StoreEntry) -> Result<()> {
        let d = entry.desc.read();
        match d.state {
            StoreState::Ready => Ok(()),
            StoreState::Destroyed => Err(Error::StoreNotFound(d.store_id.clone())),
            s => Err(Error::StoreNotReady(format!("{} is {}", d.store_id, format!("{s:?}").to_lowercase()))),
        }
    }

    /// Moves a store to another provider: create on the target, copy and
    /// verify every collection, swap the access point, destroy the source.
    /// Any failure leaves the store where it was.
    pub async fn relocate_store(&self, store_id: &str, provider_id: &str) -> Result<DataStoreDescriptor> {
        let entry = self.entry(store_id)?;
        let _lease = entry.lease.lock().await;
        self.ensure_ready(&entry)?;
        let old = entry.snapshot();
        let n = old.instances.len() as u32;
        self.federation.allocate(provider_id, n)?;
        let _gate = entry.gate.write().await;
        entry.desc.write().state = StoreState::Relocating;
        let new_ap = self.host.provision(old.kind, provider_id, n as usize);
        let collections = self.host.get(&old.access_point).map(|e| e.collections()).unwrap_or_default();
        let mut failure = None;
        for c in &collections {
            if let Err(e) = self.copy_verified(old.kind, &old.access_point, c, old.kind, &new_ap, c).await {
                failure = Some(e);
                break;
            }
        }
        if let Some(e) = failure {
            self.host.decommission(&new_ap);
            self.federation.release(provider_id, n);
            entry.desc.write().state = StoreState::Ready;
            return Err(Error::MigrationFailed(format!("relocation of {store_id} aborted: {}", e.detail())));
        }
        let mut d = entry.desc.write();
        d.access_point = new_ap;
        d.provider_id = provider_id.to_owned();
        d.instances = self.machines_on(provider_id, n);
        d.state = StoreState::Ready;
        self.host.decommission(&old.access_point);
        self.release_machines(&old.instances);
        Ok(d.clone())
    }
}
