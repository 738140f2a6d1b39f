use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Weak};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{CollectionRef, OffloadingApis, ReplicationLink, ReplicationMode, StoreEntry};
use crate::codec::Digest;
use crate::error::{Error, Result};
use crate::wrappers::{codes, SnapshotEntry, StoreKind, UniformQuery};

/// Fault injection for copies: may rewrite a value on its way to the
/// destination. Receives the record key and the value.
pub type CopyFault = Arc<dyn Fn(&str, &mut Vec<u8>) + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MigrationReport {
    pub source: CollectionRef,
    pub destination: CollectionRef,
    pub records_moved: u64,
    pub bytes: u64,
    pub duration_ms: u64,
    /// Writes fenced during copy and verification, re-applied before cutover.
    pub epochs_reapplied: u64,
    pub epoch: u64,
}

pub(crate) struct LinkState {
    pub(crate) link: ReplicationLink,
    consumer: u64,
    applied: HashMap<String, (u64, u64)>,
}

pub(crate) struct CopyStats {
    pub(crate) entries: Vec<SnapshotEntry>,
    pub(crate) bytes: u64,
}

impl OffloadingApis {
    pub fn set_copy_fault(&self, fault: Option<CopyFault>) {
        *self.copy_fault.write() = fault;
    }

    async fn snapshot_or_empty(&self, kind: StoreKind, ap: &str, coll: &str) -> Result<Vec<SnapshotEntry>> {
        match self.snapshot_at(kind, ap, coll).await {
            Err(Error::UnknownCollection(_)) => Ok(Vec::new()),
            other => other,
        }
    }

    pub(super) async fn raw_put(&self, kind: StoreKind, ap: &str, coll: &str, key: &str, value: Option<Vec<u8>>) -> Result<()> {
        let q = match value {
            Some(v) => UniformQuery::write("copy", coll, key, v),
            None => UniformQuery::delete("copy", coll, key),
        };
        let r = self.send(kind, ap, Some(q), None).await?;
        match r.error {
            None => Ok(()),
            Some(e) if e.code == codes::NOT_FOUND => Ok(()),
            Some(e) => Err(Error::WrapperError { code: e.code, message: e.message }),
        }
    }

    /// Phases 1 and 2: snapshot the source, copy every record, verify every
    /// digest at the destination. On failure the copied keys are removed again.
    pub(crate) async fn copy_verified(
        &self,
        src_kind: StoreKind,
        src_ap: &str,
        src_coll: &str,
        dst_kind: StoreKind,
        dst_ap: &str,
        dst_coll: &str,
    ) -> Result<CopyStats> {
        let entries = self.snapshot_or_empty(src_kind, src_ap, src_coll).await?;
        let fault = self.copy_fault.read().clone();
        let mut written: Vec<&str> = Vec::with_capacity(entries.len());
        let mut bytes = 0u64;
        let mut failure = None;
        for e in &entries {
            let mut v = e.value.clone();
            if let Some(f) = &fault {
                f(&e.key, &mut v);
            }
            bytes += e.value.len() as u64;
            match self.raw_put(dst_kind, dst_ap, dst_coll, &e.key, Some(v)).await {
                Ok(()) => written.push(&e.key),
                Err(err) => {
                    failure = Some(Error::MigrationFailed(format!("copy of {} failed: {}", e.key, err.detail())));
                    break;
                }
            }
        }
        if failure.is_none() {
            let at_dst: BTreeMap<String, Digest> = self
                .snapshot_or_empty(dst_kind, dst_ap, dst_coll)
                .await?
                .into_iter()
                .map(|e| (e.key, e.digest))
                .collect();
            let bad = entries.iter().filter(|e| at_dst.get(&e.key) != Some(&e.digest)).count();
            if bad > 0 {
                failure = Some(Error::VerificationFailed(format!(
                    "{bad} of {} records differ at the destination",
                    entries.len()
                )));
            }
        }
        if let Some(err) = failure {
            for k in written {
                let _ = self.raw_put(dst_kind, dst_ap, dst_coll, k, None).await;
            }
            return Err(err);
        }
        Ok(CopyStats { entries, bytes })
    }

    fn has_link_from(&self, c: &CollectionRef) -> bool {
        self.links.lock().values().any(|l| &l.link.source == c)
    }

    async fn lock_pair<'a>(
        a: &'a StoreEntry,
        b: &'a StoreEntry,
        a_id: &str,
        b_id: &str,
    ) -> (tokio::sync::MutexGuard<'a, ()>, Option<tokio::sync::MutexGuard<'a, ()>>) {
        if a_id == b_id {
            (a.lease.lock().await, None)
        } else if a_id < b_id {
            let x = a.lease.lock().await;
            (x, Some(b.lease.lock().await))
        } else {
            let y = b.lease.lock().await;
            (y, Some(a.lease.lock().await))
        }
    }

    /// Moves a collection: copy with digests, verify, re-apply writes fenced
    /// meanwhile, cut readers over to the destination, delete at the source.
    pub async fn migrate(&self, src: &CollectionRef, dst: &CollectionRef) -> Result<MigrationReport> {
        if src == dst {
            return Err(Error::SchemaViolation("source and destination are the same collection".into()));
        }
        let started = Instant::now();
        let se = self.entry(&src.store_id)?;
        let de = self.entry(&dst.store_id)?;
        let _leases = Self::lock_pair(&se, &de, &src.store_id, &dst.store_id).await;
        self.ensure_ready(&se)?;
        self.ensure_ready(&de)?;
        if self.has_link_from(src) {
            return Err(Error::StoreNotReady(format!("{src} feeds a replication link; remove it first")));
        }
        let sd = se.snapshot();
        let dd = de.snapshot();
        if !self.snapshot_or_empty(dd.kind, &dd.access_point, &dst.collection).await?.is_empty() {
            return Err(Error::MigrationFailed(format!("destination {dst} is not empty")));
        }
        let src_coll = self.coll(src);
        let (consumer, epoch) = src_coll.subscribe(true);
        let copied = match self.copy_verified(sd.kind, &sd.access_point, &src.collection, dd.kind, &dd.access_point, &dst.collection).await {
            Ok(c) => c,
            Err(e) => {
                src_coll.unsubscribe(consumer);
                return Err(e);
            }
        };
        // Phase 3, fenced: nothing else writes the source from here on.
        let _w = src_coll.write_lock.lock().await;
        let fenced = src_coll.pending(consumer, usize::MAX);
        let mut replay_err = None;
        for ch in &fenced {
            if let Err(e) = self.raw_put(dd.kind, &dd.access_point, &dst.collection, &ch.key, ch.value.clone()).await {
                replay_err = Some(e);
                break;
            }
        }
        if let Some(e) = replay_err {
            for entry in self.snapshot_or_empty(dd.kind, &dd.access_point, &dst.collection).await.unwrap_or_default() {
                let _ = self.raw_put(dd.kind, &dd.access_point, &dst.collection, &entry.key, None).await;
            }
            src_coll.unsubscribe(consumer);
            return Err(Error::MigrationFailed(format!("re-applying fenced writes failed: {}", e.detail())));
        }
        let dst_coll = self.coll(dst);
        if dst_coll.is_watched() {
            for e in &copied.entries {
                dst_coll.record(&e.key, Some(e.value.clone()));
            }
            for ch in &fenced {
                dst_coll.record(&ch.key, ch.value.clone());
            }
        }
        {
            let mut aliases = self.aliases.write();
            aliases.remove(dst);
            aliases.insert(src.clone(), dst.clone());
        }
        for e in self.snapshot_or_empty(sd.kind, &sd.access_point, &src.collection).await? {
            self.raw_put(sd.kind, &sd.access_point, &src.collection, &e.key, None).await?;
        }
        src_coll.unsubscribe(consumer);
        {
            let mut locs = self.dataset_locations.write();
            for set in locs.values_mut() {
                if set.remove(src) {
                    set.insert(dst.clone());
                }
            }
        }
        Ok(MigrationReport {
            source: src.clone(),
            destination: dst.clone(),
            records_moved: copied.entries.len() as u64,
            bytes: copied.bytes,
            duration_ms: started.elapsed().as_millis() as u64,
            epochs_reapplied: fenced.len() as u64,
            epoch,
        })
    }

    /// One-shot copies and verifies without cutover. Continuous additionally
    /// ships every later change in `(epoch, seq)` order on each sync cycle.
    pub async fn replicate(&self, src: &CollectionRef, dst: &CollectionRef, mode: ReplicationMode) -> Result<ReplicationLink> {
        if src == dst {
            return Err(Error::SchemaViolation("source and destination are the same collection".into()));
        }
        let se = self.entry(&src.store_id)?;
        let de = self.entry(&dst.store_id)?;
        self.ensure_ready(&se)?;
        self.ensure_ready(&de)?;
        let exists = |s: &Self| s.links.lock().values().any(|l| &l.link.source == src && &l.link.dest == dst);
        if mode == ReplicationMode::Continuous && exists(self) {
            return Err(Error::LinkExists(format!("{src} -> {dst}")));
        }
        let sd = se.snapshot();
        let dd = de.snapshot();
        let src_coll = self.coll(src);
        let sub = match mode {
            ReplicationMode::Continuous => Some(src_coll.subscribe(false)),
            ReplicationMode::OneShot => None,
        };
        let copied = match self.copy_verified(sd.kind, &sd.access_point, &src.collection, dd.kind, &dd.access_point, &dst.collection).await {
            Ok(c) => c,
            Err(e) => {
                if let Some((c, _)) = sub {
                    src_coll.unsubscribe(c);
                }
                return Err(e);
            }
        };
        let dst_coll = self.coll(dst);
        if dst_coll.is_watched() {
            for e in &copied.entries {
                dst_coll.record(&e.key, Some(e.value.clone()));
            }
        }
        let link_id = format!("link-{}", self.next_link.fetch_add(1, std::sync::atomic::Ordering::Relaxed));
        let last_epoch = sub.map_or(0, |(_, e)| e);
        let link = ReplicationLink { link_id: link_id.clone(), source: src.clone(), dest: dst.clone(), mode, last_epoch, last_seq: 0 };
        if let Some((consumer, _)) = sub {
            let mut links = self.links.lock();
            if links.values().any(|l| &l.link.source == src && &l.link.dest == dst) {
                drop(links);
                src_coll.unsubscribe(consumer);
                return Err(Error::LinkExists(format!("{src} -> {dst}")));
            }
            links.insert(link_id, LinkState { link: link.clone(), consumer, applied: HashMap::new() });
        }
        Ok(link)
    }

    pub fn links(&self) -> Vec<ReplicationLink> {
        self.links.lock().values().map(|l| l.link.clone()).collect()
    }

    /// Changes recorded at the source and not yet shipped.
    pub fn link_backlog(&self, link_id: &str) -> Result<usize> {
        let (src, consumer) = {
            let links = self.links.lock();
            let l = links.get(link_id).ok_or_else(|| Error::NotFound(link_id.to_owned()))?;
            (l.link.source.clone(), l.consumer)
        };
        Ok(self.coll(&src).backlog(consumer))
    }

    pub fn remove_link(&self, link_id: &str) -> Result<ReplicationLink> {
        let state = self.links.lock().remove(link_id).ok_or_else(|| Error::NotFound(link_id.to_owned()))?;
        self.coll(&state.link.source).unsubscribe(state.consumer);
        self.redirects.write().retain(|k, v| !(k == &state.link.source && v == &state.link.dest));
        Ok(state.link)
    }

    pub(crate) fn drop_links_touching(&self, store_id: &str) {
        let ids: Vec<String> = self
            .links
            .lock()
            .values()
            .filter(|l| l.link.source.store_id == store_id || l.link.dest.store_id == store_id)
            .map(|l| l.link.link_id.clone())
            .collect();
        for id in ids {
            let _ = self.remove_link(&id);
        }
    }

    /// Applies one shipped change at a destination collection.
    async fn apply_change(&self, dst: &CollectionRef, key: &str, value: Option<Vec<u8>>) -> Result<()> {
        let entry = self.entry(&dst.store_id)?;
        let _gate = entry.gate.read().await;
        let coll = self.coll(dst);
        let _w = coll.write_lock.lock().await;
        let d = entry.snapshot();
        self.raw_put(d.kind, &d.access_point, &dst.collection, key, value.clone()).await?;
        if coll.is_watched() {
            coll.record(key, value);
        }
        Ok(())
    }

    /// One pull round over every continuous link. Returns changes shipped.
    pub async fn sync_cycle(&self) -> Result<usize> {
        let work: Vec<(String, CollectionRef, CollectionRef, u64)> = self
            .links
            .lock()
            .values()
            .filter(|l| l.link.mode == ReplicationMode::Continuous)
            .map(|l| (l.link.link_id.clone(), l.link.source.clone(), l.link.dest.clone(), l.consumer))
            .collect();
        let mut shipped = 0;
        for (id, src, dst, consumer) in work {
            let src_coll = self.coll(&src);
            let batch = src_coll.pending(consumer, self.config.sync_batch);
            let Some(last) = batch.last().map(|c| (c.epoch, c.seq)) else { continue };
            for ch in &batch {
                let newer = {
                    let links = self.links.lock();
                    let Some(l) = links.get(&id) else { break };
                    l.applied.get(&ch.key).is_none_or(|prev| *prev < (ch.epoch, ch.seq))
                };
                if newer {
                    self.apply_change(&dst, &ch.key, ch.value.clone()).await?;
                    if let Some(l) = self.links.lock().get_mut(&id) {
                        l.applied.insert(ch.key.clone(), (ch.epoch, ch.seq));
                    }
                }
                shipped += 1;
            }
            src_coll.ack(consumer, last.1);
            if let Some(l) = self.links.lock().get_mut(&id) {
                l.link.last_epoch = last.0;
                l.link.last_seq = last.1;
            }
        }
        Ok(shipped)
    }

    /// Runs [`sync_cycle`](Self::sync_cycle) every `period` until the
    /// engine is dropped.
    pub fn spawn_sync_loop(self: &Arc<Self>, period: Duration) -> tokio::task::JoinHandle<()> {
        let weak: Weak<Self> = Arc::downgrade(self);
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(period);
            tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
            loop {
                tick.tick().await;
                let Some(this) = weak.upgrade() else { break };
                if let Err(e) = this.sync_cycle().await {
                    tracing::warn!(error = %e, "replication sync cycle failed");
                }
            }
        })
    }
}
