use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

/// One committed mutation of a watched collection. `value: None` is a delete.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Change {
    pub epoch: u64,
    pub seq: u64,
    pub key: String,
    pub value: Option<Vec<u8>>,
}

#[derive(Default)]
struct ChangeLog {
    epoch: u64,
    next_seq: u64,
    entries: VecDeque<Change>,
    /// Consumer id -> first sequence number it has not consumed yet.
    cursors: HashMap<u64, u64>,
}

impl ChangeLog {
    fn trim(&mut self) {
        match self.cursors.values().min() {
            None => self.entries.clear(),
            Some(&low) => {
                while self.entries.front().is_some_and(|c| c.seq < low) {
                    self.entries.pop_front();
                }
            }
        }
    }
}

static NEXT_CONSUMER: AtomicU64 = AtomicU64::new(1);

/// Per-collection write serialization and change log.
#[derive(Default)]
pub(crate) struct CollState {
    pub(crate) write_lock: tokio::sync::Mutex<()>,
    log: Mutex<ChangeLog>,
}

impl CollState {
    pub(crate) fn is_watched(&self) -> bool {
        !self.log.lock().cursors.is_empty()
    }

    pub(crate) fn record(&self, key: &str, value: Option<Vec<u8>>) {
        let mut log = self.log.lock();
        if log.cursors.is_empty() {
            return;
        }
        let seq = log.next_seq;
        log.next_seq += 1;
        let epoch = log.epoch;
        log.entries.push_back(Change { epoch, seq, key: key.to_owned(), value });
    }

    /// Starts a consumer at the current end of the log. With `new_epoch`
    /// the epoch counter is advanced first (migration fencing).
    pub(crate) fn subscribe(&self, new_epoch: bool) -> (u64, u64) {
        let mut log = self.log.lock();
        if new_epoch {
            log.epoch += 1;
        }
        let id = NEXT_CONSUMER.fetch_add(1, Ordering::Relaxed);
        let pos = log.next_seq;
        log.cursors.insert(id, pos);
        (id, log.epoch)
    }

    pub(crate) fn unsubscribe(&self, consumer: u64) {
        let mut log = self.log.lock();
        log.cursors.remove(&consumer);
        log.trim();
    }

    pub(crate) fn bump_epoch(&self) -> u64 {
        let mut log = self.log.lock();
        log.epoch += 1;
        log.epoch
    }

    /// Up to `max` changes not yet seen by `consumer`.
    pub(crate) fn pending(&self, consumer: u64, max: usize) -> Vec<Change> {
        let log = self.log.lock();
        let Some(&from) = log.cursors.get(&consumer) else { return Vec::new() };
        log.entries.iter().filter(|c| c.seq >= from).take(max).cloned().collect()
    }

    pub(crate) fn backlog(&self, consumer: u64) -> usize {
        let log = self.log.lock();
        let Some(&from) = log.cursors.get(&consumer) else { return 0 };
        log.entries.iter().filter(|c| c.seq >= from).count()
    }

    /// Marks everything up to and including `seq` as consumed.
    pub(crate) fn ack(&self, consumer: u64, seq: u64) {
        let mut log = self.log.lock();
        if let Some(c) = log.cursors.get_mut(&consumer) {
            *c = (*c).max(seq + 1);
        }
        log.trim();
    }
}
