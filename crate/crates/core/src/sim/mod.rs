//! Simulated multi-cloud federation: providers, capacity, placement,
//! a seeded logical clock and the scenario harness.

pub mod clock;
pub mod placement;
pub mod scenario;

use std::collections::BTreeMap;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use clock::{LoadProfile, SimClock, SimEvent};
pub use placement::{choose_placement, quote, CostQuote, Lambdas, PlacementDecision, PlacementMode, PlacementRequest};
pub use scenario::{run_scenario, simulate, ScenarioConfig, ScenarioName, ScenarioTrace, TraceEvent};

/// A provider's pricelist, capacity and network position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderDescriptor {
    pub provider_id: String,
    pub region: String,
    pub capacity_machines: u32,
    /// Currency per GB-hour.
    #[serde(default)]
    pub price_storage: f64,
    /// Currency per GB.
    #[serde(default)]
    pub price_egress: f64,
    /// Currency per 1000 requests.
    #[serde(default)]
    pub price_request: f64,
    /// Milliseconds to users in each region.
    #[serde(default)]
    pub latency_ms: BTreeMap<String, f64>,
}

impl ProviderDescriptor {
    pub fn new(provider_id: &str, region: &str, capacity_machines: u32) -> Self {
        ProviderDescriptor {
            provider_id: provider_id.to_owned(),
            region: region.to_owned(),
            capacity_machines,
            price_storage: 0.0,
            price_egress: 0.0,
            price_request: 0.0,
            latency_ms: BTreeMap::new(),
        }
    }

    pub fn with_prices(mut self, storage: f64, egress: f64, request: f64) -> Self {
        self.price_storage = storage;
        self.price_egress = egress;
        self.price_request = request;
        self
    }

    pub fn with_latency(mut self, region: &str, ms: f64) -> Self {
        self.latency_ms.insert(region.to_owned(), ms);
        self
    }

    /// Latency towards users in `region`. Unlisted regions count as local
    /// when they are the provider's own, otherwise as far away.
    pub fn latency_to(&self, region: &str) -> f64 {
        match self.latency_ms.get(region) {
            Some(ms) => *ms,
            None if region == self.region => 0.0,
            None => UNLISTED_LATENCY_MS,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.provider_id.is_empty() {
            return Err(Error::Config("provider_id must be non-empty".into()));
        }
        let prices = [self.price_storage, self.price_egress, self.price_request];
        if prices.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Config(format!("{}: prices must be finite and >= 0", self.provider_id)));
        }
        if self.latency_ms.values().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::Config(format!("{}: latencies must be finite and >= 0", self.provider_id)));
        }
        Ok(())
    }
}

pub const UNLISTED_LATENCY_MS: f64 = 1000.0;

/// Free/allocated machines of one provider.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapacityView {
    pub declared: u32,
    pub allocated: u32,
    pub free: u32,
}

/// The set of providers and their machine accounting.
pub struct Federation {
    providers: BTreeMap<String, ProviderDescriptor>,
    allocated: Mutex<BTreeMap<String, u32>>,
}

impl Federation {
    pub fn new(providers: Vec<ProviderDescriptor>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for p in providers {
            p.validate()?;
            if map.contains_key(&p.provider_id) {
                return Err(Error::DuplicateId(p.provider_id));
            }
            map.insert(p.provider_id.clone(), p);
        }
        // Where both directions are listed they must agree.
        for a in map.values() {
            for b in map.values() {
                if let (Some(x), Some(y)) = (a.latency_ms.get(&b.region), b.latency_ms.get(&a.region)) {
                    if a.region != b.region && x != y {
                        return Err(Error::Config(format!(
                            "asymmetric latency between {} and {}",
                            a.region, b.region
                        )));
                    }
                }
            }
        }
        let allocated = map.keys().map(|k| (k.clone(), 0)).collect();
        Ok(Federation { providers: map, allocated: Mutex::new(allocated) })
    }

    pub fn provider(&self, id: &str) -> Option<&ProviderDescriptor> {
        self.providers.get(id)
    }

    pub fn providers(&self) -> impl Iterator<Item = &ProviderDescriptor> {
        self.providers.values()
    }

    /// Providers paired with their free machine count.
    pub fn with_free(&self) -> Vec<(ProviderDescriptor, u32)> {
        let alloc = self.allocated.lock();
        self.providers.values().map(|p| (p.clone(), p.capacity_machines - alloc[&p.provider_id])).collect()
    }

    pub fn capacity(&self, id: &str) -> Option<CapacityView> {
        let p = self.providers.get(id)?;
        let allocated = self.allocated.lock()[id];
        Some(CapacityView { declared: p.capacity_machines, allocated, free: p.capacity_machines - allocated })
    }

    pub fn allocate(&self, id: &str, machines: u32) -> Result<()> {
        let p = self
            .providers
            .get(id)
            .ok_or_else(|| Error::CapacityExceeded(format!("unknown provider `{id}`")))?;
        let mut alloc = self.allocated.lock();
        let used = alloc.get_mut(id).expect("allocation entry per provider");
        if *used + machines > p.capacity_machines {
            return Err(Error::CapacityExceeded(format!(
                "{id}: {machines} requested, {} free",
                p.capacity_machines - *used
            )));
        }
        *used += machines;
        Ok(())
    }

    pub fn release(&self, id: &str, machines: u32) {
        if let Some(used) = self.allocated.lock().get_mut(id) {
            *used = used.saturating_sub(machines);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn allocation_never_exceeds_capacity() {
        let f = Federation::new(vec![ProviderDescriptor::new("EU-1", "EU", 3)]).unwrap();
        f.allocate("EU-1", 2).unwrap();
        assert!(matches!(f.allocate("EU-1", 2), Err(Error::CapacityExceeded(_))));
        f.allocate("EU-1", 1).unwrap();
        let c = f.capacity("EU-1").unwrap();
        assert_eq!(c.allocated + c.free, c.declared);
        f.release("EU-1", 3);
        assert_eq!(f.capacity("EU-1").unwrap().free, 3);
    }

    #[test]
    fn rejects_negative_prices_and_asymmetry() {
        let bad = ProviderDescriptor::new("X", "EU", 1).with_prices(-1.0, 0.0, 0.0);
        assert!(Federation::new(vec![bad]).is_err());
        let a = ProviderDescriptor::new("A", "EU", 1).with_latency("KR", 200.0);
        let b = ProviderDescriptor::new("B", "KR", 1).with_latency("EU", 250.0);
        assert!(Federation::new(vec![a.clone(), b]).is_err());
        let b = ProviderDescriptor::new("B", "KR", 1).with_latency("EU", 200.0);
        assert!(Federation::new(vec![a, b]).is_ok());
    }
}
