//! Cost-based placement over provider quotes.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::ProviderDescriptor;
use crate::error::{Error, Result};

/// Latency normalisation: 100 ms count as one unit of penalty.
pub const LATENCY_UNIT_MS: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementMode {
    #[default]
    CostFirst,
    AvailabilityFirst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementRequest {
    pub machines: u32,
    #[serde(default)]
    pub expected_storage_gb: f64,
    #[serde(default)]
    pub expected_egress_gb_per_h: f64,
    #[serde(default)]
    pub expected_requests_per_h: f64,
    pub user_region: String,
    #[serde(default)]
    pub mode: PlacementMode,
}

impl PlacementRequest {
    pub fn new(machines: u32, user_region: &str) -> Self {
        PlacementRequest {
            machines,
            expected_storage_gb: 0.0,
            expected_egress_gb_per_h: 0.0,
            expected_requests_per_h: 0.0,
            user_region: user_region.to_owned(),
            mode: PlacementMode::CostFirst,
        }
    }
}

/// Latency weights per mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lambdas {
    pub cost_first: f64,
    pub availability_first: f64,
}

impl Default for Lambdas {
    fn default() -> Self {
        Lambdas { cost_first: 1.0, availability_first: 4.0 }
    }
}

impl Lambdas {
    pub fn for_mode(&self, mode: PlacementMode) -> f64 {
        match mode {
            PlacementMode::CostFirst => self.cost_first,
            PlacementMode::AvailabilityFirst => self.availability_first,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostQuote {
    pub provider_id: String,
    pub region: String,
    /// Currency per hour.
    pub monetary: f64,
    pub latency_penalty: f64,
    pub score: f64,
}

/// Prices `r` on `p`, or `CapacityExceeded` when `free` machines do not suffice.
pub fn quote(p: &ProviderDescriptor, free: u32, r: &PlacementRequest, lambda: f64) -> Result<CostQuote> {
    if free < r.machines {
        return Err(Error::CapacityExceeded(format!("{}: {} free, {} requested", p.provider_id, free, r.machines)));
    }
    let monetary = r.expected_storage_gb * p.price_storage
        + r.expected_egress_gb_per_h * p.price_egress
        + (r.expected_requests_per_h / 1000.0) * p.price_request;
    let latency_penalty = p.latency_to(&r.user_region) / LATENCY_UNIT_MS;
    Ok(CostQuote {
        provider_id: p.provider_id.clone(),
        region: p.region.clone(),
        monetary,
        latency_penalty,
        score: monetary + lambda * latency_penalty,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementDecision {
    pub primary: CostQuote,
    /// Second-best provider, present in availability-first mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replica: Option<CostQuote>,
    /// Every feasible quote, best first.
    pub quotes: Vec<CostQuote>,
}

fn rank(a: &CostQuote, b: &CostQuote) -> Ordering {
    a.score.total_cmp(&b.score).then_with(|| a.provider_id.cmp(&b.provider_id))
}

/// Argmin score over feasible quotes, ties broken by provider id.
pub fn choose_placement(
    providers: &[(ProviderDescriptor, u32)],
    r: &PlacementRequest,
    lambdas: &Lambdas,
) -> Result<PlacementDecision> {
    let lambda = lambdas.for_mode(r.mode);
    let mut quotes: Vec<CostQuote> = providers.iter().filter_map(|(p, free)| quote(p, *free, r, lambda).ok()).collect();
    quotes.sort_by(rank);
    let mut it = quotes.iter().cloned();
    let primary = it
        .next()
        .ok_or_else(|| Error::NoFeasiblePlacement(format!("no provider can host {} machines", r.machines)))?;
    let replica = match r.mode {
        PlacementMode::CostFirst => None,
        PlacementMode::AvailabilityFirst => Some(it.next().ok_or_else(|| {
            Error::NoFeasiblePlacement("availability_first needs a second provider for the replica".into())
        })?),
    };
    Ok(PlacementDecision { primary, replica, quotes })
}
