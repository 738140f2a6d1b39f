//! Seeded logical clock driving arrivals, replication cycles and health
//! probes on a single timeline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

/// Request arrival rate over time, in requests per simulated second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum LoadProfile {
    Constant { rps: f64 },
    /// Linear rise from `base` to `peak`, a plateau, then a linear fall back.
    Ramp { base_rps: f64, peak_rps: f64, start_ms: u64, up_ms: u64, hold_ms: u64, down_ms: u64 },
}

impl LoadProfile {
    pub fn rate_at(&self, t_ms: u64) -> f64 {
        match *self {
            LoadProfile::Constant { rps } => rps,
            LoadProfile::Ramp { base_rps, peak_rps, start_ms, up_ms, hold_ms, down_ms } => {
                let t = t_ms as f64;
                let s = start_ms as f64;
                let (u, h, d) = (up_ms as f64, hold_ms as f64, down_ms as f64);
                let span = peak_rps - base_rps;
                if t < s {
                    base_rps
                } else if t < s + u {
                    base_rps + span * (t - s) / u.max(1.0)
                } else if t < s + u + h {
                    peak_rps
                } else if t < s + u + h + d {
                    peak_rps - span * (t - s - u - h) / d.max(1.0)
                } else {
                    base_rps
                }
            }
        }
    }

    pub fn max_rate(&self) -> f64 {
        match *self {
            LoadProfile::Constant { rps } => rps,
            LoadProfile::Ramp { base_rps, peak_rps, .. } => base_rps.max(peak_rps),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SimEvent {
    Arrival { at_ms: u64, seq: u64 },
    ReplicationCycle { at_ms: u64 },
    HealthProbe { at_ms: u64 },
}

impl SimEvent {
    pub fn at_ms(&self) -> u64 {
        match *self {
            SimEvent::Arrival { at_ms, .. } | SimEvent::ReplicationCycle { at_ms } | SimEvent::HealthProbe { at_ms } => {
                at_ms
            }
        }
    }
}

/// Deterministic given the seed, the load profile and the sequence of `dt`s.
pub struct SimClock {
    now_ms: u64,
    rng: ChaCha8Rng,
    load: LoadProfile,
    /// Next arrival candidate for thinning, in fractional milliseconds.
    candidate_ms: f64,
    arrivals: u64,
    replication_period_ms: u64,
    next_replication_ms: u64,
    probe_period_ms: u64,
    next_probe_ms: u64,
}

impl SimClock {
    pub fn new(seed: u64, load: LoadProfile) -> Self {
        let mut c = SimClock {
            now_ms: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            load,
            candidate_ms: 0.0,
            arrivals: 0,
            replication_period_ms: 0,
            next_replication_ms: 0,
            probe_period_ms: 0,
            next_probe_ms: 0,
        };
        c.candidate_ms = c.next_candidate(0.0);
        c
    }

    /// Period 0 disables the event.
    pub fn with_replication_period(mut self, ms: u64) -> Self {
        self.replication_period_ms = ms;
        self.next_replication_ms = ms;
        self
    }

    pub fn with_probe_period(mut self, ms: u64) -> Self {
        self.probe_period_ms = ms;
        self.next_probe_ms = ms;
        self
    }

    pub fn now_ms(&self) -> u64 {
        self.now_ms
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    fn next_candidate(&mut self, from: f64) -> f64 {
        let max = self.load.max_rate();
        if max <= 0.0 {
            return f64::INFINITY;
        }
        let exp = Exp::new(max / 1000.0).expect("positive rate");
        from + exp.sample(&mut self.rng)
    }

    /// Advances by `dt_ms` and returns every event in `(now, now + dt]`,
    /// ordered by time.
    pub fn advance(&mut self, dt_ms: u64) -> Vec<SimEvent> {
        let end = self.now_ms + dt_ms;
        let mut events = Vec::new();
        // Poisson arrivals by thinning against the peak rate.
        while self.candidate_ms <= end as f64 {
            let t = self.candidate_ms;
            let accept = self.load.rate_at(t as u64) / self.load.max_rate();
            if self.rng.random::<f64>() < accept {
                self.arrivals += 1;
                events.push(SimEvent::Arrival { at_ms: (t.ceil() as u64).max(self.now_ms + 1), seq: self.arrivals });
            }
            self.candidate_ms = self.next_candidate(t);
        }
        if self.replication_period_ms > 0 {
            while self.next_replication_ms <= end {
                events.push(SimEvent::ReplicationCycle { at_ms: self.next_replication_ms });
                self.next_replication_ms += self.replication_period_ms;
            }
        }
        if self.probe_period_ms > 0 {
            while self.next_probe_ms <= end {
                events.push(SimEvent::HealthProbe { at_ms: self.next_probe_ms });
                self.next_probe_ms += self.probe_period_ms;
            }
        }
        events.sort_by_key(|e| (e.at_ms(), *e));
        self.now_ms = end;
        events
    }
}

/// Convenience wrapper matching the simulator's public operation.
pub fn advance_clock(clock: &mut SimClock, dt_ms: u64) -> Vec<SimEvent> {
    clock.advance(dt_ms)
}
