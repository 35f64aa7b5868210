//! Per-subnet flow monitoring, token-bucket rate limiting and the control-plane
//! agent that turns monitor statistics into rate caps.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::model::SimTime;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SubnetStats {
    pub packets: u64,
    pub bytes: u64,
    pub last_seen: SimTime,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FlowStats {
    pub subnets: BTreeMap<u16, SubnetStats>,
    pub epoch: u64,
}

impl FlowStats {
    pub fn snapshot(&self) -> FlowStats {
        self.clone()
    }

    pub fn total_packets(&self) -> u64 {
        self.subnets.values().map(|s| s.packets).sum()
    }

    pub fn total_bytes(&self) -> u64 {
        self.subnets.values().map(|s| s.bytes).sum()
    }

    /// Starts a new epoch; counters restart from zero.
    pub fn reset(&mut self) {
        self.subnets.clear();
        self.epoch += 1;
    }
}

pub fn monitor_update(stats: &mut FlowStats, src_subnet: u16, bytes: u64, now: SimTime) {
    let s = stats.subnets.entry(src_subnet).or_default();
    s.packets += 1;
    s.bytes += bytes;
    s.last_seen = now;
}

/// Cap value meaning "no limit".
pub const UNCAPPED: u64 = u64::MAX;

const NS_PER_S: u128 = 1_000_000_000;

/// Token bucket in exact integer units of bit·ns·(1/s): one byte costs
/// `8e9` units and a cap of `r` bit/s adds `r` units per nanosecond.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TokenBucket {
    cap_bps: u64,
    burst_bytes: u64,
    tokens: u128,
    last: SimTime,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LimitDecision {
    Pass,
    Hold { until: SimTime },
}

impl TokenBucket {
    /// Starts full.
    pub fn new(cap_bps: u64, burst_bytes: u64, now: SimTime) -> Self {
        TokenBucket { cap_bps, burst_bytes, tokens: Self::units(burst_bytes), last: now }
    }

    fn units(bytes: u64) -> u128 {
        bytes as u128 * 8 * NS_PER_S
    }

    pub fn cap_bps(&self) -> u64 {
        self.cap_bps
    }

    /// Changes the rate, keeping accumulated tokens.
    pub fn set_cap(&mut self, cap_bps: u64, now: SimTime) {
        self.refill(now);
        self.cap_bps = cap_bps;
    }

    fn tokens_at(&self, now: SimTime) -> u128 {
        let dt = now.since(self.last) as u128;
        (self.tokens + dt * self.cap_bps as u128).min(Self::units(self.burst_bytes))
    }

    fn refill(&mut self, now: SimTime) {
        if self.cap_bps != UNCAPPED {
            self.tokens = self.tokens_at(now);
        }
        self.last = self.last.max(now);
    }

    /// Earliest time at or after `now` at which `bytes` can pass.
    pub fn ready_at(&self, bytes: u64, now: SimTime) -> SimTime {
        if self.cap_bps == UNCAPPED {
            return now;
        }
        let cost = Self::units(bytes);
        let at = now.max(self.last);
        let have = self.tokens_at(at);
        if have >= cost {
            return at;
        }
        if self.cap_bps == 0 {
            return SimTime::MAX;
        }
        at + (cost - have).div_ceil(self.cap_bps as u128) as u64
    }

    fn take(&mut self, bytes: u64, now: SimTime) {
        self.refill(now);
        if self.cap_bps != UNCAPPED {
            self.tokens -= Self::units(bytes).min(self.tokens);
        }
    }
}

/// Consumes tokens for a `bytes`-byte packet if enough have accrued.
pub fn rate_limit(bucket: &mut TokenBucket, bytes: u64, now: SimTime) -> LimitDecision {
    let at = bucket.ready_at(bytes, now);
    if at == now {
        bucket.take(bytes, now);
        LimitDecision::Pass
    } else {
        LimitDecision::Hold { until: at }
    }
}

/// Incast rule: when the aggregate arrival rate exceeds `threshold_bps`, every
/// subnet sending more than its fair share `threshold / active` is capped at
/// `threshold / offenders`. Returns the cap table; empty means no caps.
pub fn incast_policy(rates_bps: &BTreeMap<u16, u64>, threshold_bps: u64) -> BTreeMap<u16, u64> {
    let aggregate: u128 = rates_bps.values().map(|&r| r as u128).sum();
    if aggregate <= threshold_bps as u128 {
        return BTreeMap::new();
    }
    let active = rates_bps.values().filter(|&&r| r > 0).count() as u64;
    let fair = threshold_bps / active.max(1);
    let offenders: Vec<u16> = rates_bps.iter().filter(|(_, &r)| r > fair).map(|(&s, _)| s).collect();
    if offenders.is_empty() {
        return BTreeMap::new();
    }
    let cap = threshold_bps / offenders.len() as u64;
    offenders.into_iter().map(|s| (s, cap)).collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AgentConfig {
    pub timer_period_ns: u64,
    pub axi_access_ns: u64,
    pub irq_trip_ns: u64,
    pub threshold_bps: u64,
    /// Subnets whose counters the agent reads each period.
    pub subnets: Vec<u16>,
}

impl AgentConfig {
    pub fn new(threshold_bps: u64, subnets: Vec<u16>) -> Self {
        AgentConfig { timer_period_ns: 1_000_000, axi_access_ns: 300, irq_trip_ns: 200, threshold_bps, subnets }
    }
}

/// Result of one timer-driven policy evaluation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PolicyStep {
    pub timer_at: SimTime,
    pub reads: u32,
    /// Cap register writes, `UNCAPPED` lifting a cap.
    pub writes: Vec<(u16, u64)>,
    /// When the writes take effect: timer + interrupt trip + one AXI access
    /// per register read and write.
    pub apply_at: SimTime,
    pub rates_bps: BTreeMap<u16, u64>,
}

/// Host software that periodically reads the monitor's byte counters and
/// programs the rate limiter.
#[derive(Clone, Debug)]
pub struct ControlPlaneAgent {
    cfg: AgentConfig,
    last_bytes: BTreeMap<u16, u64>,
    last_at: SimTime,
    caps: BTreeMap<u16, u64>,
}

impl ControlPlaneAgent {
    pub fn new(cfg: AgentConfig, start: SimTime) -> Self {
        ControlPlaneAgent { cfg, last_bytes: BTreeMap::new(), last_at: start, caps: BTreeMap::new() }
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn caps(&self) -> &BTreeMap<u16, u64> {
        &self.caps
    }

    /// `read` returns the cumulative byte counter of a subnet; each call is
    /// one register access.
    pub fn policy_step(&mut self, now: SimTime, mut read: impl FnMut(u16) -> u64) -> PolicyStep {
        let dt = now.since(self.last_at).max(1);
        let mut rates = BTreeMap::new();
        let mut reads = 0;
        for &s in &self.cfg.subnets {
            let bytes = read(s);
            reads += 1;
            let prev = self.last_bytes.insert(s, bytes).unwrap_or(0);
            let rate = (bytes - prev) as u128 * 8 * NS_PER_S / dt as u128;
            rates.insert(s, rate as u64);
        }
        self.last_at = now;
        let table = incast_policy(&rates, self.cfg.threshold_bps);
        let mut writes = Vec::new();
        for &s in &self.cfg.subnets {
            let want = table.get(&s).copied().unwrap_or(UNCAPPED);
            let have = self.caps.get(&s).copied().unwrap_or(UNCAPPED);
            if want != have {
                writes.push((s, want));
                if want == UNCAPPED {
                    self.caps.remove(&s);
                } else {
                    self.caps.insert(s, want);
                }
            }
        }
        let accesses = reads as u64 + writes.len() as u64;
        let apply_at = now + self.cfg.irq_trip_ns + accesses * self.cfg.axi_access_ns;
        PolicyStep { timer_at: now, reads, writes, apply_at, rates_bps: rates }
    }
}
