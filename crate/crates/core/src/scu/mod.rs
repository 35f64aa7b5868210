//! Stream compute units: the plug-in interface, the bank that isolates up to
//! sixteen of them, the round-robin arbiter and the built-in units.

mod arbiter;
mod firewall;
mod hashpart;

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, VecDeque};
use alloc::vec::Vec;

use thiserror::Error;

pub use arbiter::Arbiter;
pub use firewall::{
    incast_policy, monitor_update, rate_limit, AgentConfig, ControlPlaneAgent, FlowStats, LimitDecision,
    PolicyStep, SubnetStats, TokenBucket, UNCAPPED,
};
pub use hashpart::{
    column_hash, hash_fold, Flush, HashPartConfig, HashPartError, HashPartState, BATCH_ROWS, FLUSH_BYTES,
    HASH_SLOTS,
};

use crate::model::{FlowKey, NodeId, Payload, SimTime};

pub const MAX_SCUS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sink {
    HostMem { region: u32 },
    GpuMem { region: u32 },
    /// Feed a streaming WRITE on the given local QP.
    NetTx { qpn: u32 },
    ControlPlane,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScuKind {
    Passthrough,
    HashPartition,
    FlowMonitor,
    RateLimiter,
    UserPlugin(&'static str),
}

/// A chunk of in-order payload handed to an SCU.
#[derive(Clone, Debug, PartialEq)]
pub struct ScuInput {
    pub payload: Payload,
    /// Target address carried by the transport, if any.
    pub addr: Option<u64>,
    pub flow: FlowKey,
    pub src_node: NodeId,
    pub src_subnet: u16,
    /// Size on the wire of the packet that carried the chunk.
    pub wire_bytes: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Emission {
    pub sink: Sink,
    pub payload: Payload,
    pub addr: Option<u64>,
    pub flow: FlowKey,
    pub src_subnet: u16,
    pub wire_bytes: u32,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("plugin fault: {0}")]
pub struct PluginFault(pub &'static str);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScuError {
    #[error("SCU index {0} out of range")]
    OutOfRange(u8),
    #[error("at most {MAX_SCUS} SCUs, got {0}")]
    TooMany(usize),
    #[error("CSR {reg:#x} is read-only or unknown")]
    BadCsr { reg: u32 },
}

/// The SCU programming model. A plug-in sees only its own inputs and state.
pub trait ScuPlugin: Send {
    fn kind(&self) -> ScuKind;

    fn process(&mut self, now: SimTime, input: ScuInput, out: &mut Vec<Emission>) -> Result<(), PluginFault>;

    /// Called at [`Self::next_wake`] for units that hold data over time.
    fn on_wake(&mut self, _now: SimTime, _out: &mut Vec<Emission>) -> Result<(), PluginFault> {
        Ok(())
    }

    fn next_wake(&self) -> Option<SimTime> {
        None
    }

    /// End of input: emit anything still buffered.
    fn finish(&mut self, _now: SimTime, _out: &mut Vec<Emission>) -> Result<(), PluginFault> {
        Ok(())
    }

    /// Plug-in specific registers; `None` falls back to the generic CSR file.
    fn read_csr(&self, _reg: u32) -> Option<u64> {
        None
    }

    /// Returns true if the plug-in consumed the write.
    fn write_csr(&mut self, _reg: u32, _value: u64, _now: SimTime) -> bool {
        false
    }
}

/// Forwards every chunk unchanged to one sink.
#[derive(Clone, Debug)]
pub struct Passthrough {
    pub sink: Sink,
}

impl ScuPlugin for Passthrough {
    fn kind(&self) -> ScuKind {
        ScuKind::Passthrough
    }

    fn process(&mut self, _now: SimTime, input: ScuInput, out: &mut Vec<Emission>) -> Result<(), PluginFault> {
        out.push(Emission {
            sink: self.sink,
            payload: input.payload,
            addr: input.addr,
            flow: input.flow,
            src_subnet: input.src_subnet,
            wire_bytes: input.wire_bytes,
        });
        Ok(())
    }
}

/// Copies every chunk to each of its sinks, in order.
#[derive(Clone, Debug)]
pub struct Tee {
    pub sinks: Vec<Sink>,
}

impl ScuPlugin for Tee {
    fn kind(&self) -> ScuKind {
        ScuKind::Passthrough
    }

    fn process(&mut self, _now: SimTime, input: ScuInput, out: &mut Vec<Emission>) -> Result<(), PluginFault> {
        for &sink in &self.sinks {
            out.push(Emission {
                sink,
                payload: input.payload.clone(),
                addr: input.addr,
                flow: input.flow,
                src_subnet: input.src_subnet,
                wire_bytes: input.wire_bytes,
            });
        }
        Ok(())
    }
}

/// Hash partitioner over a byte stream of fixed-width rows. Rows may straddle
/// chunk boundaries. Destination `d` flushes to `sinks[d]`.
#[derive(Clone, Debug)]
pub struct HashPartScu {
    state: HashPartState,
    sinks: Vec<Sink>,
    carry: Vec<u8>,
    flushes: Vec<Flush>,
    last_flow: Option<FlowKey>,
}

impl HashPartScu {
    pub fn new(cfg: HashPartConfig, sinks: Vec<Sink>) -> Result<Self, HashPartError> {
        assert_eq!(sinks.len(), cfg.num_dests as usize, "one sink per destination");
        Ok(HashPartScu { state: HashPartState::new(cfg)?, sinks, carry: Vec::new(), flushes: Vec::new(), last_flow: None })
    }

    pub fn state(&self) -> &HashPartState {
        &self.state
    }

    fn emit(&mut self, flow: FlowKey, out: &mut Vec<Emission>) {
        for f in self.flushes.drain(..) {
            out.push(Emission {
                sink: self.sinks[f.dest as usize],
                wire_bytes: f.bytes.len() as u32,
                payload: Payload::from_vec(f.bytes),
                addr: None,
                flow,
                src_subnet: 0,
            });
        }
    }
}

impl ScuPlugin for HashPartScu {
    fn kind(&self) -> ScuKind {
        ScuKind::HashPartition
    }

    fn process(&mut self, _now: SimTime, input: ScuInput, out: &mut Vec<Emission>) -> Result<(), PluginFault> {
        let Some(bytes) = input.payload.bytes() else {
            return Err(PluginFault("hash partitioner needs materialized payload"));
        };
        let w = self.state.config().row_width;
        self.last_flow = Some(input.flow);
        self.carry.extend_from_slice(bytes);
        let whole = self.carry.len() / w * w;
        let rest = self.carry.split_off(whole);
        let rows = core::mem::replace(&mut self.carry, rest);
        self.state.ingest(&rows, &mut self.flushes).map_err(|_| PluginFault("row ingest failed"))?;
        self.emit(input.flow, out);
        Ok(())
    }

    fn finish(&mut self, _now: SimTime, out: &mut Vec<Emission>) -> Result<(), PluginFault> {
        if !self.carry.is_empty() {
            return Err(PluginFault("input ended inside a row"));
        }
        self.state.finish(&mut self.flushes);
        let flow = self.last_flow.unwrap_or(FlowKey::Other { reason: crate::model::OtherReason::Raw });
        self.emit(flow, out);
        Ok(())
    }
}

/// Register classes of the firewall unit; the low 16 bits select the subnet.
pub const CSR_CLASS_BYTES: u32 = 1;
pub const CSR_CLASS_PACKETS: u32 = 2;
pub const CSR_CLASS_CAP: u32 = 3;
pub const CSR_FIREWALL_DROPS: u32 = 0;

pub fn csr_reg(class: u32, subnet: u16) -> u32 {
    (class << 16) | subnet as u32
}

struct SubnetQueue {
    bucket: TokenBucket,
    held: VecDeque<ScuInput>,
    held_bytes: u64,
    emitted_bytes: u64,
}

/// Flow monitor with a per-subnet rate limiter behind it. Counters see
/// arrivals before limiting; caps are programmed through CSRs.
pub struct Firewall {
    kind: ScuKind,
    sink: Sink,
    burst_bytes: u64,
    queue_limit_bytes: u64,
    stats: FlowStats,
    queues: BTreeMap<u16, SubnetQueue>,
    drops: u64,
}

impl core::fmt::Debug for Firewall {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Firewall").field("kind", &self.kind).field("drops", &self.drops).finish()
    }
}

impl Firewall {
    /// Monitor plus limiter, reported as `FlowMonitor`.
    pub fn monitor(sink: Sink, burst_bytes: u64, queue_limit_bytes: u64) -> Self {
        Firewall {
            kind: ScuKind::FlowMonitor,
            sink,
            burst_bytes,
            queue_limit_bytes,
            stats: FlowStats::default(),
            queues: BTreeMap::new(),
            drops: 0,
        }
    }

    /// Limiter only; counters still run but are not the unit's purpose.
    pub fn limiter(sink: Sink, burst_bytes: u64, queue_limit_bytes: u64) -> Self {
        Firewall { kind: ScuKind::RateLimiter, ..Self::monitor(sink, burst_bytes, queue_limit_bytes) }
    }

    pub fn stats(&self) -> &FlowStats {
        &self.stats
    }

    pub fn drops(&self) -> u64 {
        self.drops
    }

    pub fn cap(&self, subnet: u16) -> u64 {
        self.queues.get(&subnet).map_or(UNCAPPED, |q| q.bucket.cap_bps())
    }

    pub fn emitted_bytes(&self, subnet: u16) -> u64 {
        self.queues.get(&subnet).map_or(0, |q| q.emitted_bytes)
    }

    fn queue(&mut self, subnet: u16, now: SimTime) -> &mut SubnetQueue {
        let burst = self.burst_bytes;
        self.queues.entry(subnet).or_insert_with(|| SubnetQueue {
            bucket: TokenBucket::new(UNCAPPED, burst, now),
            held: VecDeque::new(),
            held_bytes: 0,
            emitted_bytes: 0,
        })
    }

    fn release(q: &mut SubnetQueue, sink: Sink, now: SimTime, out: &mut Vec<Emission>) {
        while let Some(head) = q.held.front() {
            match rate_limit(&mut q.bucket, head.wire_bytes as u64, now) {
                LimitDecision::Pass => {
                    let input = q.held.pop_front().expect("present");
                    q.held_bytes -= input.wire_bytes as u64;
                    q.emitted_bytes += input.wire_bytes as u64;
                    out.push(Emission {
                        sink,
                        payload: input.payload,
                        addr: input.addr,
                        flow: input.flow,
                        src_subnet: input.src_subnet,
                        wire_bytes: input.wire_bytes,
                    });
                }
                LimitDecision::Hold { .. } => break,
            }
        }
    }
}

impl ScuPlugin for Firewall {
    fn kind(&self) -> ScuKind {
        self.kind
    }

    fn process(&mut self, now: SimTime, input: ScuInput, out: &mut Vec<Emission>) -> Result<(), PluginFault> {
        monitor_update(&mut self.stats, input.src_subnet, input.wire_bytes as u64, now);
        let (sink, limit) = (self.sink, self.queue_limit_bytes);
        let q = self.queue(input.src_subnet, now);
        if q.held_bytes + input.wire_bytes as u64 > limit {
            self.drops += 1;
            return Ok(());
        }
        q.held_bytes += input.wire_bytes as u64;
        q.held.push_back(input);
        Self::release(q, sink, now, out);
        Ok(())
    }

    fn on_wake(&mut self, now: SimTime, out: &mut Vec<Emission>) -> Result<(), PluginFault> {
        let sink = self.sink;
        for q in self.queues.values_mut() {
            Self::release(q, sink, now, out);
        }
        Ok(())
    }

    fn next_wake(&self) -> Option<SimTime> {
        self.queues
            .values()
            .filter_map(|q| q.held.front().map(|h| q.bucket.ready_at(h.wire_bytes as u64, SimTime::ZERO)))
            .filter(|&t| t != SimTime::MAX)
            .min()
    }

    fn read_csr(&self, reg: u32) -> Option<u64> {
        if reg == CSR_FIREWALL_DROPS {
            return Some(self.drops);
        }
        let subnet = (reg & 0xFFFF) as u16;
        let s = self.stats.subnets.get(&subnet).copied().unwrap_or_default();
        match reg >> 16 {
            CSR_CLASS_BYTES => Some(s.bytes),
            CSR_CLASS_PACKETS => Some(s.packets),
            CSR_CLASS_CAP => Some(self.cap(subnet)),
            _ => None,
        }
    }

    fn write_csr(&mut self, reg: u32, value: u64, now: SimTime) -> bool {
        if reg >> 16 != CSR_CLASS_CAP {
            return false;
        }
        self.queue((reg & 0xFFFF) as u16, now).bucket.set_cap(value, now);
        true
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScuState {
    Online,
    Offline { until: SimTime },
    Error,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ScuCounters {
    pub inputs: u64,
    pub input_bytes: u64,
    pub emitted_bytes: u64,
    pub dropped_offline: u64,
    pub dropped_error: u64,
}

pub struct ScuDescriptor {
    index: u8,
    plugin: Box<dyn ScuPlugin>,
    csrs: BTreeMap<u32, u64>,
    state: ScuState,
    counters: ScuCounters,
}

impl ScuDescriptor {
    pub fn index(&self) -> u8 {
        self.index
    }

    pub fn kind(&self) -> ScuKind {
        self.plugin.kind()
    }

    pub fn counters(&self) -> ScuCounters {
        self.counters
    }

    pub fn plugin(&self) -> &dyn ScuPlugin {
        &*self.plugin
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProcessOutcome {
    Accepted,
    DroppedOffline,
    DroppedError,
    /// The plug-in faulted on this input; the unit is now in `Error`.
    Faulted,
}

/// The SCUs of one NIC. Each unit owns its plug-in and registers; nothing is
/// shared between units.
pub struct ScuBank {
    scus: Vec<ScuDescriptor>,
}

impl core::fmt::Debug for ScuBank {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_list().entries(self.scus.iter().map(|s| (s.index, s.kind(), s.state))).finish()
    }
}

impl ScuBank {
    pub fn new(plugins: Vec<Box<dyn ScuPlugin>>) -> Result<Self, ScuError> {
        if plugins.len() > MAX_SCUS {
            return Err(ScuError::TooMany(plugins.len()));
        }
        let scus = plugins
            .into_iter()
            .enumerate()
            .map(|(i, plugin)| ScuDescriptor {
                index: i as u8,
                plugin,
                csrs: BTreeMap::new(),
                state: ScuState::Online,
                counters: ScuCounters::default(),
            })
            .collect();
        Ok(ScuBank { scus })
    }

    pub fn len(&self) -> usize {
        self.scus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scus.is_empty()
    }

    fn get_mut(&mut self, idx: u8) -> Result<&mut ScuDescriptor, ScuError> {
        self.scus.get_mut(idx as usize).ok_or(ScuError::OutOfRange(idx))
    }

    pub fn get(&self, idx: u8) -> Result<&ScuDescriptor, ScuError> {
        self.scus.get(idx as usize).ok_or(ScuError::OutOfRange(idx))
    }

    pub fn state(&self, idx: u8, now: SimTime) -> Result<ScuState, ScuError> {
        Ok(match self.get(idx)?.state {
            ScuState::Offline { until } if now >= until => ScuState::Online,
            s => s,
        })
    }

    fn refresh(d: &mut ScuDescriptor, now: SimTime) {
        if let ScuState::Offline { until } = d.state {
            if now >= until {
                d.state = ScuState::Online;
            }
        }
    }

    pub fn process(&mut self, idx: u8, now: SimTime, input: ScuInput, out: &mut Vec<Emission>) -> Result<ProcessOutcome, ScuError> {
        let d = self.get_mut(idx)?;
        Self::refresh(d, now);
        match d.state {
            ScuState::Offline { .. } => {
                d.counters.dropped_offline += 1;
                return Ok(ProcessOutcome::DroppedOffline);
            }
            ScuState::Error => {
                d.counters.dropped_error += 1;
                return Ok(ProcessOutcome::DroppedError);
            }
            ScuState::Online => {}
        }
        d.counters.inputs += 1;
        d.counters.input_bytes += input.payload.len();
        let mark = out.len();
        match d.plugin.process(now, input, out) {
            Ok(()) => {
                d.counters.emitted_bytes += out[mark..].iter().map(|e| e.payload.len()).sum::<u64>();
                Ok(ProcessOutcome::Accepted)
            }
            Err(_) => {
                out.truncate(mark);
                d.state = ScuState::Error;
                Ok(ProcessOutcome::Faulted)
            }
        }
    }

    fn run(d: &mut ScuDescriptor, now: SimTime, out: &mut Vec<Emission>, wake: bool) {
        Self::refresh(d, now);
        if d.state != ScuState::Online {
            return;
        }
        let mark = out.len();
        let r = if wake { d.plugin.on_wake(now, out) } else { d.plugin.finish(now, out) };
        match r {
            Ok(()) => d.counters.emitted_bytes += out[mark..].iter().map(|e| e.payload.len()).sum::<u64>(),
            Err(_) => {
                out.truncate(mark);
                d.state = ScuState::Error;
            }
        }
    }

    pub fn wake(&mut self, idx: u8, now: SimTime, out: &mut Vec<Emission>) -> Result<(), ScuError> {
        Self::run(self.get_mut(idx)?, now, out, true);
        Ok(())
    }

    pub fn finish(&mut self, idx: u8, now: SimTime, out: &mut Vec<Emission>) -> Result<(), ScuError> {
        Self::run(self.get_mut(idx)?, now, out, false);
        Ok(())
    }

    pub fn next_wake(&self, idx: u8) -> Option<SimTime> {
        let d = self.get(idx).ok()?;
        (d.state != ScuState::Error).then(|| d.plugin.next_wake()).flatten()
    }

    pub fn set_csr(&mut self, idx: u8, reg: u32, value: u64, now: SimTime) -> Result<(), ScuError> {
        let d = self.get_mut(idx)?;
        if !d.plugin.write_csr(reg, value, now) {
            d.csrs.insert(reg, value);
        }
        Ok(())
    }

    pub fn get_csr(&self, idx: u8, reg: u32) -> Result<u64, ScuError> {
        let d = self.get(idx)?;
        Ok(d.plugin.read_csr(reg).or_else(|| d.csrs.get(&reg).copied()).unwrap_or(0))
    }

    /// Replaces the unit's plug-in; the unit drops input until `now + delay_ns`.
    pub fn reconfigure(&mut self, idx: u8, plugin: Box<dyn ScuPlugin>, now: SimTime, delay_ns: u64) -> Result<SimTime, ScuError> {
        let d = self.get_mut(idx)?;
        let until = now + delay_ns;
        d.plugin = plugin;
        d.csrs.clear();
        d.state = ScuState::Offline { until };
        Ok(until)
    }

    pub fn plugin_mut(&mut self, idx: u8) -> Result<&mut dyn ScuPlugin, ScuError> {
        Ok(&mut *self.get_mut(idx)?.plugin)
    }
}

#[cfg(test)]
mod tests;
