//! Discrete-event harness: nodes on a single switch, flows, collectives and
//! metric collection.
//!
//! Every node has one NIC link to the switch; the switch has one egress
//! [`port::Port`] per node. A packet is serialized by the sending NIC, crosses
//! the link, is queued at the egress port toward its destination (where ECN
//! marking and drops happen) and is serialized again toward the receiver.
//! Lossless links pause the sending NIC while the egress port lacks room.

mod config;
mod event;
mod metrics;
mod port;

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, VecDeque};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::hash::Hasher;

use fnv::FnvHasher;
use rand::RngCore;
use thiserror::Error;

pub use config::*;
pub use metrics::{FlowSample, Metrics};

use crate::cc::{CcConfig, CcKind, SwapOutcome};
use crate::hostpath::{IrqConfig, IrqController, IrqStep, Ring, RingError};
use crate::model::{
    FlowKey, Header, LinkSpec, NodeId, OtherReason, Packet, PacketIdGen, Payload, RoceOpcode, SerializationClock, SimTime,
};
use crate::rng::SimRng;
use crate::scu::{
    csr_reg, AgentConfig, Arbiter, ControlPlaneAgent, Emission, Firewall, HashPartConfig, HashPartError,
    HashPartScu, Passthrough, PolicyStep, ProcessOutcome, ScuBank, ScuError, ScuInput, ScuPlugin, Sink, Tee,
    CSR_CLASS_BYTES, CSR_CLASS_CAP, CSR_FIREWALL_DROPS,
};
use crate::transport::{
    HostMemory, Opcode, ProtocolViolation, RoceEngine, RxAction, TlbConfig, TransportConfig, TransportError,
    TxPoll, WorkRequest,
};
use crate::triage::{classify, steer, Route, Steering, SteeringTable};
use event::{Event, EventQueue};
use port::Port;

/// Arbiter slots: one per SCU plus the host transmit queue.
const SLOTS: usize = crate::scu::MAX_SCUS + 1;
const HOST_SLOT: usize = crate::scu::MAX_SCUS;

/// Collective buffers live at fixed virtual addresses on every rank.
pub const COLL_SRC: u64 = 0xC0 << 36;
pub const COLL_DST: u64 = 0xD0 << 36;

/// Virtual address of a flow's buffer; the same on both ends.
pub fn flow_addr(flow_index: usize) -> u64 {
    (flow_index as u64 + 1) << 36
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(#[from] ConfigError),
    #[error("transport setup: {0}")]
    Transport(#[from] TransportError),
    #[error("SCU setup: {0}")]
    Scu(#[from] ScuError),
    #[error("hash partition setup: {0}")]
    HashPart(#[from] HashPartError),
    #[error("event ordering violated: event at {at} scheduled at {now}")]
    PastEvent { at: SimTime, now: SimTime },
    #[error("transport ordering violated: {0}")]
    Protocol(#[from] ProtocolViolation),
    #[error("slow-path ring protocol violated: {0}")]
    Ring(#[from] RingError),
    #[error("lossless queue toward node {node} overflowed: {bytes} bytes")]
    QueueOverflow { node: usize, bytes: u64 },
    #[error("byte conservation violated: sent {sent}, dropped {dropped}, received {received}, in flight {in_flight}")]
    Conservation { sent: u64, dropped: u64, received: u64, in_flight: u64 },
}

/// Bytes an SCU sent to a sink without a target address.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Captured {
    /// Materialized bytes in emission order; virtual payloads add nothing here.
    pub bytes: Vec<u8>,
    pub len: u64,
    pub chunks: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NodeStats {
    pub tx_bytes: u64,
    pub tx_packets: u64,
    pub rx_bytes: u64,
    pub rx_packets: u64,
    /// Start of the first and end of the last RDMA data segment sent.
    pub data_tx_first: Option<SimTime>,
    pub data_tx_last_end: Option<SimTime>,
    /// Longest wait from ring enqueue to the interrupt (or poll) that
    /// notified the driver of the entry.
    pub max_irq_latency_ns: u64,
    pub max_poll_latency_ns: u64,
    pub pauses: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Role {
    Flow(usize),
    Collective,
}

pub struct Node {
    engine: RoceEngine,
    mem: HostMemory,
    steering: SteeringTable,
    bank: ScuBank,
    arb: Arbiter,
    slot_qps: Vec<Vec<u32>>,
    slot_cursor: Vec<usize>,
    roles: BTreeMap<u32, Role>,
    control: VecDeque<Packet>,
    host_tx: VecDeque<Packet>,
    host_tx_bytes: u64,
    held: Option<Packet>,
    clock: SerializationClock,
    tx_busy_until: SimTime,
    wake_at: Option<SimTime>,
    ring: Ring,
    irq: IrqController,
    /// Enqueue time and owning flow of every entry still in the ring.
    ring_meta: VecDeque<(SimTime, Option<usize>)>,
    /// Leading ring entries already covered by a fired interrupt.
    covered: usize,
    poll_scheduled: bool,
    scu_wake: Vec<Option<SimTime>>,
    captured: BTreeMap<Sink, Captured>,
    stats: NodeStats,
}

impl Node {
    pub fn engine(&self) -> &RoceEngine {
        &self.engine
    }

    pub fn memory(&self) -> &HostMemory {
        &self.mem
    }

    pub fn bank(&self) -> &ScuBank {
        &self.bank
    }

    pub fn ring(&self) -> &Ring {
        &self.ring
    }

    pub fn irq(&self) -> &IrqController {
        &self.irq
    }

    pub fn captured(&self, sink: Sink) -> Option<&Captured> {
        self.captured.get(&sink)
    }

    pub fn stats(&self) -> &NodeStats {
        &self.stats
    }

    /// Local QPN carrying scenario flow `flow_index` on this node.
    pub fn qpn_of_flow(&self, flow_index: usize) -> Option<u32> {
        self.roles.iter().find(|(_, r)| **r == Role::Flow(flow_index)).map(|(q, _)| *q)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FlowProgress {
    pub posted: u64,
    pub completed: u64,
    pub delivered_bytes: u64,
    pub done_at: Option<SimTime>,
    /// Packets the host queue of an open-loop source refused.
    pub source_drops: u64,
}

struct FlowRt {
    spec: FlowSpec,
    qp_src: u32,
    progress: FlowProgress,
    sent: u64,
    next_at: f64,
    rng: SimRng,
    last_sampled: u64,
}

/// CC hot swap of one QP.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SwapRecord {
    pub node: usize,
    pub qpn: u32,
    pub loaded_at: SimTime,
    pub ready_at: SimTime,
    pub swapped_at: Option<SimTime>,
    /// Active algorithm after the swap.
    pub active_after: Option<CcKind>,
    /// Pacing rate the new algorithm starts with.
    pub rate_after_bps: Option<u64>,
    /// CNPs this QP received between load and swap.
    pub cnps_during_warmup: u64,
    cnps_at_load: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CollectiveReport {
    pub op: CollectiveOp,
    pub mode: CollectiveMode,
    pub bytes: u64,
    pub started_at: SimTime,
    pub root_first_tx: Option<SimTime>,
    pub root_last_tx_end: Option<SimTime>,
    /// Per rank: when it held its complete result.
    pub done_at: Vec<Option<SimTime>>,
    /// Every result buffer equals the expected bytes.
    pub bit_exact: bool,
}

struct CollectiveRt {
    spec: CollectiveSpec,
    /// Posting node, its QPN, local and remote address, and whether the
    /// WRITE is fed by an SCU.
    writes: Vec<(usize, u32, u64, u64, bool)>,
    data: Vec<Vec<u8>>,
    expected: Vec<u64>,
    received: Vec<u64>,
    done_at: Vec<Option<SimTime>>,
}

#[derive(Clone, Copy, Debug, Default)]
struct Counters {
    events: u64,
    nic_tx_bytes: u64,
    nic_rx_bytes: u64,
    switch_drops: u64,
    switch_drop_bytes: u64,
    ecn_marks: u64,
    completions: u64,
    post_errors: u64,
    qp_errors: u64,
    delivered_bytes: u64,
    control_plane_bytes: u64,
    steering_misses: u64,
    scu_faults: u64,
    scu_dropped: u64,
    ring_drops: u64,
    source_drops: u64,
    cc_swaps: u64,
    cc_swap_errors: u64,
}

pub struct World {
    sc: Scenario,
    now: SimTime,
    end: SimTime,
    queue: EventQueue,
    nodes: Vec<Node>,
    ports: Vec<Port>,
    flows: Vec<FlowRt>,
    ids: PacketIdGen,
    raw_owner: BTreeMap<u64, usize>,
    cnps_received: BTreeMap<(usize, u32), u64>,
    counters: Counters,
    hash: FnvHasher,
    error: Option<SimError>,
    agent: Option<ControlPlaneAgent>,
    agent_log: Vec<PolicyStep>,
    swaps: Vec<SwapRecord>,
    coll: Option<CollectiveRt>,
    next_sample: u64,
    samples: Vec<FlowSample>,
    has_qps: bool,
}

fn cc_kind(a: CcAlgorithm) -> CcKind {
    match a {
        CcAlgorithm::Window => CcKind::Window,
        CcAlgorithm::Dcqcn => CcKind::Dcqcn,
    }
}

/// Two bandwidth-delay products of an idle path, rounded up to whole
/// segments, so a single window-limited flow can keep the link busy.
pub fn default_window(link: &LinkSpec) -> u64 {
    let mtu_payload = link.mtu_bytes as u64 - HEADER_BYTES;
    let bits = (2 * link.mtu_bytes as u64 + 2 * HEADER_BYTES) * 8;
    let rtt_ns = 4 * link.prop_delay_ns + bits.div_ceil(link.gbps as u64);
    let bdp = rtt_ns * link.gbps as u64 / 8;
    (2 * bdp).div_ceil(mtu_payload) * mtu_payload
}

fn random_bytes(rng: &mut SimRng, len: u64) -> Vec<u8> {
    let mut v = vec![0u8; len as usize];
    rng.fill_bytes(&mut v);
    v
}

fn is_rdma_data(pkt: &Packet) -> bool {
    matches!(
        pkt.bth().map(|b| b.opcode),
        Some(RoceOpcode::WriteData { .. } | RoceOpcode::ReadResponse { .. })
    )
}

impl World {
    pub fn new(sc: &Scenario) -> Result<World, SimError> {
        sc.validate()?;
        let sc = sc.clone();
        let link = sc.link;
        let rng = SimRng::new(sc.seed);
        let window = if sc.cc.window_bytes == 0 { default_window(&link) } else { sc.cc.window_bytes };
        let cc_config = CcConfig { window_bytes: window, dcqcn: sc.cc.dcqcn.clone() };
        let tcfg = TransportConfig {
            header_overhead: HEADER_BYTES as u32,
            control_wire_bytes: HEADER_BYTES as u32,
            ack_every: sc.transport.ack_every,
            cnp_interval_ns: sc.transport.cnp_interval_ns,
            ecn_feedback: sc.transport.ecn_feedback,
            lossless: link.lossless,
            rto_ns: sc.transport.rto_ns,
            gate_read_responses: false,
            tlb: TlbConfig {
                capacity: sc.transport.tlb_capacity,
                page_size: sc.transport.page_size,
                miss_latency_ns: sc.transport.tlb_miss_ns,
            },
        };
        let irq_cfg = IrqConfig { coalesce_count: sc.hostpath.irq_count, timeout_ns: sc.hostpath.irq_timeout_ns };
        let mut nodes = Vec::with_capacity(sc.nodes.len());
        for (i, n) in sc.nodes.iter().enumerate() {
            let mut engine = RoceEngine::new(
                NodeId(i as u32),
                n.subnet,
                link.mtu_bytes,
                link.bits_per_second(),
                n.scus,
                tcfg.clone(),
            );
            engine.set_cc_defaults(cc_config.clone(), cc_kind(sc.cc.algorithm), sc.cc.reconfig_delay_ns);
            nodes.push(Node {
                engine,
                mem: HostMemory::new(),
                steering: SteeringTable::new(n.scus),
                bank: ScuBank::new(Vec::new())?,
                arb: Arbiter::new(SLOTS as u8),
                slot_qps: vec![Vec::new(); SLOTS],
                slot_cursor: vec![0; SLOTS],
                roles: BTreeMap::new(),
                control: VecDeque::new(),
                host_tx: VecDeque::new(),
                host_tx_bytes: 0,
                held: None,
                clock: SerializationClock::new(link.gbps),
                tx_busy_until: SimTime::ZERO,
                wake_at: None,
                ring: Ring::new(sc.hostpath.ring_bytes, sc.hostpath.dma_mode)?,
                irq: IrqController::new(irq_cfg),
                ring_meta: VecDeque::new(),
                covered: 0,
                poll_scheduled: false,
                scu_wake: vec![None; n.scus as usize],
                captured: BTreeMap::new(),
                stats: NodeStats::default(),
            });
        }
        let mut w = World {
            ports: (0..sc.nodes.len()).map(|_| Port::new(link.gbps)).collect(),
            end: SimTime::from_ns(sc.duration_ns),
            now: SimTime::ZERO,
            queue: EventQueue::default(),
            nodes,
            flows: Vec::new(),
            ids: PacketIdGen::new(),
            raw_owner: BTreeMap::new(),
            cnps_received: BTreeMap::new(),
            counters: Counters::default(),
            hash: FnvHasher::default(),
            error: None,
            agent: None,
            agent_log: Vec::new(),
            swaps: Vec::new(),
            coll: None,
            next_sample: sc.sample_period_ns,
            samples: Vec::new(),
            has_qps: false,
            sc,
        };
        w.setup_flows(&rng)?;
        let mut plugins = w.default_plugins()?;
        w.setup_collective(&rng, &mut plugins)?;
        for (node, p) in w.nodes.iter_mut().zip(plugins) {
            node.bank = ScuBank::new(p)?;
        }
        w.schedule_initial();
        Ok(w)
    }

    fn connect_pair(&mut self, a: usize, b: usize, scu: u8, role: Role) -> Result<(u32, u32), SimError> {
        let (qa, qb) = {
            let na = &mut self.nodes[a];
            let qa = na.engine.create_qp(NodeId(b as u32), scu, &mut na.steering)?;
            let nb = &mut self.nodes[b];
            let qb = nb.engine.create_qp(NodeId(a as u32), scu, &mut nb.steering)?;
            (qa, qb)
        };
        self.nodes[a].engine.connect(qa, qb)?;
        self.nodes[b].engine.connect(qb, qa)?;
        for (n, q) in [(a, qa), (b, qb)] {
            self.nodes[n].slot_qps[scu as usize].push(q);
            self.nodes[n].roles.insert(q, role);
        }
        self.has_qps = true;
        Ok((qa, qb))
    }

    fn setup_flows(&mut self, rng: &SimRng) -> Result<(), SimError> {
        let specs = self.sc.flows.clone();
        for (idx, f) in specs.into_iter().enumerate() {
            let mut data_rng = rng.split(1000 + idx as u64);
            let mut qp_src = 0;
            match f.op {
                FlowOp::Write | FlowOp::Read => {
                    qp_src = self.connect_pair(f.src, f.dst, f.scu, Role::Flow(idx))?.0;
                    let addr = flow_addr(idx);
                    for n in [f.src, f.dst] {
                        self.nodes[n].engine.register_mr(addr, f.size, SimTime::ZERO)?;
                    }
                    if f.data == DataMode::Random {
                        let (holder, target) = if f.op == FlowOp::Write { (f.src, f.dst) } else { (f.dst, f.src) };
                        self.nodes[holder].mem.back(addr, random_bytes(&mut data_rng, f.size));
                        self.nodes[target].mem.back_zeroed(addr, f.size as usize);
                    }
                }
                FlowOp::Stream => {
                    let dst = &mut self.nodes[f.dst];
                    dst.steering
                        .insert(FlowKey::Tcp { session: idx as u32 }, f.scu)
                        .map_err(|_| TransportError::ScuOutOfRange { index: f.scu, count: dst.steering.scu_count() })?;
                }
                FlowOp::Raw => {}
            }
            self.flows.push(FlowRt {
                next_at: f.start_ns as f64,
                rng: rng.split(3000 + idx as u64),
                spec: f,
                qp_src,
                progress: FlowProgress::default(),
                sent: 0,
                last_sampled: 0,
            });
        }
        Ok(())
    }

    fn default_plugins(&self) -> Result<Vec<Vec<Box<dyn ScuPlugin>>>, SimError> {
        let mut all = Vec::new();
        for (i, n) in self.sc.nodes.iter().enumerate() {
            let mut units: Vec<Box<dyn ScuPlugin>> = Vec::new();
            for s in 0..n.scus {
                let sink = Sink::HostMem { region: s as u32 };
                let spec = self.sc.scus.iter().find(|x| x.node == i && x.index == s);
                let unit: Box<dyn ScuPlugin> = match spec.map(|x| &x.kind) {
                    None | Some(ScuKindSpec::Passthrough) => Box::new(Passthrough { sink }),
                    Some(&ScuKindSpec::HashPartition { dests, row_width, key_columns, batch_rows }) => {
                        let mut cfg = HashPartConfig::new(dests, row_width, key_columns);
                        cfg.batch_rows = (batch_rows > 0).then_some(batch_rows);
                        let sinks = (0..dests).map(|d| Sink::HostMem { region: d }).collect();
                        Box::new(HashPartScu::new(cfg, sinks)?)
                    }
                    Some(&ScuKindSpec::Firewall { burst_bytes, queue_limit_bytes }) => {
                        Box::new(Firewall::monitor(sink, burst_bytes, queue_limit_bytes))
                    }
                };
                units.push(unit);
            }
            all.push(units);
        }
        Ok(all)
    }

    fn setup_collective(&mut self, rng: &SimRng, plugins: &mut [Vec<Box<dyn ScuPlugin>>]) -> Result<(), SimError> {
        let Some(spec) = self.sc.collective.clone() else { return Ok(()) };
        let n = spec.ranks.len();
        let m = spec.bytes;
        let root = spec.ranks[0];
        let mut rt = CollectiveRt {
            writes: Vec::new(),
            data: Vec::new(),
            expected: vec![0; n],
            received: vec![0; n],
            done_at: vec![None; n],
            spec: spec.clone(),
        };
        let role = Role::Collective;
        match spec.op {
            CollectiveOp::Broadcast => {
                rt.data.push(random_bytes(&mut rng.split(2000), m));
                let mem = &mut self.nodes[root];
                mem.engine.register_mr(COLL_SRC, m, SimTime::ZERO)?;
                mem.mem.back(COLL_SRC, rt.data[0].clone());
                for &r in &spec.ranks[1..] {
                    let node = &mut self.nodes[r];
                    node.engine.register_mr(COLL_DST, m, SimTime::ZERO)?;
                    node.mem.back_zeroed(COLL_DST, m as usize);
                }
                for e in rt.expected.iter_mut().skip(1) {
                    *e = m;
                }
                match spec.mode {
                    CollectiveMode::Flat => {
                        for &r in &spec.ranks[1..] {
                            let (q, _) = self.connect_pair(root, r, spec.scu, role)?;
                            rt.writes.push((root, q, COLL_SRC, COLL_DST, false));
                        }
                    }
                    CollectiveMode::BinaryTree => {
                        for rank in 0..n {
                            let from = spec.ranks[rank];
                            let mut sinks = vec![Sink::HostMem { region: spec.scu as u32 }];
                            for child in [2 * rank + 1, 2 * rank + 2] {
                                if child >= n {
                                    continue;
                                }
                                let (q, _) = self.connect_pair(from, spec.ranks[child], spec.scu, role)?;
                                if rank == 0 {
                                    rt.writes.push((from, q, COLL_SRC, COLL_DST, false));
                                } else {
                                    rt.writes.push((from, q, COLL_DST, COLL_DST, true));
                                    sinks.push(Sink::NetTx { qpn: q });
                                }
                            }
                            if rank > 0 && sinks.len() > 1 {
                                plugins[from][spec.scu as usize] = Box::new(Tee { sinks });
                            }
                        }
                    }
                }
            }
            CollectiveOp::Gather => {
                for rank in 0..n {
                    rt.data.push(random_bytes(&mut rng.split(2000 + rank as u64), m));
                }
                let node = &mut self.nodes[root];
                node.engine.register_mr(COLL_DST, n as u64 * m, SimTime::ZERO)?;
                node.mem.back_zeroed(COLL_DST, (n as u64 * m) as usize);
                node.mem.write(COLL_DST, &Payload::from_vec(rt.data[0].clone()));
                rt.expected[0] = (n as u64 - 1) * m;
                for rank in 1..n {
                    let r = spec.ranks[rank];
                    let node = &mut self.nodes[r];
                    node.engine.register_mr(COLL_SRC, m, SimTime::ZERO)?;
                    node.mem.back(COLL_SRC, rt.data[rank].clone());
                    let (q, _) = self.connect_pair(r, root, spec.scu, role)?;
                    rt.writes.push((r, q, COLL_SRC, COLL_DST + rank as u64 * m, false));
                }
            }
        }
        self.coll = Some(rt);
        Ok(())
    }

    fn schedule_initial(&mut self) {
        for (i, f) in self.sc.flows.iter().enumerate() {
            self.queue.push(SimTime::from_ns(f.start_ns), Event::FlowStart { flow: i });
        }
        if self.has_qps && self.sc.cc.tick_ns <= self.sc.duration_ns {
            self.queue.push(SimTime::from_ns(self.sc.cc.tick_ns), Event::CcTick);
        }
        if let Some(t) = self.sc.cc.load_at_ns {
            self.queue.push(SimTime::from_ns(t), Event::CcLoad);
        }
        if let Some(t) = self.sc.cc.swap_at_ns {
            self.queue.push(SimTime::from_ns(t), Event::CcSwap);
        }
        if let Some(fw) = &self.sc.firewall {
            let mut cfg = AgentConfig::new(fw.threshold_bps, fw.subnets.clone());
            cfg.timer_period_ns = fw.timer_period_ns;
            cfg.axi_access_ns = fw.axi_access_ns;
            cfg.irq_trip_ns = fw.irq_trip_ns;
            self.agent = Some(ControlPlaneAgent::new(cfg, SimTime::ZERO));
            if fw.timer_period_ns <= self.sc.duration_ns {
                self.queue.push(SimTime::from_ns(fw.timer_period_ns), Event::AgentTimer);
            }
        }
        if let Some(c) = &self.coll {
            self.queue.push(SimTime::from_ns(c.spec.start_ns), Event::CollectiveStart);
        }
        self.queue.push(self.end, Event::Finish);
    }

    pub fn scenario(&self) -> &Scenario {
        &self.sc
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn node(&self, i: usize) -> &Node {
        &self.nodes[i]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn flow_progress(&self, flow_index: usize) -> &FlowProgress {
        &self.flows[flow_index].progress
    }

    pub fn swaps(&self) -> &[SwapRecord] {
        &self.swaps
    }

    pub fn agent_log(&self) -> &[PolicyStep] {
        &self.agent_log
    }

    pub fn max_queue_bytes(&self, node: usize) -> u64 {
        self.ports[node].max_occupancy
    }

    pub fn trace_hash(&self) -> u64 {
        self.hash.finish()
    }

    fn schedule(&mut self, at: SimTime, event: Event) {
        if at < self.now {
            self.error.get_or_insert(SimError::PastEvent { at, now: self.now });
            return;
        }
        self.queue.push(at, event);
    }

    /// Executes every event at or before `t_end`.
    pub fn run_until(&mut self, t_end: SimTime) -> Result<(), SimError> {
        while let Some(at) = self.queue.peek_time() {
            if at > t_end {
                break;
            }
            self.take_samples(at.as_ns(), false);
            let (at, event) = self.queue.pop().expect("peeked");
            if at < self.now {
                return Err(SimError::PastEvent { at, now: self.now });
            }
            self.now = at;
            self.counters.events += 1;
            self.hash.write_u64(at.as_ns());
            self.hash.write_u8(event.tag());
            self.dispatch(event)?;
            if let Some(e) = self.error.take() {
                return Err(e);
            }
        }
        self.now = self.now.max(t_end);
        self.take_samples(t_end.as_ns(), true);
        Ok(())
    }

    /// Runs the whole scenario and checks the end-of-run invariants.
    pub fn run(sc: &Scenario) -> Result<(World, Metrics), SimError> {
        let mut w = World::new(sc)?;
        w.run_until(w.end)?;
        w.check_conservation()?;
        let m = w.metrics();
        Ok((w, m))
    }

    fn take_samples(&mut self, upto_ns: u64, inclusive: bool) {
        let period = self.sc.sample_period_ns;
        while self.next_sample <= self.sc.duration_ns
            && (self.next_sample < upto_ns || (inclusive && self.next_sample == upto_ns))
        {
            let t = self.next_sample;
            for f in &mut self.flows {
                let bytes = f.progress.delivered_bytes;
                let gbps = (bytes - f.last_sampled) as f64 * 8.0 / period as f64;
                f.last_sampled = bytes;
                self.samples.push(FlowSample { time_ns: t, flow_id: f.spec.id, bytes_delivered: bytes, throughput_gbps: gbps });
            }
            self.next_sample += period;
        }
    }

    /// Wire bytes sent = dropped + received + still in transit.
    pub fn check_conservation(&self) -> Result<(), SimError> {
        let sent = self.counters.nic_tx_bytes;
        let dropped = self.counters.switch_drop_bytes;
        let received = self.counters.nic_rx_bytes;
        let in_flight: u64 = self
            .queue
            .iter()
            .map(|e| match e {
                Event::SwitchArrive { pkt } | Event::NodeArrive { pkt } => pkt.wire_bytes as u64,
                _ => 0,
            })
            .sum();
        if sent != dropped + received + in_flight {
            return Err(SimError::Conservation { sent, dropped, received, in_flight });
        }
        Ok(())
    }

    pub fn metrics(&self) -> Metrics {
        Metrics { sample_period_ns: self.sc.sample_period_ns, samples: self.samples.clone(), counters: self.counter_map() }
    }

    fn counter_map(&self) -> BTreeMap<String, u64> {
        let c = &self.counters;
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: u64| {
            m.insert(String::from(k), v);
        };
        put("events", c.events);
        put("nic_tx_bytes", c.nic_tx_bytes);
        put("nic_rx_bytes", c.nic_rx_bytes);
        put("switch_drops", c.switch_drops);
        put("switch_drop_bytes", c.switch_drop_bytes);
        put("ecn_marks", c.ecn_marks);
        put("completions", c.completions);
        put("post_errors", c.post_errors);
        put("qp_errors", c.qp_errors);
        put("bytes_delivered", c.delivered_bytes);
        put("control_plane_bytes", c.control_plane_bytes);
        put("steering_misses", c.steering_misses);
        put("scu_faults", c.scu_faults);
        put("scu_dropped", c.scu_dropped);
        put("ring_drops", c.ring_drops);
        put("source_drops", c.source_drops);
        put("cc_swaps", c.cc_swaps);
        put("cc_swap_errors", c.cc_swap_errors);
        put("in_flight_bytes", c.nic_tx_bytes - c.switch_drop_bytes - c.nic_rx_bytes);
        let (mut acks, mut naks, mut cnps, mut retx, mut timeouts, mut dups, mut faults) = (0, 0, 0, 0, 0, 0, 0);
        let (mut dma, mut irqs, mut irq_timeouts, mut enq, mut polled, mut pauses) = (0, 0, 0, 0, 0, 0);
        let (mut tlb_hits, mut tlb_misses, mut fw_drops) = (0, 0, 0);
        for (i, n) in self.nodes.iter().enumerate() {
            let s = n.engine.stats();
            acks += s.acks_sent;
            naks += s.naks_sent;
            cnps += s.cnps_sent;
            retx += s.retransmits;
            timeouts += s.timeouts;
            dups += s.duplicates;
            faults += s.access_faults;
            dma += n.ring.dma_tx_count();
            enq += n.ring.enqueued();
            polled += n.ring.polled();
            irqs += n.irq.interrupts();
            irq_timeouts += n.irq.timeout_interrupts();
            pauses += n.stats.pauses;
            tlb_hits += n.engine.space().tlb().hits();
            tlb_misses += n.engine.space().tlb().misses();
            if let Some(fw) = self.sc.firewall.as_ref().filter(|f| f.node == i) {
                fw_drops += n.bank.get_csr(fw.scu, CSR_FIREWALL_DROPS).unwrap_or(0);
            }
        }
        put("acks_sent", acks);
        put("naks_sent", naks);
        put("cnps_sent", cnps);
        put("retransmits", retx);
        put("timeouts", timeouts);
        put("duplicates", dups);
        put("access_faults", faults);
        put("dma_txs", dma);
        put("slowpath_enqueued", enq);
        put("slowpath_polled", polled);
        put("irqs", irqs);
        put("irq_timeouts", irq_timeouts);
        put("pauses", pauses);
        put("tlb_hits", tlb_hits);
        put("tlb_misses", tlb_misses);
        put("firewall_drops", fw_drops);
        put("trace_hash", self.hash.finish());
        m
    }

    fn dispatch(&mut self, event: Event) -> Result<(), SimError> {
        match event {
            Event::NicTxDone { node } => self.try_send(node),
            Event::NicWake { node } => {
                if self.nodes[node].wake_at == Some(self.now) {
                    self.nodes[node].wake_at = None;
                }
                self.try_send(node);
            }
            Event::SwitchArrive { pkt } => self.on_switch_arrive(pkt)?,
            Event::NodeArrive { pkt } => self.on_node_arrive(pkt)?,
            Event::FlowStart { flow } => self.on_flow_start(flow),
            Event::SourceTick { flow } => self.on_source_tick(flow),
            Event::CcTick => {
                for i in 0..self.nodes.len() {
                    self.nodes[i].engine.tick(self.now);
                    self.try_send(i);
                }
                let next = self.now + self.sc.cc.tick_ns;
                if next <= self.end {
                    self.schedule(next, Event::CcTick);
                }
            }
            Event::CcLoad => self.on_cc_load(),
            Event::CcSwap => self.on_cc_swap(),
            Event::AgentTimer => self.on_agent_timer()?,
            Event::AgentApply { step } => self.on_agent_apply(step)?,
            Event::ScuWake { node, scu } => {
                if self.nodes[node].scu_wake[scu as usize] == Some(self.now) {
                    self.nodes[node].scu_wake[scu as usize] = None;
                }
                let mut out = Vec::new();
                self.nodes[node].bank.wake(scu, self.now, &mut out)?;
                self.handle_emissions(node, out)?;
                self.schedule_scu_wake(node, scu);
                self.try_send(node);
            }
            Event::IrqCheck { node } => {
                let step = self.nodes[node].irq.on_timer(self.now);
                self.irq_step(node, step);
            }
            Event::DriverPoll { node } => self.on_driver_poll(node)?,
            Event::CollectiveStart => self.on_collective_start(),
            Event::Finish => {
                for i in 0..self.nodes.len() {
                    for s in 0..self.nodes[i].bank.len() as u8 {
                        let mut out = Vec::new();
                        self.nodes[i].bank.finish(s, self.now, &mut out)?;
                        self.handle_emissions(i, out)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn wake_at(&mut self, i: usize, t: SimTime) {
        if t == SimTime::MAX {
            return;
        }
        let t = t.max(self.now);
        let node = &mut self.nodes[i];
        if node.wake_at.is_none_or(|w| t < w) {
            node.wake_at = Some(t);
            self.schedule(t, Event::NicWake { node: i });
        }
    }

    fn try_send(&mut self, i: usize) {
        let now = self.now;
        if self.nodes[i].tx_busy_until > now {
            return;
        }
        let pkt = match self.nodes[i].held.take() {
            Some(p) => p,
            None => match self.nodes[i].control.pop_front() {
                Some(p) => p,
                None => match self.arbitrate(i) {
                    Some(p) => p,
                    None => return,
                },
            },
        };
        if self.sc.link.lossless {
            let cap = self.sc.link.queue_cap_bytes;
            let prop = self.sc.link.prop_delay_ns.max(1);
            let port = &mut self.ports[pkt.dst_node.index()];
            if port.occupancy(now) + port.reserved + pkt.wire_bytes as u64 > cap {
                let retry = port.next_departure().unwrap_or(now + prop);
                self.nodes[i].held = Some(pkt);
                self.nodes[i].stats.pauses += 1;
                self.wake_at(i, retry);
                return;
            }
        }
        self.transmit(i, pkt);
    }

    /// Round robin over backlogged slots, then over the QPs of the granted slot.
    fn arbitrate(&mut self, i: usize) -> Option<Packet> {
        let now = self.now;
        let node = &mut self.nodes[i];
        let saved = node.arb.last_granted();
        for s in 0..SLOTS {
            let busy = if s == HOST_SLOT {
                !node.host_tx.is_empty()
            } else {
                node.slot_qps[s].iter().any(|&q| node.engine.has_tx_work(q))
            };
            node.arb.set_backlogged(s as u8, busy);
        }
        let mut wake: Option<SimTime> = None;
        while let Some(s) = node.arb.grant() {
            let s = s as usize;
            if s == HOST_SLOT {
                let p = node.host_tx.pop_front().expect("backlogged");
                node.host_tx_bytes -= p.wire_bytes as u64;
                return Some(p);
            }
            let len = node.slot_qps[s].len();
            for k in 0..len {
                let j = (node.slot_cursor[s] + k) % len;
                let qpn = node.slot_qps[s][j];
                match node.engine.poll_tx(qpn, now, &node.mem, &mut self.ids) {
                    TxPoll::Packet(p) => {
                        node.slot_cursor[s] = (j + 1) % len;
                        return Some(p);
                    }
                    TxPoll::PacedUntil(t) => wake = Some(wake.map_or(t, |w| w.min(t))),
                    TxPoll::Blocked | TxPoll::Idle => {}
                }
            }
            node.arb.set_backlogged(s as u8, false);
        }
        node.arb = node.arb.clone().with_last_granted(saved);
        if let Some(t) = wake {
            self.wake_at(i, t);
        }
        None
    }

    fn transmit(&mut self, i: usize, pkt: Packet) {
        let now = self.now;
        let bytes = pkt.wire_bytes as u64;
        let node = &mut self.nodes[i];
        let ser = node.clock.advance(bytes);
        node.tx_busy_until = now + ser;
        node.stats.tx_bytes += bytes;
        node.stats.tx_packets += 1;
        if is_rdma_data(&pkt) {
            node.stats.data_tx_first.get_or_insert(now);
            node.stats.data_tx_last_end = Some(now + ser);
        }
        self.counters.nic_tx_bytes += bytes;
        if self.sc.link.lossless {
            self.ports[pkt.dst_node.index()].reserved += bytes;
        }
        self.hash.write_u64(pkt.id.0);
        self.schedule(now + ser, Event::NicTxDone { node: i });
        self.schedule(now + ser + self.sc.link.prop_delay_ns, Event::SwitchArrive { pkt });
    }

    fn on_switch_arrive(&mut self, mut pkt: Packet) -> Result<(), SimError> {
        let now = self.now;
        let link = self.sc.link;
        let dst = pkt.dst_node.index();
        let bytes = pkt.wire_bytes as u64;
        let port = &mut self.ports[dst];
        if link.lossless {
            port.reserved -= bytes;
        }
        let occ = port.occupancy(now);
        if occ + bytes > link.queue_cap_bytes {
            if link.lossless {
                return Err(SimError::QueueOverflow { node: dst, bytes: occ + bytes });
            }
            self.counters.switch_drops += 1;
            self.counters.switch_drop_bytes += bytes;
            self.hash.write_u64(pkt.id.0);
            return Ok(());
        }
        if occ > link.ecn_threshold_bytes {
            pkt.ecn_marked = true;
            self.counters.ecn_marks += 1;
        }
        let finish = port.enqueue(now, pkt.wire_bytes);
        self.schedule(finish + link.prop_delay_ns, Event::NodeArrive { pkt });
        Ok(())
    }

    fn on_node_arrive(&mut self, pkt: Packet) -> Result<(), SimError> {
        let now = self.now;
        let i = pkt.dst_node.index();
        self.hash.write_u64(pkt.id.0);
        self.counters.nic_rx_bytes += pkt.wire_bytes as u64;
        self.nodes[i].stats.rx_bytes += pkt.wire_bytes as u64;
        self.nodes[i].stats.rx_packets += 1;
        match classify(&pkt, true, self.sc.tcp_offload) {
            Route::FastRoce => {
                if let Some(b) = pkt.bth().filter(|b| b.opcode == RoceOpcode::Cnp) {
                    *self.cnps_received.entry((i, b.dest_qpn)).or_default() += 1;
                }
                let mut actions = Vec::new();
                self.nodes[i].engine.on_rx_segment(now, pkt, &mut self.ids, &mut actions)?;
                self.apply_actions(i, actions)?;
            }
            Route::FastTcp => match steer(&pkt.flow, &self.nodes[i].steering) {
                Steering::Scu(s) => {
                    let input = ScuInput {
                        wire_bytes: pkt.wire_bytes,
                        payload: pkt.payload,
                        addr: None,
                        flow: pkt.flow,
                        src_node: pkt.src_node,
                        src_subnet: pkt.src_subnet,
                    };
                    self.scu_input(i, s, input)?;
                }
                Steering::NoMapping => {
                    self.counters.steering_misses += 1;
                    self.slow_path(i, pkt);
                }
            },
            Route::SlowPath => self.slow_path(i, pkt),
        }
        self.try_send(i);
        Ok(())
    }

    fn apply_actions(&mut self, i: usize, actions: Vec<RxAction>) -> Result<(), SimError> {
        for a in actions {
            match a {
                RxAction::Deliver(d) => {
                    if self.nodes[i].roles.get(&d.qpn) == Some(&Role::Collective) {
                        self.collective_rx(i, d.payload.len());
                    }
                    let input = ScuInput {
                        wire_bytes: d.payload.len() as u32 + HEADER_BYTES as u32,
                        payload: d.payload,
                        addr: Some(d.addr),
                        flow: FlowKey::Roce { qpn: d.qpn },
                        src_node: d.src_node,
                        src_subnet: d.src_subnet,
                    };
                    self.scu_input(i, d.scu, input)?;
                }
                RxAction::Transmit(p) => self.nodes[i].control.push_back(p),
                RxAction::Completed { qpn, .. } => {
                    self.counters.completions += 1;
                    if let Some(&Role::Flow(f)) = self.nodes[i].roles.get(&qpn) {
                        self.on_flow_completion(f);
                    }
                }
                RxAction::QpError { .. } => self.counters.qp_errors += 1,
            }
        }
        Ok(())
    }

    fn scu_input(&mut self, i: usize, s: u8, input: ScuInput) -> Result<(), SimError> {
        let mut out = Vec::new();
        match self.nodes[i].bank.process(s, self.now, input, &mut out)? {
            ProcessOutcome::Accepted => {}
            ProcessOutcome::Faulted => self.counters.scu_faults += 1,
            ProcessOutcome::DroppedOffline | ProcessOutcome::DroppedError => self.counters.scu_dropped += 1,
        }
        self.handle_emissions(i, out)?;
        self.schedule_scu_wake(i, s);
        Ok(())
    }

    fn flow_of(&self, i: usize, key: &FlowKey) -> Option<usize> {
        match *key {
            FlowKey::Roce { qpn } => match self.nodes[i].roles.get(&qpn) {
                Some(&Role::Flow(f)) => Some(f),
                _ => None,
            },
            FlowKey::Tcp { session } => Some(session as usize).filter(|&f| f < self.flows.len()),
            FlowKey::Other { .. } => None,
        }
    }

    fn deliver_to_flow(&mut self, flow: Option<usize>, bytes: u64) {
        self.counters.delivered_bytes += bytes;
        if let Some(f) = flow {
            self.flows[f].progress.delivered_bytes += bytes;
        }
    }

    fn handle_emissions(&mut self, i: usize, out: Vec<Emission>) -> Result<(), SimError> {
        for e in out {
            let len = e.payload.len();
            match e.sink {
                Sink::HostMem { .. } | Sink::GpuMem { .. } => {
                    let node = &mut self.nodes[i];
                    match e.addr {
                        Some(a) => {
                            node.mem.write(a, &e.payload);
                        }
                        None => {
                            let c = node.captured.entry(e.sink).or_default();
                            c.len += len;
                            c.chunks += 1;
                            if let Some(b) = e.payload.bytes() {
                                c.bytes.extend_from_slice(b);
                            }
                        }
                    }
                    let flow = self.flow_of(i, &e.flow);
                    self.deliver_to_flow(flow, len);
                }
                Sink::NetTx { qpn } => self.nodes[i].engine.extend_available(qpn, len)?,
                Sink::ControlPlane => self.counters.control_plane_bytes += len,
            }
        }
        Ok(())
    }

    fn schedule_scu_wake(&mut self, i: usize, s: u8) {
        let Some(t) = self.nodes[i].bank.next_wake(s) else { return };
        let t = t.max(self.now);
        let slot = &mut self.nodes[i].scu_wake[s as usize];
        if slot.is_none_or(|w| t < w) {
            *slot = Some(t);
            self.schedule(t, Event::ScuWake { node: i, scu: s });
        }
    }

    fn slow_path(&mut self, i: usize, pkt: Packet) {
        let owner = match pkt.flow {
            FlowKey::Tcp { session } => Some(session as usize).filter(|&f| f < self.flows.len()),
            _ => self.raw_owner.remove(&pkt.id.0),
        };
        let now = self.now;
        let node = &mut self.nodes[i];
        if node.ring.rx_enqueue(&pkt.payload.to_vec()).is_none() {
            self.counters.ring_drops += 1;
            return;
        }
        node.ring_meta.push_back((now, owner));
        let step = node.irq.on_enqueue(now);
        self.irq_step(i, step);
    }

    fn irq_step(&mut self, i: usize, step: IrqStep) {
        let now = self.now;
        match step {
            IrqStep::Fire => {
                let node = &mut self.nodes[i];
                for k in node.covered..node.ring_meta.len() {
                    let lat = now.since(node.ring_meta[k].0);
                    node.stats.max_irq_latency_ns = node.stats.max_irq_latency_ns.max(lat);
                }
                node.covered = node.ring_meta.len();
                if !node.poll_scheduled {
                    node.poll_scheduled = true;
                    self.schedule(now + self.sc.hostpath.irq_latency_ns, Event::DriverPoll { node: i });
                }
            }
            IrqStep::CheckAt(t) => self.schedule(t, Event::IrqCheck { node: i }),
            IrqStep::Nothing => {}
        }
    }

    fn on_driver_poll(&mut self, i: usize) -> Result<(), SimError> {
        let now = self.now;
        let budget = self.sc.hostpath.poll_budget;
        let node = &mut self.nodes[i];
        let polled = node.ring.driver_poll(budget)?;
        let mut delivered = Vec::with_capacity(polled.len());
        for (k, p) in polled.iter().enumerate() {
            let (enq, owner) = node.ring_meta.pop_front().expect("one record per ring entry");
            let lat = now.since(enq);
            if k >= node.covered {
                node.stats.max_irq_latency_ns = node.stats.max_irq_latency_ns.max(lat);
            }
            node.stats.max_poll_latency_ns = node.stats.max_poll_latency_ns.max(lat);
            delivered.push((owner, p.len() as u64));
        }
        let n = polled.len();
        node.covered = node.covered.saturating_sub(n);
        let empty = node.ring.is_empty();
        let oldest = node.ring_meta.front().map(|m| m.0);
        let step = node.irq.on_polled(n as u64, now, empty, oldest);
        if empty {
            node.poll_scheduled = false;
        } else {
            self.schedule(now + self.sc.hostpath.poll_interval_ns, Event::DriverPoll { node: i });
        }
        for (owner, bytes) in delivered {
            self.deliver_to_flow(owner, bytes);
        }
        self.irq_step(i, step);
        Ok(())
    }

    fn post_next(&mut self, f: usize) -> bool {
        let fl = &self.flows[f];
        let spec = &fl.spec;
        if spec.count > 0 && fl.progress.posted >= spec.count {
            return false;
        }
        let opcode = if spec.op == FlowOp::Write { Opcode::Write } else { Opcode::Read };
        let wr = WorkRequest {
            wr_id: fl.progress.posted,
            opcode,
            local_addr: flow_addr(f),
            remote_addr: flow_addr(f),
            len_bytes: spec.size,
        };
        let (src, qpn) = (spec.src, fl.qp_src);
        match self.nodes[src].engine.post_work(qpn, wr) {
            Ok(()) => {
                self.flows[f].progress.posted += 1;
                true
            }
            Err(_) => {
                self.counters.post_errors += 1;
                false
            }
        }
    }

    fn on_flow_start(&mut self, f: usize) {
        let spec = self.flows[f].spec.clone();
        match spec.op {
            FlowOp::Write | FlowOp::Read => {
                for _ in 0..spec.depth {
                    if !self.post_next(f) {
                        break;
                    }
                }
                self.try_send(spec.src);
            }
            FlowOp::Stream | FlowOp::Raw => self.on_source_tick(f),
        }
    }

    fn on_flow_completion(&mut self, f: usize) {
        let fl = &mut self.flows[f];
        fl.progress.completed += 1;
        if fl.spec.count > 0 && fl.progress.completed == fl.spec.count {
            fl.progress.done_at = Some(self.now);
        }
        if self.now < self.end {
            self.post_next(f);
        }
    }

    fn on_source_tick(&mut self, f: usize) {
        let now = self.now;
        let fl = &mut self.flows[f];
        let spec = &fl.spec;
        if (spec.count > 0 && fl.sent >= spec.count) || now > self.end {
            return;
        }
        let wire = (spec.size + HEADER_BYTES) as u32;
        let (header, flow) = match spec.op {
            FlowOp::Stream => (Header::Tcp { session: f as u32, seq: fl.sent }, FlowKey::Tcp { session: f as u32 }),
            _ => (Header::Other(OtherReason::Raw), FlowKey::Other { reason: OtherReason::Raw }),
        };
        let pkt = Packet {
            id: self.ids.next_id(),
            flow,
            header,
            wire_bytes: wire,
            payload: Payload::Virtual(spec.size),
            ecn_marked: false,
            src_node: NodeId(spec.src as u32),
            dst_node: NodeId(spec.dst as u32),
            src_subnet: self.sc.nodes[spec.src].subnet,
        };
        fl.sent += 1;
        let mean = wire as f64 * 8.0 * 1e9 / spec.rate_bps as f64;
        let gap = if spec.poisson { fl.rng.exponential(mean) } else { mean };
        fl.next_at += gap;
        let next = SimTime::from_ns(fl.next_at as u64).max(now);
        let src = spec.src;
        let node = &mut self.nodes[src];
        if node.host_tx_bytes + wire as u64 > self.sc.hostpath.tx_queue_bytes {
            fl.progress.source_drops += 1;
            self.counters.source_drops += 1;
        } else {
            if spec.op == FlowOp::Raw {
                self.raw_owner.insert(pkt.id.0, f);
            }
            node.host_tx_bytes += wire as u64;
            node.host_tx.push_back(pkt);
        }
        if next <= self.end {
            self.schedule(next, Event::SourceTick { flow: f });
        }
        self.try_send(src);
    }

    fn each_qp(&self) -> Vec<(usize, u32)> {
        let mut v = Vec::new();
        for (i, n) in self.nodes.iter().enumerate() {
            v.extend(n.engine.qps().map(|q| (i, q.qpn())));
        }
        v
    }

    fn on_cc_load(&mut self) {
        let kind = cc_kind(self.sc.cc.swap_to);
        let now = self.now;
        for (i, qpn) in self.each_qp() {
            let q = self.nodes[i].engine.qp_mut(qpn).expect("listed");
            match q.cc_mut().load_shadow(kind, now) {
                Ok(ready_at) => {
                    let cnps = self.cnps_received.get(&(i, qpn)).copied().unwrap_or(0);
                    self.swaps.push(SwapRecord {
                        node: i,
                        qpn,
                        loaded_at: now,
                        ready_at,
                        swapped_at: None,
                        active_after: None,
                        rate_after_bps: None,
                        cnps_during_warmup: 0,
                        cnps_at_load: cnps,
                    });
                }
                Err(_) => self.counters.cc_swap_errors += 1,
            }
        }
    }

    fn on_cc_swap(&mut self) {
        let now = self.now;
        let policy = self.sc.cc.swap_policy;
        let mut retry: Option<SimTime> = None;
        for k in 0..self.swaps.len() {
            let r = &self.swaps[k];
            if r.swapped_at.is_some() {
                continue;
            }
            let (i, qpn) = (r.node, r.qpn);
            let q = self.nodes[i].engine.qp_mut(qpn).expect("recorded");
            match q.cc_mut().request_swap(now, policy) {
                Ok(SwapOutcome::Swapped { now_active }) => {
                    let rate = q.cc_decision().pacing_rate_bps;
                    let cnps = self.cnps_received.get(&(i, qpn)).copied().unwrap_or(0);
                    let r = &mut self.swaps[k];
                    r.swapped_at = Some(now);
                    r.active_after = Some(now_active);
                    r.rate_after_bps = rate;
                    r.cnps_during_warmup = cnps - r.cnps_at_load;
                    self.counters.cc_swaps += 1;
                }
                Ok(SwapOutcome::DeferredUntil(t)) => retry = Some(retry.map_or(t, |x| x.min(t))),
                Err(_) => self.counters.cc_swap_errors += 1,
            }
        }
        if let Some(t) = retry {
            self.schedule(t, Event::CcSwap);
        }
        for i in 0..self.nodes.len() {
            self.try_send(i);
        }
    }

    fn on_agent_timer(&mut self) -> Result<(), SimError> {
        let fw = self.sc.firewall.clone().expect("agent implies firewall");
        let now = self.now;
        let bank = &self.nodes[fw.node].bank;
        let agent = self.agent.as_mut().expect("scheduled with an agent");
        let step = agent.policy_step(now, |s| bank.get_csr(fw.scu, csr_reg(CSR_CLASS_BYTES, s)).unwrap_or(0));
        let apply_at = step.apply_at;
        self.agent_log.push(step);
        self.schedule(apply_at, Event::AgentApply { step: self.agent_log.len() - 1 });
        let next = now + fw.timer_period_ns;
        if next <= self.end {
            self.schedule(next, Event::AgentTimer);
        }
        Ok(())
    }

    fn on_agent_apply(&mut self, step: usize) -> Result<(), SimError> {
        let fw = self.sc.firewall.clone().expect("agent implies firewall");
        let writes = self.agent_log[step].writes.clone();
        for (subnet, cap) in writes {
            self.nodes[fw.node].bank.set_csr(fw.scu, csr_reg(CSR_CLASS_CAP, subnet), cap, self.now)?;
        }
        let mut out = Vec::new();
        self.nodes[fw.node].bank.wake(fw.scu, self.now, &mut out)?;
        self.handle_emissions(fw.node, out)?;
        self.schedule_scu_wake(fw.node, fw.scu);
        self.try_send(fw.node);
        Ok(())
    }

    fn on_collective_start(&mut self) {
        let now = self.now;
        let Some(rt) = self.coll.as_mut() else { return };
        for (done, &exp) in rt.done_at.iter_mut().zip(&rt.expected) {
            if exp == 0 {
                *done = Some(now);
            }
        }
        let writes = rt.writes.clone();
        let m = rt.spec.bytes;
        for (k, (node, qpn, local, remote, streaming)) in writes.into_iter().enumerate() {
            let wr = WorkRequest { wr_id: k as u64, opcode: Opcode::Write, local_addr: local, remote_addr: remote, len_bytes: m };
            let engine = &mut self.nodes[node].engine;
            let r = if streaming { engine.post_streaming_write(qpn, wr) } else { engine.post_work(qpn, wr) };
            if r.is_err() {
                self.counters.post_errors += 1;
            }
            self.try_send(node);
        }
    }

    fn collective_rx(&mut self, i: usize, bytes: u64) {
        let now = self.now;
        let Some(rt) = self.coll.as_mut() else { return };
        let Some(rank) = rt.spec.ranks.iter().position(|&r| r == i) else { return };
        rt.received[rank] += bytes;
        if rt.received[rank] == rt.expected[rank] {
            rt.done_at[rank] = Some(now);
        }
    }

    pub fn collective_report(&self) -> Option<CollectiveReport> {
        let rt = self.coll.as_ref()?;
        let spec = &rt.spec;
        let root = &self.nodes[spec.ranks[0]];
        let m = spec.bytes;
        let bit_exact = match spec.op {
            CollectiveOp::Broadcast => spec.ranks[1..]
                .iter()
                .all(|&r| self.nodes[r].mem.slice(COLL_DST, m) == Some(&rt.data[0][..])),
            CollectiveOp::Gather => {
                let whole: Vec<u8> = rt.data.concat();
                root.mem.slice(COLL_DST, whole.len() as u64) == Some(&whole[..])
            }
        };
        Some(CollectiveReport {
            op: spec.op,
            mode: spec.mode,
            bytes: m,
            started_at: SimTime::from_ns(spec.start_ns),
            root_first_tx: root.stats.data_tx_first,
            root_last_tx_end: root.stats.data_tx_last_end,
            done_at: rt.done_at.clone(),
            bit_exact,
        })
    }

    /// Human-readable one-line summary of a finished run.
    pub fn summary(&self) -> String {
        format!(
            "{}: {} events, {} bytes delivered, {} completions, {} drops",
            self.sc.name,
            self.counters.events,
            self.counters.delivered_bytes,
            self.counters.completions,
            self.counters.switch_drops + self.counters.ring_drops,
        )
    }
}
