//! Scenario description consumed by [`super::World::new`].

use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::cc::{DcqcnParams, SwapPolicy};
use crate::hostpath::DmaMode;
use crate::model::LinkSpec;
use crate::transport::EcnFeedback;

/// Header bytes added to every packet on the wire.
pub const HEADER_BYTES: u64 = 82;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowOp {
    Write,
    Read,
    /// Open-loop TCP-classified segments at a fixed rate.
    Stream,
    /// Open-loop unclassified packets, handled by the slow path.
    Raw,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataMode {
    /// Payload bytes are not materialized.
    Virtual,
    /// Source memory holds seeded random bytes and the target is backed, so
    /// delivered data can be compared byte for byte.
    Random,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowSpec {
    pub id: u32,
    pub src: usize,
    pub dst: usize,
    pub op: FlowOp,
    /// Bytes per work request, or per packet for stream and raw flows.
    pub size: u64,
    pub start_ns: u64,
    /// SCU at both ends for RDMA flows; receiver-side SCU for stream flows.
    pub scu: u8,
    /// Work requests to post in total; 0 keeps posting until the run ends.
    pub count: u64,
    /// Outstanding work requests kept in flight.
    pub depth: u32,
    /// Offered rate of stream and raw flows.
    pub rate_bps: u64,
    /// Exponential inter-arrival times instead of constant spacing.
    pub poisson: bool,
    pub data: DataMode,
}

impl FlowSpec {
    pub fn new(id: u32, src: usize, dst: usize, op: FlowOp, size: u64) -> Self {
        FlowSpec {
            id,
            src,
            dst,
            op,
            size,
            start_ns: 0,
            scu: 0,
            count: 0,
            depth: 1,
            rate_bps: 0,
            poisson: false,
            data: DataMode::Virtual,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeSpec {
    pub name: String,
    pub subnet: u16,
    pub scus: u8,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ScuKindSpec {
    Passthrough,
    HashPartition { dests: u32, row_width: usize, key_columns: usize, batch_rows: u64 },
    Firewall { burst_bytes: u64, queue_limit_bytes: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScuSpec {
    pub node: usize,
    pub index: u8,
    pub kind: ScuKindSpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CcAlgorithm {
    Window,
    Dcqcn,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CcSpec {
    pub algorithm: CcAlgorithm,
    /// 0 selects two bandwidth-delay products of the path.
    pub window_bytes: u64,
    pub dcqcn: DcqcnParams,
    pub load_at_ns: Option<u64>,
    pub swap_at_ns: Option<u64>,
    pub swap_to: CcAlgorithm,
    pub swap_policy: SwapPolicy,
    pub reconfig_delay_ns: u64,
    /// Interval of the timer that drives CC timers and retransmission checks.
    pub tick_ns: u64,
}

impl CcSpec {
    pub fn for_link(link: &LinkSpec) -> Self {
        CcSpec {
            algorithm: CcAlgorithm::Window,
            window_bytes: 0,
            dcqcn: DcqcnParams::for_line_rate(link.bits_per_second()),
            load_at_ns: None,
            swap_at_ns: None,
            swap_to: CcAlgorithm::Dcqcn,
            swap_policy: SwapPolicy::Defer,
            reconfig_delay_ns: crate::cc::DEFAULT_RECONFIG_DELAY_NS,
            tick_ns: 5_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransportSpec {
    pub ack_every: u32,
    pub cnp_interval_ns: u64,
    pub ecn_feedback: EcnFeedback,
    pub rto_ns: u64,
    pub tlb_capacity: usize,
    /// Scenarios register huge pages by default so steady flows stay in the TLB.
    pub page_size: u64,
    pub tlb_miss_ns: u64,
}

impl Default for TransportSpec {
    fn default() -> Self {
        TransportSpec {
            ack_every: 1,
            cnp_interval_ns: 50_000,
            ecn_feedback: EcnFeedback::Cnp,
            rto_ns: 200_000,
            tlb_capacity: 64,
            page_size: 2 << 20,
            tlb_miss_ns: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HostpathSpec {
    pub ring_bytes: usize,
    pub dma_mode: DmaMode,
    pub irq_count: u32,
    pub irq_timeout_ns: u64,
    /// Interrupt delivery latency until the driver's poll runs.
    pub irq_latency_ns: u64,
    pub poll_budget: usize,
    /// Delay between consecutive polls while the ring is not drained.
    pub poll_interval_ns: u64,
    /// Host TX queue limit for open-loop sources; excess is not injected.
    pub tx_queue_bytes: u64,
}

impl Default for HostpathSpec {
    fn default() -> Self {
        HostpathSpec {
            ring_bytes: 1 << 20,
            dma_mode: DmaMode::Tagged,
            irq_count: 32,
            irq_timeout_ns: 50_000,
            irq_latency_ns: 200,
            poll_budget: 64,
            poll_interval_ns: 1_000,
            tx_queue_bytes: 1 << 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FirewallSpec {
    pub node: usize,
    pub scu: u8,
    pub threshold_bps: u64,
    pub timer_period_ns: u64,
    pub axi_access_ns: u64,
    pub irq_trip_ns: u64,
    /// Subnets the agent monitors.
    pub subnets: Vec<u16>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CollectiveOp {
    Broadcast,
    Gather,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CollectiveMode {
    Flat,
    BinaryTree,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CollectiveSpec {
    pub op: CollectiveOp,
    pub mode: CollectiveMode,
    /// Participants in rank order; rank 0 is the root.
    pub ranks: Vec<usize>,
    pub bytes: u64,
    pub start_ns: u64,
    pub scu: u8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub duration_ns: u64,
    pub seed: u64,
    pub sample_period_ns: u64,
    pub link: LinkSpec,
    pub nodes: Vec<NodeSpec>,
    pub scus: Vec<ScuSpec>,
    pub flows: Vec<FlowSpec>,
    pub cc: CcSpec,
    pub transport: TransportSpec,
    pub hostpath: HostpathSpec,
    pub firewall: Option<FirewallSpec>,
    pub collective: Option<CollectiveSpec>,
    /// TCP segments take the fast path; off sends them to the slow path.
    pub tcp_offload: bool,
}

impl Scenario {
    pub fn new(name: &str) -> Self {
        let link = LinkSpec::default();
        Scenario {
            name: name.into(),
            duration_ns: 1_000_000,
            seed: 1,
            sample_period_ns: 1_000_000,
            cc: CcSpec::for_link(&link),
            link,
            nodes: Vec::new(),
            scus: Vec::new(),
            flows: Vec::new(),
            transport: TransportSpec::default(),
            hostpath: HostpathSpec::default(),
            firewall: None,
            collective: None,
            tcp_offload: true,
        }
    }

    pub fn add_node(&mut self, name: &str, subnet: u16, scus: u8) -> usize {
        self.nodes.push(NodeSpec { name: name.into(), subnet, scus });
        self.nodes.len() - 1
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    /// Checks cross references and ranges.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.link.validate().map_err(|_| ConfigError::Link)?;
        if self.sample_period_ns == 0 {
            return Err(ConfigError::Range { section: "scenario", what: "sample_period_ns must be positive" });
        }
        if self.cc.tick_ns == 0 {
            return Err(ConfigError::Range { section: "cc", what: "cc.tick_ns must be positive" });
        }
        if self.transport.ack_every == 0 {
            return Err(ConfigError::Range { section: "transport", what: "ack_every must be positive" });
        }
        if self.transport.tlb_capacity == 0 || self.transport.page_size == 0 {
            return Err(ConfigError::Range { section: "transport", what: "TLB capacity and page size must be positive" });
        }
        if self.hostpath.irq_count == 0 || self.hostpath.irq_timeout_ns == 0 {
            return Err(ConfigError::Range { section: "hostpath", what: "interrupt count and timeout must be positive" });
        }
        if !self.hostpath.ring_bytes.is_power_of_two() || self.hostpath.ring_bytes < 16 {
            return Err(ConfigError::Range { section: "hostpath", what: "ring size must be a power of two of at least 16" });
        }
        if self.hostpath.poll_budget == 0 {
            return Err(ConfigError::Range { section: "hostpath", what: "poll budget must be positive" });
        }
        let mut names = Vec::new();
        for n in &self.nodes {
            if n.scus as usize > crate::scu::MAX_SCUS {
                return Err(ConfigError::TooManyScus { node: n.name.clone(), count: n.scus });
            }
            if names.contains(&&n.name) {
                return Err(ConfigError::DuplicateNode(n.name.clone()));
            }
            names.push(&n.name);
        }
        let node = |i: usize| self.nodes.get(i).ok_or(ConfigError::UnknownNode(i));
        for s in &self.scus {
            let n = node(s.node)?;
            if s.index >= n.scus {
                return Err(ConfigError::ScuIndex { node: n.name.clone(), index: s.index, count: n.scus });
            }
            if let ScuKindSpec::HashPartition { dests, row_width, key_columns, .. } = s.kind {
                if dests == 0 || row_width == 0 || key_columns == 0 || key_columns * 8 > row_width {
                    return Err(ConfigError::Range { section: "scus", what: "hash partition shape" });
                }
            }
        }
        let mut ids = Vec::new();
        for f in &self.flows {
            if ids.contains(&f.id) {
                return Err(ConfigError::DuplicateFlow(f.id));
            }
            ids.push(f.id);
            let (src, dst) = (node(f.src)?, node(f.dst)?);
            if f.src == f.dst {
                return Err(ConfigError::Loopback(f.id));
            }
            if f.size == 0 {
                return Err(ConfigError::Flow { id: f.id, what: "flow size must be positive" });
            }
            if f.start_ns > self.duration_ns {
                return Err(ConfigError::StartAfterEnd(f.id));
            }
            match f.op {
                FlowOp::Write | FlowOp::Read => {
                    for n in [src, dst] {
                        if f.scu >= n.scus {
                            return Err(ConfigError::ScuIndex { node: n.name.clone(), index: f.scu, count: n.scus });
                        }
                    }
                    if f.depth == 0 {
                        return Err(ConfigError::Flow { id: f.id, what: "flow depth must be positive" });
                    }
                }
                FlowOp::Stream | FlowOp::Raw => {
                    if f.rate_bps == 0 {
                        return Err(ConfigError::Flow { id: f.id, what: "stream and raw flows need a rate" });
                    }
                    if f.size + HEADER_BYTES > self.link.mtu_bytes as u64 {
                        return Err(ConfigError::Flow { id: f.id, what: "packet size exceeds the MTU" });
                    }
                    if f.op == FlowOp::Stream && f.scu >= dst.scus {
                        return Err(ConfigError::ScuIndex { node: dst.name.clone(), index: f.scu, count: dst.scus });
                    }
                }
            }
        }
        if let Some(fw) = &self.firewall {
            let n = node(fw.node)?;
            if fw.scu >= n.scus {
                return Err(ConfigError::ScuIndex { node: n.name.clone(), index: fw.scu, count: n.scus });
            }
            if fw.timer_period_ns == 0 {
                return Err(ConfigError::Range { section: "firewall", what: "firewall timer period must be positive" });
            }
            let is_fw = self
                .scus
                .iter()
                .any(|s| s.node == fw.node && s.index == fw.scu && matches!(s.kind, ScuKindSpec::Firewall { .. }));
            if !is_fw {
                return Err(ConfigError::Range { section: "firewall", what: "the firewall agent must manage a firewall SCU" });
            }
        }
        if let Some(c) = &self.collective {
            if c.ranks.is_empty() {
                return Err(ConfigError::Range { section: "collective", what: "collective needs at least one rank" });
            }
            for (k, &r) in c.ranks.iter().enumerate() {
                if c.ranks[..k].contains(&r) {
                    return Err(ConfigError::Range { section: "collective", what: "collective ranks must be distinct nodes" });
                }
                let n = node(r)?;
                if c.scu >= n.scus {
                    return Err(ConfigError::ScuIndex { node: n.name.clone(), index: c.scu, count: n.scus });
                }
            }
            if c.bytes == 0 {
                return Err(ConfigError::Range { section: "collective", what: "collective size must be positive" });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("invalid link parameters")]
    Link,
    #[error("[{section}] {what}")]
    Range { section: &'static str, what: &'static str },
    #[error("flow {id}: {what}")]
    Flow { id: u32, what: &'static str },
    #[error("node index {0} does not exist")]
    UnknownNode(usize),
    #[error("duplicate node name {0}")]
    DuplicateNode(String),
    #[error("duplicate flow id {0}")]
    DuplicateFlow(u32),
    #[error("flow {0} starts and ends on the same node")]
    Loopback(u32),
    #[error("flow {0} starts after the end of the run")]
    StartAfterEnd(u32),
    #[error("node {node} has {count} SCUs, index {index} is out of range")]
    ScuIndex { node: String, index: u8, count: u8 },
    #[error("node {node} declares {count} SCUs, more than 16")]
    TooManyScus { node: String, count: u8 },
}
