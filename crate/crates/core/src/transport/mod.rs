//! RoCEv2-style reliable transport.
//!
//! The engine owns every queue pair of one NIC together with its address
//! space. It is driven from outside: the NIC asks [`RoceEngine::poll_tx`] for
//! the next segment of a QP when the arbiter grants it, and hands received
//! segments to [`RoceEngine::on_rx_segment`], which reports payload deliveries,
//! control packets to send and completions as [`RxAction`]s.
//!
//! Links are assumed lossless. With `lossless = false` a go-back-N scheme
//! recovers from drops: the responder NAKs the first gap, the requester
//! rewinds to the lowest unacknowledged PSN, and a retransmission timeout
//! covers tail losses.

mod memory;
mod qp;
mod tlb;

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use thiserror::Error;

pub use memory::HostMemory;
pub use qp::{Opcode, QpState, QueuePair, WorkRequest};
pub use tlb::{
    tlb_lookup, AddressSpace, MemoryRegion, MrHandle, Tlb, TlbConfig, Translation, TranslationError,
};

use crate::cc::{CcConfig, CcKind, CcSignal, DualSlot};
use crate::model::{
    AckSyndrome, Bth, FlowKey, Header, NodeId, Packet, PacketIdGen, Payload, RoceOpcode, SimTime,
};
use crate::triage::SteeringTable;
use qp::{AwaitingWrite, OutSeg, PendingRead, ResponseJob, SendWr};

/// How receivers report ECN marks back to the sender.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EcnFeedback {
    /// Rate-limited congestion notification packets.
    #[default]
    Cnp,
    /// An echo bit on the next ACK.
    AckEcho,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransportConfig {
    /// Wire overhead of a data segment; payload per segment is the link MTU
    /// minus this.
    pub header_overhead: u32,
    /// Wire size of ACK, NAK, CNP and READ request packets.
    pub control_wire_bytes: u32,
    /// Responder ACKs every N data segments (and always the last of a message).
    pub ack_every: u32,
    pub cnp_interval_ns: u64,
    pub ecn_feedback: EcnFeedback,
    pub lossless: bool,
    /// Retransmission timeout, only used when `lossless` is false.
    pub rto_ns: u64,
    /// Pace READ responses with the responder's congestion control.
    pub gate_read_responses: bool,
    pub tlb: TlbConfig,
}

impl Default for TransportConfig {
    fn default() -> Self {
        TransportConfig {
            header_overhead: 82,
            control_wire_bytes: 82,
            ack_every: 1,
            cnp_interval_ns: 50_000,
            ecn_feedback: EcnFeedback::Cnp,
            lossless: true,
            rto_ns: 200_000,
            gate_read_responses: false,
            tlb: TlbConfig::default(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("SCU index {index} out of range (node has {count} SCUs)")]
    ScuOutOfRange { index: u8, count: u8 },
    #[error("unknown queue pair {0}")]
    UnknownQp(u32),
    #[error("queue pair {qpn} is in state {state:?}")]
    QpNotReady { qpn: u32, state: QpState },
    #[error("queue pair {0} is not connected to a peer")]
    NotConnected(u32),
    #[error("queue pair {qpn}: address range at {addr:#x} is not registered")]
    UnregisteredAddress { qpn: u32, addr: u64 },
    #[error("work requests must carry at least one byte")]
    EmptyRequest,
    #[error(transparent)]
    Translation(#[from] TranslationError),
}

/// A simulation bug: segments overtook each other on a lossless link.
#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("qp {qpn}: psn {got} arrived while expecting {expected} on a lossless link")]
pub struct ProtocolViolation {
    pub qpn: u32,
    pub expected: u32,
    pub got: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DeliveryKind {
    WriteData,
    ReadData,
}

/// In-order payload handed to the SCU the flow is steered to.
#[derive(Clone, Debug, PartialEq)]
pub struct Delivery {
    pub qpn: u32,
    pub scu: u8,
    pub addr: u64,
    pub payload: Payload,
    pub kind: DeliveryKind,
    pub src_node: NodeId,
    pub src_subnet: u16,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RxAction {
    Deliver(Delivery),
    /// Control packet (ACK, NAK, CNP, READ request) to send.
    Transmit(Packet),
    Completed { qpn: u32, wr_id: u64, opcode: Opcode, len: u64 },
    QpError { qpn: u32 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum TxPoll {
    Packet(Packet),
    /// Work is ready but pacing holds it until the given time.
    PacedUntil(SimTime),
    /// Work exists but waits for an ACK, window space or source data.
    Blocked,
    Idle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CompletionPoll {
    pub count: u64,
    pub error: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TransportStats {
    pub unknown_qp_drops: u64,
    pub duplicates: u64,
    pub out_of_order_drops: u64,
    pub naks_sent: u64,
    pub cnps_sent: u64,
    pub acks_sent: u64,
    pub retransmits: u64,
    pub timeouts: u64,
    pub access_faults: u64,
    pub tx_tlb_stall_ns: u64,
    pub rx_tlb_stall_ns: u64,
}

/// Number of MTU-sized segments a message of `len` bytes is split into.
pub fn segment_count(len: u64, mtu_payload: u64) -> u32 {
    assert!(mtu_payload > 0);
    len.div_ceil(mtu_payload) as u32
}

/// `(offset, length)` of every segment of a `len`-byte message.
pub fn segment(len: u64, mtu_payload: u64) -> impl Iterator<Item = (u64, u64)> {
    assert!(mtu_payload > 0);
    (0..len.div_ceil(mtu_payload)).map(move |i| {
        let off = i * mtu_payload;
        (off, mtu_payload.min(len - off))
    })
}

struct CcDefaults {
    config: CcConfig,
    kind: CcKind,
    reconfig_delay_ns: u64,
}

/// All queue pairs of one NIC.
pub struct RoceEngine {
    node: NodeId,
    subnet: u16,
    config: TransportConfig,
    mtu_payload: u64,
    scu_count: u8,
    qps: BTreeMap<u32, QueuePair>,
    next_qpn: u32,
    space: AddressSpace,
    cc: CcDefaults,
    stats: TransportStats,
}

impl core::fmt::Debug for RoceEngine {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("RoceEngine")
            .field("node", &self.node)
            .field("qps", &self.qps.len())
            .field("stats", &self.stats)
            .finish()
    }
}

/// Everything a per-QP handler needs besides the QP itself.
struct Ctx<'a> {
    node: NodeId,
    subnet: u16,
    mtu: u64,
    now: SimTime,
    config: &'a TransportConfig,
    stats: &'a mut TransportStats,
    ids: &'a mut PacketIdGen,
}

impl Ctx<'_> {
    fn packet(&mut self, q: &QueuePair, opcode: RoceOpcode, psn: u32, payload: Payload) -> Packet {
        let peer_qpn = q.peer_qpn.expect("only connected QPs transmit");
        let wire_bytes = match opcode {
            RoceOpcode::WriteData { .. } | RoceOpcode::ReadResponse { .. } => {
                self.config.header_overhead + payload.len() as u32
            }
            _ => self.config.control_wire_bytes,
        };
        Packet {
            id: self.ids.next_id(),
            flow: FlowKey::Roce { qpn: peer_qpn },
            header: Header::Roce(Bth { opcode, dest_qpn: peer_qpn, psn }),
            wire_bytes,
            payload,
            ecn_marked: false,
            src_node: self.node,
            dst_node: q.peer_node,
            src_subnet: self.subnet,
        }
    }

    fn ack(&mut self, q: &QueuePair, syndrome: AckSyndrome, ecn_echo: bool) -> Packet {
        match syndrome {
            AckSyndrome::Ack => self.stats.acks_sent += 1,
            _ => self.stats.naks_sent += 1,
        }
        self.packet(q, RoceOpcode::Ack { syndrome, ecn_echo }, q.expect_psn, Payload::empty())
    }

    /// ECN mark on an accepted data segment: notify the sender.
    fn on_marked(&mut self, q: &mut QueuePair, is_write: bool, out: &mut Vec<RxAction>) {
        if is_write && self.config.ecn_feedback == EcnFeedback::AckEcho {
            q.echo_pending = true;
            return;
        }
        let due = q.last_cnp_sent.is_none_or(|t| self.now.since(t) >= self.config.cnp_interval_ns);
        if due {
            q.last_cnp_sent = Some(self.now);
            self.stats.cnps_sent += 1;
            let cnp = self.packet(q, RoceOpcode::Cnp, 0, Payload::empty());
            out.push(RxAction::Transmit(cnp));
        }
    }

    fn pace(&self, q: &mut QueuePair, wire_bytes: u32, rate_bps: Option<u64>) {
        let Some(rate) = rate_bps else { return };
        if rate == 0 {
            q.next_send_at = SimTime::MAX;
            return;
        }
        let gap = wire_bytes as f64 * 8.0 * 1e9 / rate as f64 + q.pace_carry_ns;
        let whole = gap as u64;
        q.pace_carry_ns = gap - whole as f64;
        q.next_send_at = q.next_send_at.max(self.now) + whole;
    }
}

fn fail_qp(q: &mut QueuePair, out: &mut Vec<RxAction>) {
    q.state = QpState::Error;
    q.error_seen = true;
    q.send_queue.clear();
    q.outstanding.clear();
    q.resend_cursor = None;
    q.awaiting.clear();
    q.reads.clear();
    q.responses.clear();
    out.push(RxAction::QpError { qpn: q.qpn });
}

/// Go-back-N: resend everything at or after `psn`.
fn rewind(q: &mut QueuePair, psn: u32) {
    if let Some(i) = q.outstanding.iter().position(|s| s.psn >= psn) {
        q.resend_cursor = Some(q.resend_cursor.map_or(i, |c| c.min(i)));
    }
    for r in q.reads.iter_mut() {
        if r.first_psn + r.received >= psn {
            r.needs_request = true;
        }
    }
}

impl RoceEngine {
    pub fn new(node: NodeId, subnet: u16, mtu_bytes: u32, line_rate_bps: u64, scu_count: u8, config: TransportConfig) -> Self {
        assert!(mtu_bytes > config.header_overhead, "MTU leaves no room for payload");
        let mtu_payload = (mtu_bytes - config.header_overhead) as u64;
        let bdp_window = 256 * 1024;
        RoceEngine {
            node,
            subnet,
            space: AddressSpace::new(config.tlb),
            config,
            mtu_payload,
            scu_count,
            qps: BTreeMap::new(),
            next_qpn: 1,
            cc: CcDefaults {
                config: CcConfig::for_line_rate(line_rate_bps, bdp_window),
                kind: CcKind::Window,
                reconfig_delay_ns: crate::cc::DEFAULT_RECONFIG_DELAY_NS,
            },
            stats: TransportStats::default(),
        }
    }

    /// Algorithm and parameters given to every QP created from now on.
    pub fn set_cc_defaults(&mut self, config: CcConfig, kind: CcKind, reconfig_delay_ns: u64) {
        self.cc = CcDefaults { config, kind, reconfig_delay_ns };
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn config(&self) -> &TransportConfig {
        &self.config
    }

    pub fn mtu_payload(&self) -> u64 {
        self.mtu_payload
    }

    pub fn stats(&self) -> &TransportStats {
        &self.stats
    }

    pub fn space(&self) -> &AddressSpace {
        &self.space
    }

    pub fn space_mut(&mut self) -> &mut AddressSpace {
        &mut self.space
    }

    pub fn qp(&self, qpn: u32) -> Option<&QueuePair> {
        self.qps.get(&qpn)
    }

    pub fn qp_mut(&mut self, qpn: u32) -> Option<&mut QueuePair> {
        self.qps.get_mut(&qpn)
    }

    pub fn qps(&self) -> impl Iterator<Item = &QueuePair> {
        self.qps.values()
    }

    pub fn qps_mut(&mut self) -> impl Iterator<Item = &mut QueuePair> {
        self.qps.values_mut()
    }

    /// New QP in `Ready` state bound to `scu_index`, with a fresh CC slot and
    /// a steering entry for its QPN.
    pub fn create_qp(&mut self, peer: NodeId, scu_index: u8, steering: &mut SteeringTable) -> Result<u32, TransportError> {
        if scu_index >= self.scu_count {
            return Err(TransportError::ScuOutOfRange { index: scu_index, count: self.scu_count });
        }
        let slot = DualSlot::new(self.cc.config.clone(), self.cc.kind)
            .expect("default CC kind is built in")
            .with_reconfig_delay(self.cc.reconfig_delay_ns);
        let qpn = self.next_qpn;
        steering
            .insert(FlowKey::Roce { qpn }, scu_index)
            .map_err(|_| TransportError::ScuOutOfRange { index: scu_index, count: self.scu_count })?;
        self.next_qpn += 1;
        self.qps.insert(qpn, QueuePair::new(qpn, peer, scu_index, slot));
        Ok(qpn)
    }

    pub fn connect(&mut self, qpn: u32, peer_qpn: u32) -> Result<(), TransportError> {
        let q = self.qps.get_mut(&qpn).ok_or(TransportError::UnknownQp(qpn))?;
        q.peer_qpn = Some(peer_qpn);
        Ok(())
    }

    pub fn register_mr(&mut self, base: u64, len: u64, now: SimTime) -> Result<MrHandle, TransportError> {
        Ok(self.space.register_mr(base, len, now)?)
    }

    pub fn tlb_lookup(&mut self, vaddr: u64, now: SimTime) -> Result<Translation, TransportError> {
        Ok(self.space.lookup(vaddr, now)?)
    }

    fn check_post(&mut self, qpn: u32, wr: &WorkRequest) -> Result<(), TransportError> {
        let q = self.qps.get_mut(&qpn).ok_or(TransportError::UnknownQp(qpn))?;
        if q.state != QpState::Ready {
            return Err(TransportError::QpNotReady { qpn, state: q.state });
        }
        if q.peer_qpn.is_none() {
            return Err(TransportError::NotConnected(qpn));
        }
        if wr.len_bytes == 0 {
            return Err(TransportError::EmptyRequest);
        }
        if !self.space.is_registered(wr.local_addr, wr.len_bytes) {
            self.stats.access_faults += 1;
            let mut sink = Vec::new();
            fail_qp(q, &mut sink);
            return Err(TransportError::UnregisteredAddress { qpn, addr: wr.local_addr });
        }
        Ok(())
    }

    /// Queues a WRITE or READ. An unregistered local range moves the QP to
    /// `Error`, which the next completion poll reports.
    pub fn post_work(&mut self, qpn: u32, wr: WorkRequest) -> Result<(), TransportError> {
        self.check_post(qpn, &wr)?;
        let q = self.qps.get_mut(&qpn).expect("checked");
        q.send_queue.push_back(SendWr { wr, sent: 0, available: wr.len_bytes });
        Ok(())
    }

    /// A WRITE whose source bytes appear over time; see [`Self::extend_available`].
    pub fn post_streaming_write(&mut self, qpn: u32, wr: WorkRequest) -> Result<(), TransportError> {
        debug_assert_eq!(wr.opcode, Opcode::Write);
        self.check_post(qpn, &wr)?;
        let q = self.qps.get_mut(&qpn).expect("checked");
        q.send_queue.push_back(SendWr { wr, sent: 0, available: 0 });
        Ok(())
    }

    /// Makes `bytes` more source data available to the oldest streaming WRITE.
    pub fn extend_available(&mut self, qpn: u32, mut bytes: u64) -> Result<(), TransportError> {
        let q = self.qps.get_mut(&qpn).ok_or(TransportError::UnknownQp(qpn))?;
        for swr in q.send_queue.iter_mut() {
            if bytes == 0 {
                break;
            }
            let room = swr.wr.len_bytes - swr.available;
            let add = room.min(bytes);
            swr.available += add;
            bytes -= add;
        }
        Ok(())
    }

    pub fn poll_completion(&mut self, qpn: u32) -> Result<CompletionPoll, TransportError> {
        let q = self.qps.get_mut(&qpn).ok_or(TransportError::UnknownQp(qpn))?;
        let count = q.completion_counter - q.polled_counter;
        q.polled_counter = q.completion_counter;
        Ok(CompletionPoll { count, error: q.error_seen })
    }

    /// Next segment QP `qpn` wants to put on the wire, if any.
    ///
    /// Order within a QP: READ responses, owed READ requests, go-back-N
    /// retransmissions, then new work in posting order.
    pub fn poll_tx(&mut self, qpn: u32, now: SimTime, mem: &HostMemory, ids: &mut PacketIdGen) -> TxPoll {
        let RoceEngine { node, subnet, config, mtu_payload, qps, space, stats, .. } = self;
        let Some(q) = qps.get_mut(&qpn) else { return TxPoll::Idle };
        if q.state != QpState::Ready || q.peer_qpn.is_none() {
            return TxPoll::Idle;
        }
        let mut ctx = Ctx { node: *node, subnet: *subnet, mtu: *mtu_payload, now, config, stats, ids };
        let mtu = ctx.mtu;

        if let Some(job) = q.responses.front().copied() {
            if ctx.config.gate_read_responses && q.next_send_at > now {
                return TxPoll::PacedUntil(q.next_send_at);
            }
            let seg = mtu.min(job.len - job.sent);
            let psn = job.first_psn + (job.sent / mtu) as u32;
            let last = job.sent + seg == job.len;
            let payload = mem.read(job.addr + job.sent, seg);
            let pkt = ctx.packet(q, RoceOpcode::ReadResponse { last }, psn, payload);
            if last {
                q.responses.pop_front();
            } else {
                q.responses.front_mut().expect("present").sent += seg;
            }
            if ctx.config.gate_read_responses {
                let rate = q.cc.decision().pacing_rate_bps;
                ctx.pace(q, pkt.wire_bytes, rate);
                q.cc.signal(now, &CcSignal::Sent { bytes: seg });
            }
            return TxPoll::Packet(pkt);
        }

        if let Some(i) = q.reads.iter().position(|r| r.needs_request) {
            let r = &mut q.reads[i];
            r.needs_request = false;
            let off = r.received as u64 * mtu;
            let (addr, len, psn) = (r.remote_addr + off, r.len - off, r.first_psn + r.received);
            ctx.stats.retransmits += 1;
            let pkt = ctx.packet(q, RoceOpcode::ReadRequest { remote_addr: addr, len }, psn, Payload::empty());
            return TxPoll::Packet(pkt);
        }

        if let Some(c) = q.resend_cursor {
            if q.next_send_at > now {
                return TxPoll::PacedUntil(q.next_send_at);
            }
            let seg = q.outstanding[c];
            q.resend_cursor = if c + 1 < q.outstanding.len() { Some(c + 1) } else { None };
            let payload = mem.read(seg.local_addr, seg.len);
            let op = RoceOpcode::WriteData { remote_addr: seg.remote_addr, last: seg.last };
            let pkt = ctx.packet(q, op, seg.psn, payload);
            let rate = q.cc.decision().pacing_rate_bps;
            ctx.pace(q, pkt.wire_bytes, rate);
            ctx.stats.retransmits += 1;
            q.last_progress = now;
            return TxPoll::Packet(pkt);
        }

        let Some(head) = q.send_queue.front().cloned() else { return TxPoll::Idle };
        match head.wr.opcode {
            Opcode::Read => {
                let segments = segment_count(head.wr.len_bytes, mtu);
                let psn = q.send_psn;
                q.send_psn += segments;
                q.send_queue.pop_front();
                if q.reads.is_empty() {
                    q.last_progress = now;
                }
                q.reads.push_back(PendingRead {
                    wr_id: head.wr.wr_id,
                    local_addr: head.wr.local_addr,
                    remote_addr: head.wr.remote_addr,
                    len: head.wr.len_bytes,
                    first_psn: psn,
                    segments,
                    received: 0,
                    needs_request: false,
                });
                let op = RoceOpcode::ReadRequest { remote_addr: head.wr.remote_addr, len: head.wr.len_bytes };
                TxPoll::Packet(ctx.packet(q, op, psn, Payload::empty()))
            }
            Opcode::Write => {
                let seg = mtu.min(head.wr.len_bytes - head.sent);
                if head.sent + seg > head.available {
                    return TxPoll::Blocked;
                }
                let decision = q.cc.decision();
                if seg > decision.allowance_bytes {
                    return TxPoll::Blocked;
                }
                if q.next_send_at > now {
                    return TxPoll::PacedUntil(q.next_send_at);
                }
                let local = head.wr.local_addr + head.sent;
                match space.lookup_range(local, seg, now) {
                    Err(_) => {
                        ctx.stats.access_faults += 1;
                        let mut sink = Vec::new();
                        fail_qp(q, &mut sink);
                        return TxPoll::Idle;
                    }
                    Ok(0) => {}
                    Ok(stall) => {
                        ctx.stats.tx_tlb_stall_ns += stall;
                        q.next_send_at = now + stall;
                        return TxPoll::PacedUntil(q.next_send_at);
                    }
                }
                let psn = q.send_psn;
                q.send_psn += 1;
                let last = head.sent + seg == head.wr.len_bytes;
                let remote = head.wr.remote_addr + head.sent;
                let payload = mem.read(local, seg);
                let pkt = ctx.packet(q, RoceOpcode::WriteData { remote_addr: remote, last }, psn, payload);
                if q.outstanding.is_empty() {
                    q.last_progress = now;
                }
                q.outstanding.push_back(OutSeg {
                    psn,
                    local_addr: local,
                    remote_addr: remote,
                    len: seg,
                    last,
                    sent_at: now,
                });
                q.in_flight_bytes += seg;
                q.bytes_sent += seg;
                q.cc.signal(now, &CcSignal::Sent { bytes: seg });
                ctx.pace(q, pkt.wire_bytes, decision.pacing_rate_bps);
                if last {
                    q.send_queue.pop_front();
                    q.awaiting.push_back(AwaitingWrite { wr_id: head.wr.wr_id, last_psn: psn, len: head.wr.len_bytes });
                } else {
                    q.send_queue.front_mut().expect("present").sent += seg;
                }
                TxPoll::Packet(pkt)
            }
        }
    }

    /// Processes one received RoCE packet.
    pub fn on_rx_segment(
        &mut self,
        now: SimTime,
        pkt: Packet,
        ids: &mut PacketIdGen,
        out: &mut Vec<RxAction>,
    ) -> Result<(), ProtocolViolation> {
        let Some(&bth) = pkt.bth() else { return Ok(()) };
        let RoceEngine { node, subnet, config, mtu_payload, qps, space, stats, .. } = self;
        let Some(q) = qps.get_mut(&bth.dest_qpn) else {
            stats.unknown_qp_drops += 1;
            return Ok(());
        };
        if q.state != QpState::Ready || q.peer_qpn.is_none() {
            return Ok(());
        }
        let mut ctx = Ctx { node: *node, subnet: *subnet, mtu: *mtu_payload, now, config, stats, ids };
        match bth.opcode {
            RoceOpcode::WriteData { remote_addr, last } => {
                on_write_data(&mut ctx, space, q, &pkt, bth.psn, remote_addr, last, out)
            }
            RoceOpcode::ReadRequest { remote_addr, len } => {
                on_read_request(&mut ctx, space, q, bth.psn, remote_addr, len, out)
            }
            RoceOpcode::ReadResponse { .. } => on_read_response(&mut ctx, q, &pkt, bth.psn, out),
            RoceOpcode::Ack { syndrome, ecn_echo } => {
                on_ack(&mut ctx, q, bth.psn, syndrome, ecn_echo, out);
                Ok(())
            }
            RoceOpcode::Cnp => {
                q.cc.signal(now, &CcSignal::Cnp);
                Ok(())
            }
        }
    }

    /// Periodic work: CC timers and, on lossy links, retransmission timeouts.
    pub fn tick(&mut self, now: SimTime) {
        let lossy = !self.config.lossless;
        for q in self.qps.values_mut() {
            if q.state != QpState::Ready {
                continue;
            }
            q.cc.signal(now, &CcSignal::Timer { at: now });
            if lossy {
                if let Some(low) = q.lowest_unacked() {
                    if now.since(q.last_progress) >= self.config.rto_ns {
                        self.stats.timeouts += 1;
                        rewind(q, low);
                        q.last_progress = now;
                    }
                }
            }
        }
    }

    /// True if any QP has something it could send now or later.
    pub fn has_tx_work(&self, qpn: u32) -> bool {
        self.qps.get(&qpn).is_some_and(|q| {
            q.state == QpState::Ready
                && (!q.responses.is_empty()
                    || !q.send_queue.is_empty()
                    || q.resend_cursor.is_some()
                    || q.reads.iter().any(|r| r.needs_request))
        })
    }
}

#[allow(clippy::too_many_arguments)]
fn on_write_data(
    ctx: &mut Ctx<'_>,
    space: &mut AddressSpace,
    q: &mut QueuePair,
    pkt: &Packet,
    psn: u32,
    remote_addr: u64,
    last: bool,
    out: &mut Vec<RxAction>,
) -> Result<(), ProtocolViolation> {
    if psn == q.expect_psn {
        let len = pkt.payload.len();
        match space.lookup_range(remote_addr, len, ctx.now) {
            Ok(stall) => ctx.stats.rx_tlb_stall_ns += stall,
            Err(_) => {
                ctx.stats.access_faults += 1;
                let nak = ctx.ack(q, AckSyndrome::RemoteAccessError, false);
                out.push(RxAction::Transmit(nak));
                fail_qp(q, out);
                return Ok(());
            }
        }
        q.expect_psn += 1;
        q.nak_sent = false;
        q.bytes_received += len;
        out.push(RxAction::Deliver(Delivery {
            qpn: q.qpn,
            scu: q.scu_index,
            addr: remote_addr,
            payload: pkt.payload.clone(),
            kind: DeliveryKind::WriteData,
            src_node: pkt.src_node,
            src_subnet: pkt.src_subnet,
        }));
        if pkt.ecn_marked {
            ctx.on_marked(q, true, out);
        }
        q.acks_pending += 1;
        if q.acks_pending >= ctx.config.ack_every || last {
            q.acks_pending = 0;
            let echo = core::mem::take(&mut q.echo_pending);
            let ack = ctx.ack(q, AckSyndrome::Ack, echo);
            out.push(RxAction::Transmit(ack));
        }
        Ok(())
    } else if psn < q.expect_psn {
        ctx.stats.duplicates += 1;
        let ack = ctx.ack(q, AckSyndrome::Ack, false);
        out.push(RxAction::Transmit(ack));
        Ok(())
    } else if ctx.config.lossless {
        Err(ProtocolViolation { qpn: q.qpn, expected: q.expect_psn, got: psn })
    } else {
        ctx.stats.out_of_order_drops += 1;
        if !q.nak_sent {
            q.nak_sent = true;
            let nak = ctx.ack(q, AckSyndrome::Nak, false);
            out.push(RxAction::Transmit(nak));
        }
        Ok(())
    }
}

fn on_read_request(
    ctx: &mut Ctx<'_>,
    space: &mut AddressSpace,
    q: &mut QueuePair,
    psn: u32,
    remote_addr: u64,
    len: u64,
    out: &mut Vec<RxAction>,
) -> Result<(), ProtocolViolation> {
    if psn > q.expect_psn {
        if ctx.config.lossless {
            return Err(ProtocolViolation { qpn: q.qpn, expected: q.expect_psn, got: psn });
        }
        ctx.stats.out_of_order_drops += 1;
        if !q.nak_sent {
            q.nak_sent = true;
            let nak = ctx.ack(q, AckSyndrome::Nak, false);
            out.push(RxAction::Transmit(nak));
        }
        return Ok(());
    }
    if !space.is_registered(remote_addr, len) {
        ctx.stats.access_faults += 1;
        let nak = ctx.ack(q, AckSyndrome::RemoteAccessError, false);
        out.push(RxAction::Transmit(nak));
        fail_qp(q, out);
        return Ok(());
    }
    let mtu = ctx.mtu;
    if psn < q.expect_psn {
        // Re-request after a loss: drop whatever was queued from this PSN on.
        ctx.stats.duplicates += 1;
        q.responses.retain_mut(|job| {
            if job.first_psn >= psn {
                return false;
            }
            let end = job.first_psn + segment_count(job.len, mtu);
            if end > psn {
                job.len = (psn - job.first_psn) as u64 * mtu;
            }
            job.sent < job.len
        });
    }
    q.nak_sent = false;
    q.responses.push_back(ResponseJob { first_psn: psn, addr: remote_addr, len, sent: 0 });
    q.expect_psn = q.expect_psn.max(psn + segment_count(len, mtu));
    Ok(())
}

fn on_read_response(
    ctx: &mut Ctx<'_>,
    q: &mut QueuePair,
    pkt: &Packet,
    psn: u32,
    out: &mut Vec<RxAction>,
) -> Result<(), ProtocolViolation> {
    let Some(head) = q.reads.front().copied() else {
        ctx.stats.duplicates += 1;
        return Ok(());
    };
    let expected = head.first_psn + head.received;
    if psn < expected {
        ctx.stats.duplicates += 1;
        return Ok(());
    }
    if psn > expected {
        if ctx.config.lossless {
            return Err(ProtocolViolation { qpn: q.qpn, expected, got: psn });
        }
        ctx.stats.out_of_order_drops += 1;
        if !q.reread_sent {
            q.reread_sent = true;
            rewind(q, expected);
        }
        return Ok(());
    }
    let off = head.received as u64 * ctx.mtu;
    let len = pkt.payload.len();
    q.reread_sent = false;
    q.last_progress = ctx.now;
    q.bytes_received += len;
    out.push(RxAction::Deliver(Delivery {
        qpn: q.qpn,
        scu: q.scu_index,
        addr: head.local_addr + off,
        payload: pkt.payload.clone(),
        kind: DeliveryKind::ReadData,
        src_node: pkt.src_node,
        src_subnet: pkt.src_subnet,
    }));
    if pkt.ecn_marked {
        ctx.on_marked(q, false, out);
    }
    let front = q.reads.front_mut().expect("present");
    front.received += 1;
    if front.received == front.segments {
        let done = q.reads.pop_front().expect("present");
        q.completion_counter += 1;
        out.push(RxAction::Completed { qpn: q.qpn, wr_id: done.wr_id, opcode: Opcode::Read, len: done.len });
    }
    Ok(())
}

fn on_ack(
    ctx: &mut Ctx<'_>,
    q: &mut QueuePair,
    ack_psn: u32,
    syndrome: AckSyndrome,
    ecn_echo: bool,
    out: &mut Vec<RxAction>,
) {
    if syndrome == AckSyndrome::RemoteAccessError {
        ctx.stats.access_faults += 1;
        fail_qp(q, out);
        return;
    }
    let mut bytes = 0;
    let mut newest_sent = None;
    let mut popped = 0;
    while q.outstanding.front().is_some_and(|s| s.psn < ack_psn) {
        let s = q.outstanding.pop_front().expect("present");
        bytes += s.len;
        newest_sent = Some(s.sent_at);
        popped += 1;
    }
    if let Some(c) = q.resend_cursor {
        q.resend_cursor = if c >= popped {
            Some(c - popped)
        } else if q.outstanding.is_empty() {
            None
        } else {
            Some(0)
        };
        if q.resend_cursor.is_some_and(|c| c >= q.outstanding.len()) {
            q.resend_cursor = None;
        }
    }
    if bytes > 0 {
        q.in_flight_bytes -= bytes;
        q.last_progress = ctx.now;
        let rtt_ns = ctx.now.since(newest_sent.expect("set with bytes"));
        q.cc.signal(ctx.now, &CcSignal::Ack { bytes, rtt_ns });
    }
    while q.awaiting.front().is_some_and(|w| w.last_psn < ack_psn) {
        let w = q.awaiting.pop_front().expect("present");
        q.completion_counter += 1;
        out.push(RxAction::Completed { qpn: q.qpn, wr_id: w.wr_id, opcode: Opcode::Write, len: w.len });
    }
    if ecn_echo {
        q.cc.signal(ctx.now, &CcSignal::EcnEcho { at: ctx.now });
    }
    if syndrome == AckSyndrome::Nak {
        rewind(q, ack_psn);
    }
}

#[cfg(test)]
mod tests;
