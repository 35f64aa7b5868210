use alloc::collections::VecDeque;

use crate::cc::{CcDecision, DualSlot};
use crate::model::{NodeId, SimTime};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpState {
    Init,
    Ready,
    Error,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Opcode {
    Write,
    Read,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WorkRequest {
    pub wr_id: u64,
    pub opcode: Opcode,
    pub local_addr: u64,
    pub remote_addr: u64,
    pub len_bytes: u64,
}

/// A posted request that has not been fully put on the wire yet.
#[derive(Clone, Debug)]
pub(crate) struct SendWr {
    pub wr: WorkRequest,
    pub sent: u64,
    /// Bytes the data source has produced so far; equals the length unless
    /// the request is fed incrementally by an SCU.
    pub available: u64,
}

/// A transmitted, not yet acknowledged WRITE segment.
#[derive(Clone, Copy, Debug)]
pub(crate) struct OutSeg {
    pub psn: u32,
    pub local_addr: u64,
    pub remote_addr: u64,
    pub len: u64,
    pub last: bool,
    pub sent_at: SimTime,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct AwaitingWrite {
    pub wr_id: u64,
    pub last_psn: u32,
    pub len: u64,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct PendingRead {
    pub wr_id: u64,
    pub local_addr: u64,
    pub remote_addr: u64,
    pub len: u64,
    pub first_psn: u32,
    pub segments: u32,
    pub received: u32,
    /// Request (re)transmission owed after a loss.
    pub needs_request: bool,
}

/// Responder-side READ job: data segments still to stream back.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ResponseJob {
    pub first_psn: u32,
    pub addr: u64,
    pub len: u64,
    pub sent: u64,
}

/// One end of a reliable connection.
#[derive(Debug)]
pub struct QueuePair {
    pub(crate) qpn: u32,
    pub(crate) peer_node: NodeId,
    pub(crate) peer_qpn: Option<u32>,
    pub(crate) scu_index: u8,
    pub(crate) state: QpState,
    pub(crate) send_psn: u32,
    pub(crate) expect_psn: u32,
    pub(crate) send_queue: VecDeque<SendWr>,
    pub(crate) outstanding: VecDeque<OutSeg>,
    pub(crate) resend_cursor: Option<usize>,
    pub(crate) awaiting: VecDeque<AwaitingWrite>,
    pub(crate) reads: VecDeque<PendingRead>,
    pub(crate) responses: VecDeque<ResponseJob>,
    pub(crate) completion_counter: u64,
    pub(crate) polled_counter: u64,
    pub(crate) error_seen: bool,
    pub(crate) cc: DualSlot,
    pub(crate) in_flight_bytes: u64,
    pub(crate) next_send_at: SimTime,
    pub(crate) pace_carry_ns: f64,
    pub(crate) acks_pending: u32,
    pub(crate) echo_pending: bool,
    pub(crate) nak_sent: bool,
    pub(crate) reread_sent: bool,
    pub(crate) last_cnp_sent: Option<SimTime>,
    pub(crate) last_progress: SimTime,
    pub(crate) bytes_received: u64,
    pub(crate) bytes_sent: u64,
}

impl QueuePair {
    pub(crate) fn new(qpn: u32, peer_node: NodeId, scu_index: u8, cc: DualSlot) -> Self {
        QueuePair {
            qpn,
            peer_node,
            peer_qpn: None,
            scu_index,
            state: QpState::Ready,
            send_psn: 0,
            expect_psn: 0,
            send_queue: VecDeque::new(),
            outstanding: VecDeque::new(),
            resend_cursor: None,
            awaiting: VecDeque::new(),
            reads: VecDeque::new(),
            responses: VecDeque::new(),
            completion_counter: 0,
            polled_counter: 0,
            error_seen: false,
            cc,
            in_flight_bytes: 0,
            next_send_at: SimTime::ZERO,
            pace_carry_ns: 0.0,
            acks_pending: 0,
            echo_pending: false,
            nak_sent: false,
            reread_sent: false,
            last_cnp_sent: None,
            last_progress: SimTime::ZERO,
            bytes_received: 0,
            bytes_sent: 0,
        }
    }

    pub fn qpn(&self) -> u32 {
        self.qpn
    }

    pub fn peer_node(&self) -> NodeId {
        self.peer_node
    }

    pub fn peer_qpn(&self) -> Option<u32> {
        self.peer_qpn
    }

    pub fn scu_index(&self) -> u8 {
        self.scu_index
    }

    pub fn state(&self) -> QpState {
        self.state
    }

    pub fn send_psn(&self) -> u32 {
        self.send_psn
    }

    pub fn expect_psn(&self) -> u32 {
        self.expect_psn
    }

    pub fn completion_counter(&self) -> u64 {
        self.completion_counter
    }

    /// Unacknowledged WRITE payload bytes.
    pub fn in_flight_bytes(&self) -> u64 {
        self.in_flight_bytes
    }

    pub fn cc(&self) -> &DualSlot {
        &self.cc
    }

    pub fn cc_mut(&mut self) -> &mut DualSlot {
        &mut self.cc
    }

    pub fn cc_decision(&self) -> CcDecision {
        self.cc.decision()
    }

    /// Payload bytes this end has accepted in order (WRITE data as
    /// responder, READ data as requester).
    pub fn bytes_received(&self) -> u64 {
        self.bytes_received
    }

    /// Fresh payload bytes put on the wire, retransmissions excluded.
    pub fn bytes_sent(&self) -> u64 {
        self.bytes_sent
    }

    pub fn outstanding_segments(&self) -> usize {
        self.outstanding.len()
    }

    pub fn pending_work(&self) -> usize {
        self.send_queue.len() + self.awaiting.len() + self.reads.len()
    }

    pub fn pending_responses(&self) -> usize {
        self.responses.len()
    }

    /// Lowest PSN this end still needs acknowledged or answered.
    pub(crate) fn lowest_unacked(&self) -> Option<u32> {
        let w = self.outstanding.front().map(|s| s.psn);
        let r = self.reads.front().map(|r| r.first_psn + r.received);
        match (w, r) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }
}
