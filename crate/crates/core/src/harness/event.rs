use alloc::collections::BinaryHeap;
use core::cmp::Ordering;

use crate::model::{Packet, SimTime};

#[derive(Clone, Debug)]
pub(crate) enum Event {
    /// The NIC of `node` finished serializing a packet.
    NicTxDone { node: usize },
    /// Pacing, TLB stall or backpressure hold expired.
    NicWake { node: usize },
    SwitchArrive { pkt: Packet },
    NodeArrive { pkt: Packet },
    FlowStart { flow: usize },
    SourceTick { flow: usize },
    CcTick,
    CcLoad,
    CcSwap,
    AgentTimer,
    AgentApply { step: usize },
    ScuWake { node: usize, scu: u8 },
    IrqCheck { node: usize },
    DriverPoll { node: usize },
    CollectiveStart,
    /// End of input for every SCU.
    Finish,
}

impl Event {
    /// Stable discriminant folded into the trace hash.
    pub(crate) fn tag(&self) -> u8 {
        match self {
            Event::NicTxDone { .. } => 1,
            Event::NicWake { .. } => 2,
            Event::SwitchArrive { .. } => 3,
            Event::NodeArrive { .. } => 4,
            Event::FlowStart { .. } => 5,
            Event::SourceTick { .. } => 6,
            Event::CcTick => 7,
            Event::CcLoad => 8,
            Event::CcSwap => 9,
            Event::AgentTimer => 10,
            Event::AgentApply { .. } => 11,
            Event::ScuWake { .. } => 12,
            Event::IrqCheck { .. } => 13,
            Event::DriverPoll { .. } => 14,
            Event::CollectiveStart => 15,
            Event::Finish => 16,
        }
    }
}

#[derive(Debug)]
struct Entry {
    at: SimTime,
    seq: u64,
    event: Event,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    // Reversed: the heap pops the earliest (at, seq) first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

/// Pending events in `(at, seq)` order; equal times run in insertion order.
#[derive(Debug, Default)]
pub(crate) struct EventQueue {
    heap: BinaryHeap<Entry>,
    seq: u64,
}

impl EventQueue {
    pub(crate) fn push(&mut self, at: SimTime, event: Event) {
        self.heap.push(Entry { at, seq: self.seq, event });
        self.seq += 1;
    }

    pub(crate) fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|e| e.at)
    }

    pub(crate) fn pop(&mut self) -> Option<(SimTime, Event)> {
        self.heap.pop().map(|e| (e.at, e.event))
    }

    pub(crate) fn iter(&self) -> impl Iterator<Item = &Event> {
        self.heap.iter().map(|e| &e.event)
    }
}
