use alloc::collections::VecDeque;

use crate::model::{SerializationClock, SimTime};

/// Switch egress queue toward one node. Store and forward: a packet departs
/// once it has fully arrived and every earlier packet has left.
#[derive(Debug)]
pub(crate) struct Port {
    /// Departure finish time and size of every packet not yet fully sent.
    queue: VecDeque<(SimTime, u32)>,
    queued_bytes: u64,
    free_at: SimTime,
    clock: SerializationClock,
    /// Bytes on the wire toward the switch that will land in this queue.
    pub(crate) reserved: u64,
    pub(crate) max_occupancy: u64,
}

impl Port {
    pub(crate) fn new(gbps: u32) -> Self {
        Port {
            queue: VecDeque::new(),
            queued_bytes: 0,
            free_at: SimTime::ZERO,
            clock: SerializationClock::new(gbps),
            reserved: 0,
            max_occupancy: 0,
        }
    }

    /// Bytes queued or in service at `now`.
    pub(crate) fn occupancy(&mut self, now: SimTime) -> u64 {
        while let Some(&(finish, bytes)) = self.queue.front() {
            if finish > now {
                break;
            }
            self.queue.pop_front();
            self.queued_bytes -= bytes as u64;
        }
        self.queued_bytes
    }

    /// When the packet at the head of the queue finishes, if any.
    pub(crate) fn next_departure(&self) -> Option<SimTime> {
        self.queue.front().map(|&(t, _)| t)
    }

    /// Queues a fully arrived packet; returns when its last bit leaves.
    pub(crate) fn enqueue(&mut self, now: SimTime, bytes: u32) -> SimTime {
        let start = self.free_at.max(now);
        let finish = start + self.clock.advance(bytes as u64);
        self.free_at = finish;
        self.queue.push_back((finish, bytes));
        self.queued_bytes += bytes as u64;
        self.max_occupancy = self.max_occupancy.max(self.queued_bytes);
        finish
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idle_port_serializes_immediately() {
        let mut p = Port::new(200);
        assert_eq!(p.enqueue(SimTime::from_ns(100), 4178), SimTime::from_ns(100 + 167));
        assert_eq!(p.occupancy(SimTime::from_ns(200)), 4178);
        assert_eq!(p.occupancy(SimTime::from_ns(267)), 0);
    }

    #[test]
    fn back_to_back_packets_queue() {
        let mut p = Port::new(100);
        let a = p.enqueue(SimTime::ZERO, 1000);
        let b = p.enqueue(SimTime::ZERO, 1000);
        assert_eq!((a.as_ns(), b.as_ns()), (80, 160));
        assert_eq!(p.occupancy(SimTime::from_ns(79)), 2000);
        assert_eq!(p.occupancy(SimTime::from_ns(80)), 1000);
        assert_eq!(p.next_departure(), Some(SimTime::from_ns(160)));
        assert_eq!(p.max_occupancy, 2000);
    }
}
