//! Deterministic model of a SmartNIC datapath.
//!
//! The crate is `no_std` (it needs `alloc`) and contains every algorithmic
//! piece of the simulator: the prefilter that triages RX traffic, a RoCEv2-style
//! reliable transport with per-QP completion counters and an LRU TLB, the
//! programmable congestion-control slot with active/shadow hot swap, the stream
//! compute unit (SCU) framework with round-robin arbitration, the metadata-tagged
//! host ring used by the slow path, and a discrete-event harness tying them
//! together into multi-node scenarios.
//!
//! File formats, CSV output and the command-line runner live in the `scenic-sim`
//! crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod cc;
pub mod harness;
pub mod hostpath;
pub mod model;
pub mod rng;
pub mod scu;
pub mod transport;
pub mod triage;

pub use model::{
    cycles_within_budget, per_packet_budget_ns, serialization_delay_ns, FlowKey, Header,
    HeaderKind, LinkSpec, NodeId, Packet, PacketId, Payload, SimTime,
};
