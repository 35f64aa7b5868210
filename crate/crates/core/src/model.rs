//! Time, packet and link primitives shared by every other module, plus the
//! link-budget arithmetic.

use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;
use core::ops::{Add, AddAssign};

use thiserror::Error;

/// Simulated time in integer nanoseconds since the start of a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    /// Used as "never" by holds and timers that cannot fire.
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_ns(ns: u64) -> Self {
        SimTime(ns)
    }

    pub const fn from_us(us: u64) -> Self {
        SimTime(us * 1_000)
    }

    pub const fn from_ms(ms: u64) -> Self {
        SimTime(ms * 1_000_000)
    }

    pub const fn as_ns(self) -> u64 {
        self.0
    }

    /// Nanoseconds elapsed since `earlier`, zero if `earlier` is in the future.
    pub fn since(self, earlier: SimTime) -> u64 {
        self.0.saturating_sub(earlier.0)
    }

    pub fn saturating_add_ns(self, ns: u64) -> SimTime {
        SimTime(self.0.saturating_add(ns))
    }
}

impl Add<u64> for SimTime {
    type Output = SimTime;

    fn add(self, ns: u64) -> SimTime {
        SimTime(self.0 + ns)
    }
}

impl AddAssign<u64> for SimTime {
    fn add_assign(&mut self, ns: u64) {
        self.0 += ns;
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ns", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "node{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PacketId(pub u64);

/// Hands out packet ids that are unique within one run.
#[derive(Debug, Default)]
pub struct PacketIdGen {
    next: u64,
}

impl PacketIdGen {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn next_id(&mut self) -> PacketId {
        let id = PacketId(self.next);
        self.next += 1;
        id
    }

    pub fn issued(&self) -> u64 {
        self.next
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum HeaderKind {
    RoceBth,
    TcpSeg,
    Other,
}

/// Why a packet is not fast-path traffic. ARP, ICMP and L2 management frames
/// all end up here.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OtherReason {
    Arp,
    Icmp,
    L2Mgmt,
    /// A fast-path header that failed to parse.
    Malformed,
    Raw,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FlowKey {
    Roce { qpn: u32 },
    Tcp { session: u32 },
    Other { reason: OtherReason },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AckSyndrome {
    Ack,
    /// Sequence error: the responder expects `psn` next (go-back-N).
    Nak,
    /// The target address is not registered at the responder.
    RemoteAccessError,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RoceOpcode {
    WriteData { remote_addr: u64, last: bool },
    ReadRequest { remote_addr: u64, len: u64 },
    ReadResponse { last: bool },
    /// Cumulative: every PSN strictly below the BTH psn is acknowledged.
    Ack { syndrome: AckSyndrome, ecn_echo: bool },
    Cnp,
}

/// Modeled base transport header. Only the fields the engine reads are kept.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Bth {
    pub opcode: RoceOpcode,
    pub dest_qpn: u32,
    pub psn: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Header {
    Roce(Bth),
    Tcp { session: u32, seq: u64 },
    Other(OtherReason),
}

impl Header {
    pub fn kind(&self) -> HeaderKind {
        match self {
            Header::Roce(_) => HeaderKind::RoceBth,
            Header::Tcp { .. } => HeaderKind::TcpSeg,
            Header::Other(_) => HeaderKind::Other,
        }
    }
}

/// Packet payload. Bulk traffic whose content nobody inspects is carried as
/// `Virtual`, so long runs do not copy gigabytes of zeros around.
#[derive(Clone, Debug)]
pub enum Payload {
    Virtual(u64),
    Bytes { buf: Arc<[u8]>, start: usize, len: usize },
}

impl Payload {
    pub fn empty() -> Self {
        Payload::Virtual(0)
    }

    pub fn from_vec(bytes: Vec<u8>) -> Self {
        let len = bytes.len();
        Payload::Bytes { buf: Arc::from(bytes), start: 0, len }
    }

    pub fn len(&self) -> u64 {
        match self {
            Payload::Virtual(len) => *len,
            Payload::Bytes { len, .. } => *len as u64,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Concrete bytes, if this payload carries any.
    pub fn bytes(&self) -> Option<&[u8]> {
        match self {
            Payload::Virtual(_) => None,
            Payload::Bytes { buf, start, len } => Some(&buf[*start..*start + *len]),
        }
    }

    /// Bytes of the payload; virtual payloads read as zeros.
    pub fn to_vec(&self) -> Vec<u8> {
        match self.bytes() {
            Some(b) => b.to_vec(),
            None => alloc::vec![0; self.len() as usize],
        }
    }

    pub fn slice(&self, offset: u64, len: u64) -> Payload {
        assert!(offset + len <= self.len(), "payload slice out of range");
        match self {
            Payload::Virtual(_) => Payload::Virtual(len),
            Payload::Bytes { buf, start, .. } => Payload::Bytes {
                buf: buf.clone(),
                start: start + offset as usize,
                len: len as usize,
            },
        }
    }
}

impl PartialEq for Payload {
    fn eq(&self, other: &Self) -> bool {
        match (self.bytes(), other.bytes()) {
            (None, None) => self.len() == other.len(),
            _ => self.len() == other.len() && self.to_vec() == other.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Packet {
    pub id: PacketId,
    pub flow: FlowKey,
    pub header: Header,
    /// Bytes on the wire, headers included.
    pub wire_bytes: u32,
    pub payload: Payload,
    /// Only switch queues set this.
    pub ecn_marked: bool,
    pub src_node: NodeId,
    pub dst_node: NodeId,
    pub src_subnet: u16,
}

impl Packet {
    pub fn kind(&self) -> HeaderKind {
        self.header.kind()
    }

    pub fn psn(&self) -> Option<u32> {
        match self.header {
            Header::Roce(bth) => Some(bth.psn),
            _ => None,
        }
    }

    pub fn bth(&self) -> Option<&Bth> {
        match &self.header {
            Header::Roce(bth) => Some(bth),
            _ => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("link rate must be positive, got {0} Gbit/s")]
    NonPositiveRate(f64),
    #[error("ECN threshold {threshold} exceeds queue capacity {capacity}")]
    EcnAboveCapacity { threshold: u64, capacity: u64 },
    #[error("MTU of {0} bytes cannot carry any payload")]
    MtuTooSmall(u32),
}

/// Physical properties of one link and the switch queue feeding it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LinkSpec {
    pub gbps: u32,
    pub prop_delay_ns: u64,
    /// Largest wire size, headers included.
    pub mtu_bytes: u32,
    pub queue_cap_bytes: u64,
    pub ecn_threshold_bytes: u64,
    /// Lossless links backpressure the sender instead of dropping.
    pub lossless: bool,
}

impl Default for LinkSpec {
    fn default() -> Self {
        LinkSpec {
            gbps: 200,
            prop_delay_ns: 500,
            mtu_bytes: 4178,
            queue_cap_bytes: 2 * 1024 * 1024,
            ecn_threshold_bytes: 200 * 1024,
            lossless: true,
        }
    }
}

impl LinkSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.gbps == 0 {
            return Err(ModelError::NonPositiveRate(0.0));
        }
        if self.ecn_threshold_bytes > self.queue_cap_bytes {
            return Err(ModelError::EcnAboveCapacity {
                threshold: self.ecn_threshold_bytes,
                capacity: self.queue_cap_bytes,
            });
        }
        Ok(())
    }

    pub fn bits_per_second(&self) -> u64 {
        self.gbps as u64 * 1_000_000_000
    }
}

/// Time budget for one packet at line rate: `wire_bytes * 8 / gbps` ns.
///
/// Computed in `f64`; a Gbit/s rate is exactly one bit per nanosecond per unit,
/// so no unit scaling is involved.
pub fn per_packet_budget_ns(wire_bytes: u64, gbps: f64) -> Result<f64, ModelError> {
    if gbps.is_nan() || gbps <= 0.0 {
        return Err(ModelError::NonPositiveRate(gbps));
    }
    Ok(wire_bytes as f64 * 8.0 / gbps)
}

/// Whole clock cycles that fit in `budget_ns` at `clock_mhz`.
pub fn cycles_within_budget(budget_ns: f64, clock_mhz: f64) -> u64 {
    debug_assert!(budget_ns >= 0.0 && clock_mhz > 0.0);
    // Truncation is floor for non-negative values.
    (budget_ns * clock_mhz / 1000.0) as u64
}

pub fn serialization_delay_ns(wire_bytes: u64, link: &LinkSpec) -> f64 {
    wire_bytes as f64 * 8.0 / link.gbps as f64
}

/// Integer-nanosecond serializer for one link.
///
/// Each call returns whole nanoseconds and carries the fractional bit-time
/// forward, so the sum over any sequence equals `floor(total_bits / gbps)`.
#[derive(Clone, Debug)]
pub struct SerializationClock {
    gbps: u64,
    remainder_bits: u64,
}

impl SerializationClock {
    pub fn new(gbps: u32) -> Self {
        assert!(gbps > 0);
        SerializationClock { gbps: gbps as u64, remainder_bits: 0 }
    }

    pub fn advance(&mut self, wire_bytes: u64) -> u64 {
        let bits = wire_bytes * 8 + self.remainder_bits;
        self.remainder_bits = bits % self.gbps;
        bits / self.gbps
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn budget_examples() {
        let b = per_packet_budget_ns(4178, 200.0).unwrap();
        assert!((b - 167.12).abs() < 1e-9);
        assert_eq!(per_packet_budget_ns(0, 200.0).unwrap(), 0.0);
        assert!((per_packet_budget_ns(1538, 100.0).unwrap() - 123.04).abs() < 1e-9);
        assert!(per_packet_budget_ns(10, 0.0).is_err());
        assert!(per_packet_budget_ns(10, -3.0).is_err());
    }

    #[test]
    fn cycle_examples() {
        assert_eq!(cycles_within_budget(167.12, 391.0), 65);
        assert_eq!(cycles_within_budget(1000.0, 1000.0), 1000);
        assert_eq!(cycles_within_budget(167.12, 100.0), 16);
    }

    #[test]
    fn serialization_examples() {
        let link = LinkSpec::default();
        assert!((serialization_delay_ns(4178, &link) - 167.12).abs() < 1e-9);
        assert_eq!(serialization_delay_ns(0, &link), 0.0);
        let l100 = LinkSpec { gbps: 100, ..link };
        assert!((serialization_delay_ns(131072, &l100) - 10485.76).abs() < 1e-9);
    }

    #[test]
    fn clock_carries_remainder() {
        let mut clk = SerializationClock::new(200);
        let total: u64 = (0..1000).map(|_| clk.advance(4178)).sum();
        assert_eq!(total, 4178 * 8 * 1000 / 200);
    }

    #[test]
    fn link_validation() {
        let bad = LinkSpec { ecn_threshold_bytes: 10, queue_cap_bytes: 5, ..LinkSpec::default() };
        assert!(bad.validate().is_err());
        assert!(LinkSpec { gbps: 0, ..LinkSpec::default() }.validate().is_err());
        assert!(LinkSpec::default().validate().is_ok());
    }

    #[test]
    fn ids_are_unique() {
        let mut gen = PacketIdGen::new();
        let ids: std::collections::BTreeSet<_> = (0..100).map(|_| gen.next_id()).collect();
        assert_eq!(ids.len(), 100);
    }

    #[test]
    fn psn_only_on_roce() {
        let bth = Bth { opcode: RoceOpcode::Cnp, dest_qpn: 1, psn: 9 };
        assert_eq!(Header::Roce(bth).kind(), HeaderKind::RoceBth);
        let pkt = Packet {
            id: PacketId(0),
            flow: FlowKey::Tcp { session: 1 },
            header: Header::Tcp { session: 1, seq: 0 },
            wire_bytes: 64,
            payload: Payload::empty(),
            ecn_marked: false,
            src_node: NodeId(0),
            dst_node: NodeId(1),
            src_subnet: 0,
        };
        assert_eq!(pkt.psn(), None);
    }

    proptest! {
        #[test]
        fn budget_linear_and_inverse(bytes in 0u64..100_000, k in 1u64..8, gbps in 1.0f64..800.0) {
            let one = per_packet_budget_ns(bytes, gbps).unwrap();
            let scaled = per_packet_budget_ns(bytes * k, gbps).unwrap();
            prop_assert!((scaled - one * k as f64).abs() <= 1e-9 * scaled.max(1.0));
            let faster = per_packet_budget_ns(bytes, gbps * k as f64).unwrap();
            prop_assert!((faster * k as f64 - one).abs() <= 1e-9 * one.max(1.0));
        }

        #[test]
        fn cycles_floor_property(budget in 0.0f64..1e6, mhz in 1.0f64..2000.0) {
            let exact = budget * mhz / 1000.0;
            let c = cycles_within_budget(budget, mhz) as f64;
            prop_assert!(c <= exact);
            prop_assert!(exact - c < 1.0);
        }

        #[test]
        fn clock_never_drifts(sizes in proptest::collection::vec(0u64..9000, 1..200), gbps in 1u32..400) {
            let mut clk = SerializationClock::new(gbps);
            let sum: u64 = sizes.iter().map(|&s| clk.advance(s)).sum();
            let bits: u64 = sizes.iter().sum::<u64>() * 8;
            prop_assert_eq!(sum, bits / gbps as u64);
        }
    }
}
