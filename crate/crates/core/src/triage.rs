//! Networking prefilter: decides whether an RX packet goes to an offloaded
//! transport stack or to the host slow path, and steers fast-path payloads to
//! stream compute units.

use alloc::collections::BTreeMap;

use thiserror::Error;

use crate::model::{FlowKey, HeaderKind, Packet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Route {
    FastRoce,
    FastTcp,
    SlowPath,
}

/// Route for one packet. The slow path is the only component that is always
/// present, so everything a disabled or absent stack would have handled lands
/// there.
pub fn classify(pkt: &Packet, roce_enabled: bool, tcp_enabled: bool) -> Route {
    classify_kind(pkt.kind(), roce_enabled, tcp_enabled)
}

pub fn classify_kind(kind: HeaderKind, roce_enabled: bool, tcp_enabled: bool) -> Route {
    match kind {
        HeaderKind::RoceBth if roce_enabled => Route::FastRoce,
        HeaderKind::TcpSeg if tcp_enabled => Route::FastTcp,
        _ => Route::SlowPath,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Steering {
    Scu(u8),
    /// Delivered to the node's default host sink.
    NoMapping,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SteeringError {
    #[error("SCU index {index} out of range (node has {count} SCUs)")]
    ScuOutOfRange { index: u8, count: u8 },
}

/// Flow to SCU mapping. Mutated only between event-loop steps.
#[derive(Clone, Debug, Default)]
pub struct SteeringTable {
    scu_count: u8,
    entries: BTreeMap<FlowKey, u8>,
}

impl SteeringTable {
    pub fn new(scu_count: u8) -> Self {
        SteeringTable { scu_count, entries: BTreeMap::new() }
    }

    pub fn scu_count(&self) -> u8 {
        self.scu_count
    }

    /// Maps `flow` to `scu`, replacing any previous mapping of that flow.
    pub fn insert(&mut self, flow: FlowKey, scu: u8) -> Result<(), SteeringError> {
        if scu >= self.scu_count {
            return Err(SteeringError::ScuOutOfRange { index: scu, count: self.scu_count });
        }
        self.entries.insert(flow, scu);
        Ok(())
    }

    pub fn remove(&mut self, flow: &FlowKey) -> Option<u8> {
        self.entries.remove(flow)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn steer(flow: &FlowKey, table: &SteeringTable) -> Steering {
    match table.entries.get(flow) {
        Some(&scu) => Steering::Scu(scu),
        None => Steering::NoMapping,
    }
}
