//! Programmable congestion control.
//!
//! Every algorithm sits behind [`CongestionControl`]: it consumes
//! [`CcSignal`]s and exposes a [`CcDecision`] that gates the owning queue pair.
//! [`DualSlot`] holds an active instance plus an optional preloaded shadow that
//! can take over without a gap in decisions.

mod dcqcn;
mod slot;
mod window;

use alloc::boxed::Box;
use core::fmt;

pub use dcqcn::{dcqcn_update, Dcqcn, DcqcnParams, DcqcnState};
pub use slot::{DualSlot, DEFAULT_RECONFIG_DELAY_NS, ShadowStatus, SwapError, SwapOutcome, SwapPolicy};
pub use window::{window_update, WindowCc, WindowState};

use crate::model::SimTime;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CcSignal {
    /// `bytes` of payload newly acknowledged; `rtt_ns` measured on the newest one.
    Ack { bytes: u64, rtt_ns: u64 },
    EcnEcho { at: SimTime },
    Cnp,
    Timer { at: SimTime },
    Sent { bytes: u64 },
}

/// What the owning queue pair may do right now.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CcDecision {
    /// Payload bytes that may still be put in flight.
    pub allowance_bytes: u64,
    pub pacing_rate_bps: Option<u64>,
}

impl CcDecision {
    pub const UNLIMITED: CcDecision = CcDecision { allowance_bytes: u64::MAX, pacing_rate_bps: None };
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CcKind {
    Window,
    Dcqcn,
    /// Out-of-tree algorithm plugged in through [`DualSlot::load_shadow_instance`].
    Custom(&'static str),
}

impl fmt::Display for CcKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CcKind::Window => f.write_str("window"),
            CcKind::Dcqcn => f.write_str("dcqcn"),
            CcKind::Custom(name) => f.write_str(name),
        }
    }
}

/// A congestion-control algorithm instance. Implementations must be
/// deterministic: identical signal traces produce identical state.
pub trait CongestionControl: Send {
    fn kind(&self) -> CcKind;
    fn on_signal(&mut self, now: SimTime, signal: &CcSignal);
    fn decision(&self) -> CcDecision;
}

/// Parameters needed to instantiate any built-in algorithm with fresh state.
#[derive(Clone, Debug, PartialEq)]
pub struct CcConfig {
    pub window_bytes: u64,
    pub dcqcn: DcqcnParams,
}

impl CcConfig {
    pub fn for_line_rate(line_rate_bps: u64, window_bytes: u64) -> Self {
        CcConfig { window_bytes, dcqcn: DcqcnParams::for_line_rate(line_rate_bps) }
    }

    pub fn build(&self, kind: CcKind) -> Option<Box<dyn CongestionControl>> {
        match kind {
            CcKind::Window => Some(Box::new(WindowCc::new(self.window_bytes))),
            CcKind::Dcqcn => Some(Box::new(Dcqcn::new(self.dcqcn.clone()))),
            CcKind::Custom(_) => None,
        }
    }
}
