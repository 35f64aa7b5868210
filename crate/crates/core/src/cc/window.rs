use super::{CcDecision, CcKind, CcSignal, CongestionControl};
use crate::model::SimTime;

/// ACK-clocked fixed window: sends consume allowance, ACKs return it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowState {
    pub window_bytes: u64,
    pub in_flight_bytes: u64,
}

impl WindowState {
    pub fn new(window_bytes: u64) -> Self {
        WindowState { window_bytes, in_flight_bytes: 0 }
    }

    fn decision(&self) -> CcDecision {
        CcDecision {
            allowance_bytes: self.window_bytes.saturating_sub(self.in_flight_bytes),
            pacing_rate_bps: None,
        }
    }
}

/// Congestion marks are ignored; only `Sent` and `Ack` move the window.
pub fn window_update(mut state: WindowState, signal: &CcSignal) -> (WindowState, CcDecision) {
    match *signal {
        CcSignal::Sent { bytes } => state.in_flight_bytes += bytes,
        // A freshly swapped-in window never saw the sends being acknowledged.
        CcSignal::Ack { bytes, .. } => state.in_flight_bytes = state.in_flight_bytes.saturating_sub(bytes),
        CcSignal::EcnEcho { .. } | CcSignal::Cnp | CcSignal::Timer { .. } => {}
    }
    (state, state.decision())
}

#[derive(Clone, Debug)]
pub struct WindowCc {
    state: WindowState,
}

impl WindowCc {
    pub fn new(window_bytes: u64) -> Self {
        WindowCc { state: WindowState::new(window_bytes) }
    }

    pub fn state(&self) -> WindowState {
        self.state
    }
}

impl CongestionControl for WindowCc {
    fn kind(&self) -> CcKind {
        CcKind::Window
    }

    fn on_signal(&mut self, _now: SimTime, signal: &CcSignal) {
        self.state = window_update(self.state, signal).0;
    }

    fn decision(&self) -> CcDecision {
        self.state.decision()
    }
}
