use crate::model::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IrqConfig {
    pub coalesce_count: u32,
    pub timeout_ns: u64,
}

impl Default for IrqConfig {
    fn default() -> Self {
        IrqConfig { coalesce_count: 32, timeout_ns: 50_000 }
    }
}

impl IrqConfig {
    pub fn is_valid(&self) -> bool {
        self.coalesce_count >= 1 && self.timeout_ns > 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IrqDecision {
    Fire,
    Wait,
}

pub fn irq_decision(pending: u64, first_pending_at: SimTime, now: SimTime, cfg: &IrqConfig) -> IrqDecision {
    if pending >= cfg.coalesce_count as u64 || (pending >= 1 && now.since(first_pending_at) >= cfg.timeout_ns) {
        IrqDecision::Fire
    } else {
        IrqDecision::Wait
    }
}

/// What the caller has to schedule after informing the controller.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IrqStep {
    /// Raise the interrupt now.
    Fire,
    /// Re-check at this time unless something fires earlier.
    CheckAt(SimTime),
    Nothing,
}

/// Coalescing state for one ring. At most one interrupt is in flight: while
/// it is, the driver is polling and newly arriving packets are picked up by
/// that poll loop instead of raising another interrupt.
#[derive(Clone, Debug)]
pub struct IrqController {
    cfg: IrqConfig,
    pending: u64,
    first_pending_at: Option<SimTime>,
    in_flight: bool,
    fired: u64,
    fired_by_timeout: u64,
}

impl IrqController {
    pub fn new(cfg: IrqConfig) -> Self {
        assert!(cfg.is_valid(), "coalesce count and timeout must be positive");
        IrqController { cfg, pending: 0, first_pending_at: None, in_flight: false, fired: 0, fired_by_timeout: 0 }
    }

    pub fn config(&self) -> IrqConfig {
        self.cfg
    }

    pub fn pending(&self) -> u64 {
        self.pending
    }

    pub fn in_flight(&self) -> bool {
        self.in_flight
    }

    pub fn interrupts(&self) -> u64 {
        self.fired
    }

    pub fn timeout_interrupts(&self) -> u64 {
        self.fired_by_timeout
    }

    fn evaluate(&mut self, now: SimTime) -> IrqStep {
        if self.in_flight || self.pending == 0 {
            return IrqStep::Nothing;
        }
        let first = self.first_pending_at.expect("pending implies a first arrival");
        match irq_decision(self.pending, first, now, &self.cfg) {
            IrqDecision::Fire => {
                self.in_flight = true;
                self.fired += 1;
                if self.pending < self.cfg.coalesce_count as u64 {
                    self.fired_by_timeout += 1;
                }
                IrqStep::Fire
            }
            IrqDecision::Wait => IrqStep::CheckAt(first + self.cfg.timeout_ns),
        }
    }

    pub fn on_enqueue(&mut self, now: SimTime) -> IrqStep {
        self.pending += 1;
        if self.first_pending_at.is_none() {
            self.first_pending_at = Some(now);
        }
        self.evaluate(now)
    }

    /// Timeout check scheduled by an earlier [`IrqStep::CheckAt`].
    pub fn on_timer(&mut self, now: SimTime) -> IrqStep {
        match self.evaluate(now) {
            IrqStep::CheckAt(_) => IrqStep::Nothing,
            s => s,
        }
    }

    /// The driver consumed `n` entries. `ring_empty` ends the poll loop and
    /// re-enables the interrupt; the caller learns whether the remaining
    /// backlog already warrants another one.
    pub fn on_polled(&mut self, n: u64, now: SimTime, ring_empty: bool, oldest_remaining: Option<SimTime>) -> IrqStep {
        self.pending -= n;
        self.first_pending_at = if self.pending == 0 { None } else { oldest_remaining.or(Some(now)) };
        if ring_empty {
            self.in_flight = false;
            return self.evaluate(now);
        }
        IrqStep::Nothing
    }
}
