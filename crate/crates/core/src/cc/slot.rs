//! Active/shadow congestion-control slot.
//!
//! Loading an algorithm into the shadow position takes `reconfig_delay_ns`.
//! Once loaded the shadow sees every signal the active instance sees, so at
//! swap time it takes over with state already warmed by the live traffic.

use alloc::boxed::Box;

use thiserror::Error;

use super::{CcConfig, CcDecision, CcKind, CcSignal, CongestionControl};
use crate::model::SimTime;

pub const DEFAULT_RECONFIG_DELAY_NS: u64 = 8_000_000;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum SwapError {
    #[error("no shadow algorithm loaded")]
    NoShadow,
    #[error("shadow still loading until {ready_at}")]
    NotReady { ready_at: SimTime },
    #[error("no built-in algorithm of kind {0}")]
    UnknownKind(CcKind),
}

/// What to do with a swap requested before the shadow finished loading.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SwapPolicy {
    #[default]
    Defer,
    Reject,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SwapOutcome {
    Swapped { now_active: CcKind },
    /// Retry at the given time.
    DeferredUntil(SimTime),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShadowStatus {
    Empty,
    Loading { kind: CcKind, ready_at: SimTime },
    Ready { kind: CcKind },
}

pub struct DualSlot {
    config: CcConfig,
    active: Box<dyn CongestionControl>,
    shadow: Option<Box<dyn CongestionControl>>,
    shadow_ready_at: SimTime,
    reconfig_delay_ns: u64,
    swaps: u32,
}

impl core::fmt::Debug for DualSlot {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("DualSlot")
            .field("active", &self.active.kind())
            .field("shadow", &self.shadow.as_ref().map(|s| s.kind()))
            .field("shadow_ready_at", &self.shadow_ready_at)
            .field("swaps", &self.swaps)
            .finish()
    }
}

impl DualSlot {
    pub fn new(config: CcConfig, kind: CcKind) -> Result<Self, SwapError> {
        let active = config.build(kind).ok_or(SwapError::UnknownKind(kind))?;
        Ok(DualSlot {
            config,
            active,
            shadow: None,
            shadow_ready_at: SimTime::ZERO,
            reconfig_delay_ns: DEFAULT_RECONFIG_DELAY_NS,
            swaps: 0,
        })
    }

    pub fn with_reconfig_delay(mut self, ns: u64) -> Self {
        self.reconfig_delay_ns = ns;
        self
    }

    pub fn reconfig_delay_ns(&self) -> u64 {
        self.reconfig_delay_ns
    }

    pub fn active_kind(&self) -> CcKind {
        self.active.kind()
    }

    pub fn active(&self) -> &dyn CongestionControl {
        self.active.as_ref()
    }

    pub fn swaps(&self) -> u32 {
        self.swaps
    }

    pub fn shadow_status(&self, now: SimTime) -> ShadowStatus {
        match &self.shadow {
            None => ShadowStatus::Empty,
            Some(s) if now < self.shadow_ready_at => {
                ShadowStatus::Loading { kind: s.kind(), ready_at: self.shadow_ready_at }
            }
            Some(s) => ShadowStatus::Ready { kind: s.kind() },
        }
    }

    pub fn shadow_ready_at(&self) -> Option<SimTime> {
        self.shadow.as_ref().map(|_| self.shadow_ready_at)
    }

    pub fn shadow(&self) -> Option<&dyn CongestionControl> {
        self.shadow.as_deref()
    }

    /// Feeds the active instance, and the shadow once it has finished loading.
    pub fn signal(&mut self, now: SimTime, signal: &CcSignal) {
        self.active.on_signal(now, signal);
        if let Some(shadow) = self.shadow.as_mut() {
            if now >= self.shadow_ready_at {
                shadow.on_signal(now, signal);
            }
        }
    }

    pub fn decision(&self) -> CcDecision {
        self.active.decision()
    }

    /// Starts loading a fresh `kind` instance; a pending load is replaced.
    pub fn load_shadow(&mut self, kind: CcKind, now: SimTime) -> Result<SimTime, SwapError> {
        let fresh = self.fresh(kind, now)?;
        Ok(self.load_shadow_instance(fresh, now))
    }

    /// Loads an arbitrary algorithm, e.g. one not shipped with this crate.
    pub fn load_shadow_instance(&mut self, cc: Box<dyn CongestionControl>, now: SimTime) -> SimTime {
        self.shadow = Some(cc);
        self.shadow_ready_at = now + self.reconfig_delay_ns;
        self.shadow_ready_at
    }

    /// Promotes the shadow. The displaced active instance is dropped and the
    /// shadow position becomes empty.
    pub fn swap_active(&mut self, now: SimTime) -> Result<CcKind, SwapError> {
        match &self.shadow {
            None => Err(SwapError::NoShadow),
            Some(_) if now < self.shadow_ready_at => Err(SwapError::NotReady { ready_at: self.shadow_ready_at }),
            Some(_) => {
                self.active = self.shadow.take().expect("checked above");
                self.swaps += 1;
                Ok(self.active.kind())
            }
        }
    }

    pub fn request_swap(&mut self, now: SimTime, policy: SwapPolicy) -> Result<SwapOutcome, SwapError> {
        match self.swap_active(now) {
            Ok(kind) => Ok(SwapOutcome::Swapped { now_active: kind }),
            Err(SwapError::NotReady { ready_at }) if policy == SwapPolicy::Defer => {
                Ok(SwapOutcome::DeferredUntil(ready_at))
            }
            Err(e) => Err(e),
        }
    }

    fn fresh(&self, kind: CcKind, now: SimTime) -> Result<Box<dyn CongestionControl>, SwapError> {
        match kind {
            // Rate timers start counting from the moment the shadow goes live.
            CcKind::Dcqcn => Ok(Box::new(super::Dcqcn::starting_at(
                self.config.dcqcn.clone(),
                now + self.reconfig_delay_ns,
            ))),
            other => self.config.build(other).ok_or(SwapError::UnknownKind(other)),
        }
    }
}
