//! DCQCN reaction point.
//!
//! Rate-based: congestion notifications cut the current rate by `alpha / 2`
//! and remember the pre-cut rate as the target; the alpha timer decays the
//! congestion estimate; rate-increase events (timer periods and byte-counter
//! expirations) walk the current rate back through fast recovery, additive
//! increase and hyper increase.

use super::{CcDecision, CcKind, CcSignal, CongestionControl};
use crate::model::SimTime;

#[derive(Clone, Debug, PartialEq)]
pub struct DcqcnParams {
    pub line_rate_bps: u64,
    /// Alpha gain.
    pub g: f64,
    pub alpha_timer_ns: u64,
    pub rate_timer_ns: u64,
    pub byte_counter_bytes: u64,
    /// Increase events spent in fast recovery before additive increase.
    pub fast_recovery_steps: u32,
    pub additive_step_bps: f64,
    pub hyper_step_bps: f64,
    pub min_rate_bps: f64,
    /// ECN echoes arriving this soon after a decrease are folded into it.
    pub echo_holdoff_ns: u64,
}

impl DcqcnParams {
    /// Published defaults with the rate steps scaled to `line_rate_bps`.
    pub fn for_line_rate(line_rate_bps: u64) -> Self {
        let line = line_rate_bps as f64;
        DcqcnParams {
            line_rate_bps,
            g: 1.0 / 256.0,
            alpha_timer_ns: 55_000,
            rate_timer_ns: 55_000,
            byte_counter_bytes: 10 * 1024 * 1024,
            fast_recovery_steps: 5,
            additive_step_bps: line / 100.0,
            hyper_step_bps: line / 10.0,
            min_rate_bps: line / 1000.0,
            echo_holdoff_ns: 50_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DcqcnState {
    pub rate_current_bps: f64,
    pub rate_target_bps: f64,
    pub alpha: f64,
    /// Byte-counter expirations since the last decrease.
    pub byte_counter: u32,
    /// Rate-timer expirations since the last decrease.
    pub timer_counter: u32,
    pub bytes_since_expiry: u64,
    pub alpha_timer_start: SimTime,
    pub rate_timer_start: SimTime,
    pub last_decrease: Option<SimTime>,
    pub last_signal_at: SimTime,
}

impl DcqcnState {
    pub fn new(params: &DcqcnParams) -> Self {
        let line = params.line_rate_bps as f64;
        DcqcnState {
            rate_current_bps: line,
            rate_target_bps: line,
            alpha: 1.0,
            byte_counter: 0,
            timer_counter: 0,
            bytes_since_expiry: 0,
            alpha_timer_start: SimTime::ZERO,
            rate_timer_start: SimTime::ZERO,
            last_decrease: None,
            last_signal_at: SimTime::ZERO,
        }
    }

    pub fn increase_stage(&self) -> u32 {
        self.timer_counter.max(self.byte_counter)
    }

    fn decision(&self) -> CcDecision {
        CcDecision { allowance_bytes: u64::MAX, pacing_rate_bps: Some(self.rate_current_bps as u64) }
    }

    fn decrease(&mut self, params: &DcqcnParams, now: SimTime) {
        self.rate_target_bps = self.rate_current_bps;
        self.rate_current_bps = (self.rate_current_bps * (1.0 - self.alpha / 2.0)).max(params.min_rate_bps);
        self.alpha = ((1.0 - params.g) * self.alpha + params.g).min(1.0);
        self.byte_counter = 0;
        self.timer_counter = 0;
        self.bytes_since_expiry = 0;
        self.alpha_timer_start = now;
        self.rate_timer_start = now;
        self.last_decrease = Some(now);
    }

    fn increase(&mut self, params: &DcqcnParams) {
        let f = params.fast_recovery_steps;
        let line = params.line_rate_bps as f64;
        if self.timer_counter.max(self.byte_counter) < f {
            // fast recovery: target untouched
        } else if self.timer_counter.min(self.byte_counter) < f {
            self.rate_target_bps += params.additive_step_bps;
        } else {
            let i = (self.timer_counter.min(self.byte_counter) - f + 1) as f64;
            self.rate_target_bps += i * params.hyper_step_bps;
        }
        self.rate_target_bps = self.rate_target_bps.min(line);
        self.rate_current_bps = ((self.rate_target_bps + self.rate_current_bps) / 2.0).min(line);
    }

    fn on_timer(&mut self, params: &DcqcnParams, at: SimTime) {
        while at.since(self.alpha_timer_start) >= params.alpha_timer_ns {
            self.alpha *= 1.0 - params.g;
            self.alpha_timer_start += params.alpha_timer_ns;
        }
        while at.since(self.rate_timer_start) >= params.rate_timer_ns {
            self.timer_counter = self.timer_counter.saturating_add(1);
            self.rate_timer_start += params.rate_timer_ns;
            self.increase(params);
        }
    }

    fn on_sent(&mut self, params: &DcqcnParams, bytes: u64) {
        self.bytes_since_expiry += bytes;
        while self.bytes_since_expiry >= params.byte_counter_bytes {
            self.bytes_since_expiry -= params.byte_counter_bytes;
            self.byte_counter = self.byte_counter.saturating_add(1);
            self.increase(params);
        }
    }
}

/// One DCQCN step. `now` must not go backwards across calls.
pub fn dcqcn_update(
    mut state: DcqcnState,
    params: &DcqcnParams,
    now: SimTime,
    signal: &CcSignal,
) -> (DcqcnState, CcDecision) {
    debug_assert!(now >= state.last_signal_at, "signal time went backwards");
    state.last_signal_at = now;
    match *signal {
        CcSignal::Cnp => state.decrease(params, now),
        CcSignal::EcnEcho { at } => {
            let recent = state.last_decrease.is_some_and(|t| at.since(t) < params.echo_holdoff_ns);
            if !recent {
                state.decrease(params, at);
            }
        }
        CcSignal::Timer { at } => state.on_timer(params, at),
        CcSignal::Sent { bytes } => state.on_sent(params, bytes),
        CcSignal::Ack { .. } => {}
    }
    let decision = state.decision();
    (state, decision)
}

#[derive(Clone, Debug)]
pub struct Dcqcn {
    params: DcqcnParams,
    state: DcqcnState,
}

impl Dcqcn {
    pub fn new(params: DcqcnParams) -> Self {
        let state = DcqcnState::new(&params);
        Dcqcn { params, state }
    }

    /// Starts the timers at `now` instead of time zero.
    pub fn starting_at(params: DcqcnParams, now: SimTime) -> Self {
        let mut d = Dcqcn::new(params);
        d.state.alpha_timer_start = now;
        d.state.rate_timer_start = now;
        d.state.last_signal_at = now;
        d
    }

    pub fn state(&self) -> &DcqcnState {
        &self.state
    }

    pub fn params(&self) -> &DcqcnParams {
        &self.params
    }
}

impl CongestionControl for Dcqcn {
    fn kind(&self) -> CcKind {
        CcKind::Dcqcn
    }

    fn on_signal(&mut self, now: SimTime, signal: &CcSignal) {
        let state = core::mem::replace(&mut self.state, DcqcnState::new(&self.params));
        self.state = dcqcn_update(state, &self.params, now, signal).0;
    }

    fn decision(&self) -> CcDecision {
        self.state.decision()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use proptest::prelude::*;

    const G100: u64 = 100_000_000_000;

    #[test]
    fn cnp_with_full_alpha_halves_rate() {
        let p = DcqcnParams::for_line_rate(G100);
        let s = DcqcnState::new(&p);
        assert_eq!(s.alpha, 1.0);
        let (s, d) = dcqcn_update(s, &p, SimTime::ZERO, &CcSignal::Cnp);
        assert_eq!(s.rate_current_bps, 50e9);
        assert_eq!(s.rate_target_bps, 100e9);
        assert_eq!(d.pacing_rate_bps, Some(50_000_000_000));
        assert_eq!(s.alpha, 1.0);
    }

    #[test]
    fn alpha_update_uses_gain() {
        let p = DcqcnParams::for_line_rate(G100);
        let mut s = DcqcnState::new(&p);
        s.alpha = 0.5;
        let (s, _) = dcqcn_update(s, &p, SimTime::ZERO, &CcSignal::Cnp);
        assert_eq!(s.rate_current_bps, 75e9);
        assert_eq!(s.alpha, (1.0 - 1.0 / 256.0) * 0.5 + 1.0 / 256.0);
    }

    #[test]
    fn fast_recovery_halves_gap_each_period() {
        let p = DcqcnParams::for_line_rate(G100);
        let (mut s, _) = dcqcn_update(DcqcnState::new(&p), &p, SimTime::ZERO, &CcSignal::Cnp);
        // Hand-computed: gap to the 100G target halves every 55 us period.
        let expected = [75e9, 87.5e9, 93.75e9, 96.875e9, 98.4375e9];
        for (k, want) in expected.iter().enumerate() {
            let at = SimTime::from_ns(55_000 * (k as u64 + 1));
            s = dcqcn_update(s, &p, at, &CcSignal::Timer { at }).0;
            assert_eq!(s.rate_current_bps, *want, "period {}", k + 1);
            assert_eq!(s.rate_target_bps, 100e9);
        }
    }

    #[test]
    fn additive_then_hyper_increase() {
        let p = DcqcnParams::for_line_rate(G100);
        let mut s = DcqcnState::new(&p);
        s.rate_current_bps = 10e9;
        s.rate_target_bps = 10e9;
        s.timer_counter = 5;
        s.byte_counter = 0;
        s.increase(&p);
        assert_eq!(s.rate_target_bps, 11e9);
        assert_eq!(s.rate_current_bps, 10.5e9);
        s.byte_counter = 6;
        s.timer_counter = 7;
        s.increase(&p);
        // i = min(7, 6) - 5 + 1 = 2 hyper steps of 10G
        assert_eq!(s.rate_target_bps, 31e9);
    }

    #[test]
    fn byte_counter_triggers_increase() {
        let p = DcqcnParams::for_line_rate(G100);
        let (s, _) = dcqcn_update(DcqcnState::new(&p), &p, SimTime::ZERO, &CcSignal::Cnp);
        let (s, _) = dcqcn_update(s, &p, SimTime::ZERO, &CcSignal::Sent { bytes: p.byte_counter_bytes - 1 });
        assert_eq!(s.byte_counter, 0);
        let (s, _) = dcqcn_update(s, &p, SimTime::ZERO, &CcSignal::Sent { bytes: 1 });
        assert_eq!(s.byte_counter, 1);
        assert_eq!(s.rate_current_bps, 75e9);
    }

    #[test]
    fn alpha_decays_without_marks() {
        let p = DcqcnParams::for_line_rate(G100);
        let s = DcqcnState::new(&p);
        let at = SimTime::from_ns(3 * 55_000);
        let (s, _) = dcqcn_update(s, &p, at, &CcSignal::Timer { at });
        let k = 1.0 - 1.0 / 256.0;
        assert_eq!(s.alpha, k * k * k);
    }

    #[test]
    fn echo_holdoff_folds_repeated_marks() {
        let p = DcqcnParams::for_line_rate(G100);
        let t0 = SimTime::from_us(1);
        let (s, _) = dcqcn_update(DcqcnState::new(&p), &p, t0, &CcSignal::EcnEcho { at: t0 });
        let after_first = s.rate_current_bps;
        let t1 = SimTime::from_us(20);
        let (s, _) = dcqcn_update(s, &p, t1, &CcSignal::EcnEcho { at: t1 });
        assert_eq!(s.rate_current_bps, after_first);
        let t2 = SimTime::from_us(60);
        let (s, _) = dcqcn_update(s, &p, t2, &CcSignal::EcnEcho { at: t2 });
        assert!(s.rate_current_bps < after_first);
    }

    fn arb_signal() -> impl Strategy<Value = (u64, u8, u64)> {
        (0u64..200_000, 0u8..5, 0u64..20_000_000)
    }

    proptest! {
        #[test]
        fn bounds_hold_on_random_traces(mut trace in proptest::collection::vec(arb_signal(), 1..300)) {
            trace.sort_by_key(|t| t.0);
            let p = DcqcnParams::for_line_rate(G100);
            let mut s = DcqcnState::new(&p);
            for (t, which, bytes) in trace {
                let at = SimTime::from_ns(t);
                let sig = match which {
                    0 => CcSignal::Cnp,
                    1 => CcSignal::EcnEcho { at },
                    2 => CcSignal::Timer { at },
                    3 => CcSignal::Sent { bytes },
                    _ => CcSignal::Ack { bytes, rtt_ns: 1 },
                };
                let increase = matches!(sig, CcSignal::Timer { .. } | CcSignal::Sent { .. });
                s = dcqcn_update(s, &p, at, &sig).0;
                prop_assert!((0.0..=1.0).contains(&s.alpha));
                prop_assert!(s.rate_current_bps > 0.0 && s.rate_current_bps <= G100 as f64);
                if increase {
                    prop_assert!(s.rate_current_bps <= s.rate_target_bps);
                }
            }
        }

        #[test]
        fn replay_is_deterministic(trace in proptest::collection::vec(arb_signal(), 1..100)) {
            let p = DcqcnParams::for_line_rate(G100);
            let run = |trace: &[(u64, u8, u64)]| {
                let mut sorted: Vec<_> = trace.to_vec();
                sorted.sort_by_key(|t| t.0);
                let mut cc = Dcqcn::new(p.clone());
                for (t, which, bytes) in sorted {
                    let at = SimTime::from_ns(t);
                    let sig = if which % 2 == 0 { CcSignal::Cnp } else { CcSignal::Sent { bytes } };
                    cc.on_signal(at, &sig);
                }
                cc.state().clone()
            };
            prop_assert_eq!(run(&trace), run(&trace));
        }
    }
}
