use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

/// One row of the per-flow time series. `bytes_delivered` is cumulative;
/// `throughput_gbps` covers the sampling interval ending at `time_ns`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowSample {
    pub time_ns: u64,
    pub flow_id: u32,
    pub bytes_delivered: u64,
    pub throughput_gbps: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Metrics {
    pub sample_period_ns: u64,
    /// Sorted by time, then by flow in scenario order.
    pub samples: Vec<FlowSample>,
    pub counters: BTreeMap<String, u64>,
}

impl Metrics {
    pub fn flow(&self, flow_id: u32) -> impl Iterator<Item = &FlowSample> {
        self.samples.iter().filter(move |s| s.flow_id == flow_id)
    }

    /// Cumulative bytes of a flow at the sample taken at `time_ns`, zero
    /// before the first sample.
    pub fn bytes_at(&self, flow_id: u32, time_ns: u64) -> u64 {
        self.flow(flow_id)
            .take_while(|s| s.time_ns <= time_ns)
            .last()
            .map_or(0, |s| s.bytes_delivered)
    }

    /// Mean throughput of a flow between two sample instants.
    pub fn mean_gbps(&self, flow_id: u32, from_ns: u64, to_ns: u64) -> f64 {
        assert!(to_ns > from_ns);
        let bytes = self.bytes_at(flow_id, to_ns) - self.bytes_at(flow_id, from_ns);
        bytes as f64 * 8.0 / (to_ns - from_ns) as f64
    }

    pub fn counter(&self, name: &str) -> u64 {
        self.counters.get(name).copied().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn window_mean_uses_cumulative_bytes() {
        let m = Metrics {
            sample_period_ns: 1000,
            samples: vec![
                FlowSample { time_ns: 1000, flow_id: 1, bytes_delivered: 100, throughput_gbps: 0.8 },
                FlowSample { time_ns: 2000, flow_id: 1, bytes_delivered: 350, throughput_gbps: 2.0 },
                FlowSample { time_ns: 3000, flow_id: 1, bytes_delivered: 600, throughput_gbps: 2.0 },
            ],
            counters: BTreeMap::new(),
        };
        assert_eq!(m.bytes_at(1, 500), 0);
        assert_eq!(m.bytes_at(1, 2000), 350);
        assert!((m.mean_gbps(1, 1000, 3000) - 2.0).abs() < 1e-12);
        assert_eq!(m.counter("missing"), 0);
    }
}
