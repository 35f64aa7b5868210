use super::*;
use crate::model::OtherReason;
use alloc::vec;

fn input(bytes: Vec<u8>, subnet: u16) -> ScuInput {
    ScuInput {
        wire_bytes: bytes.len() as u32 + 82,
        payload: Payload::from_vec(bytes),
        addr: None,
        flow: FlowKey::Roce { qpn: 1 },
        src_node: NodeId(0),
        src_subnet: subnet,
    }
}

struct Faulty;

impl ScuPlugin for Faulty {
    fn kind(&self) -> ScuKind {
        ScuKind::UserPlugin("faulty")
    }

    fn process(&mut self, _now: SimTime, input: ScuInput, out: &mut Vec<Emission>) -> Result<(), PluginFault> {
        if input.payload.len() > 100 {
            out.push(Emission {
                sink: Sink::ControlPlane,
                payload: input.payload,
                addr: None,
                flow: input.flow,
                src_subnet: 0,
                wire_bytes: 0,
            });
            return Err(PluginFault("oversize"));
        }
        Ok(())
    }
}

fn host(region: u32) -> Box<dyn ScuPlugin> {
    Box::new(Passthrough { sink: Sink::HostMem { region } })
}

#[test]
fn passthrough_forwards_unchanged() {
    let mut bank = ScuBank::new(vec![host(0)]).unwrap();
    let mut out = Vec::new();
    let data = vec![7u8; 4096];
    bank.process(0, SimTime::ZERO, input(data.clone(), 0), &mut out).unwrap();
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].sink, Sink::HostMem { region: 0 });
    assert_eq!(out[0].payload.bytes(), Some(&data[..]));
}

#[test]
fn too_many_units() {
    let plugins: Vec<_> = (0..17).map(host).collect();
    assert_eq!(ScuBank::new(plugins).unwrap_err(), ScuError::TooMany(17));
}

#[test]
fn fault_isolates_only_that_unit() {
    let mut bank = ScuBank::new(vec![host(0), Box::new(Faulty)]).unwrap();
    let mut out = Vec::new();
    let r = bank.process(1, SimTime::ZERO, input(vec![1; 200], 0), &mut out).unwrap();
    assert_eq!(r, ProcessOutcome::Faulted);
    assert!(out.is_empty(), "partial output of a faulting plug-in is discarded");
    assert_eq!(bank.state(1, SimTime::ZERO).unwrap(), ScuState::Error);
    assert_eq!(bank.state(0, SimTime::ZERO).unwrap(), ScuState::Online);
    assert_eq!(bank.process(1, SimTime::ZERO, input(vec![1], 0), &mut out).unwrap(), ProcessOutcome::DroppedError);
    assert_eq!(bank.process(0, SimTime::ZERO, input(vec![1], 0), &mut out).unwrap(), ProcessOutcome::Accepted);
}

/// Drives unit 0 with a fixed trace, optionally next to a second unit that
/// receives (and may fault on) its own traffic.
fn trace_of_unit0(with_neighbour: bool) -> Vec<Emission> {
    let mut plugins = vec![host(3)];
    if with_neighbour {
        plugins.push(Box::new(Faulty));
    }
    let mut bank = ScuBank::new(plugins).unwrap();
    let mut mine = Vec::new();
    for i in 0..50u32 {
        let t = SimTime::from_ns(i as u64 * 10);
        bank.process(0, t, input(vec![i as u8; (i * 7 % 300) as usize + 1], 1), &mut mine).unwrap();
        if with_neighbour {
            let mut theirs = Vec::new();
            bank.process(1, t, input(vec![0; (i * 13 % 200) as usize], 2), &mut theirs).unwrap();
        }
    }
    mine
}

#[test]
fn isolation_differential() {
    assert_eq!(trace_of_unit0(false), trace_of_unit0(true));
}

#[test]
fn csr_and_reconfigure() {
    let mut bank = ScuBank::new(vec![host(0), host(1)]).unwrap();
    bank.set_csr(0, 0x42, 9, SimTime::ZERO).unwrap();
    assert_eq!(bank.get_csr(0, 0x42).unwrap(), 9);
    assert_eq!(bank.get_csr(1, 0x42).unwrap(), 0);
    let until = bank.reconfigure(0, host(5), SimTime::from_ns(100), 1000).unwrap();
    assert_eq!(until, SimTime::from_ns(1100));
    let mut out = Vec::new();
    assert_eq!(bank.process(0, SimTime::from_ns(500), input(vec![1], 0), &mut out).unwrap(), ProcessOutcome::DroppedOffline);
    assert_eq!(bank.process(0, until, input(vec![1], 0), &mut out).unwrap(), ProcessOutcome::Accepted);
    assert_eq!(out[0].sink, Sink::HostMem { region: 5 });
    assert_eq!(bank.get(0).unwrap().counters().dropped_offline, 1);
    assert_eq!(bank.set_csr(2, 0, 0, SimTime::ZERO), Err(ScuError::OutOfRange(2)));
}

#[test]
fn hashpart_unit_handles_straddling_rows() {
    let sinks: Vec<Sink> = (0..4).map(|r| Sink::HostMem { region: r }).collect();
    let mut unit = HashPartScu::new(HashPartConfig::new(4, 24, 1), sinks).unwrap();
    let mut reference = HashPartState::new(HashPartConfig::new(4, 24, 1)).unwrap();
    let data: Vec<u8> = (0..24 * 5000).map(|i| (i * 31 % 253) as u8).collect();
    let mut out = Vec::new();
    for chunk in data.chunks(1000) {
        unit.process(SimTime::ZERO, input(chunk.to_vec(), 0), &mut out).unwrap();
    }
    unit.finish(SimTime::ZERO, &mut out).unwrap();
    let mut flushes = Vec::new();
    reference.ingest(&data, &mut flushes).unwrap();
    reference.finish(&mut flushes);
    assert_eq!(out.len(), flushes.len());
    for (e, f) in out.iter().zip(&flushes) {
        assert_eq!(e.sink, Sink::HostMem { region: f.dest });
        assert_eq!(e.payload.bytes(), Some(&f.bytes[..]));
    }
    let _ = OtherReason::Raw;
}

#[test]
fn firewall_counts_and_caps_via_csr() {
    let mut fw = Firewall::monitor(Sink::HostMem { region: 0 }, 4178, 1 << 20);
    let mut out = Vec::new();
    for _ in 0..3 {
        fw.process(SimTime::ZERO, input(vec![0; 18], 5), &mut out).unwrap();
    }
    assert_eq!(fw.read_csr(csr_reg(CSR_CLASS_PACKETS, 5)), Some(3));
    assert_eq!(fw.read_csr(csr_reg(CSR_CLASS_BYTES, 5)), Some(300));
    assert!(fw.write_csr(csr_reg(CSR_CLASS_CAP, 5), 0, SimTime::ZERO));
    assert_eq!(fw.cap(5), 0);
}

#[test]
fn fifty_gig_cap_on_hundred_gig_ingress() {
    // 4178-byte packets arriving back to back at 100 Gbit/s for 100 ms.
    let mut fw = Firewall::limiter(Sink::HostMem { region: 0 }, 4178, u64::MAX);
    fw.write_csr(csr_reg(CSR_CLASS_CAP, 1), 50_000_000_000, SimTime::ZERO);
    let mut clock = crate::model::SerializationClock::new(100);
    let end = SimTime::from_ms(100);
    let mut t = SimTime::ZERO;
    let mut out = Vec::new();
    let mut emitted = 0u64;
    while t < end {
        while let Some(w) = fw.next_wake() {
            if w > t {
                break;
            }
            fw.on_wake(w, &mut out).unwrap();
        }
        fw.process(t, input(vec![0; 4096], 1), &mut out).unwrap();
        t += clock.advance(4178);
    }
    while let Some(w) = fw.next_wake() {
        if w > end {
            break;
        }
        fw.on_wake(w, &mut out).unwrap();
    }
    emitted += out.iter().map(|e| e.wire_bytes as u64).sum::<u64>();
    let gbps = emitted as f64 * 8.0 / 1e8;
    assert!((gbps - 50.0).abs() / 50.0 < 0.02, "{gbps}");
}
