use super::*;
use crate::model::Packet;
use alloc::vec;

const MTU: u32 = 4178;

struct Pair {
    a: RoceEngine,
    b: RoceEngine,
    ma: HostMemory,
    mb: HostMemory,
    qa: u32,
    qb: u32,
    ids: PacketIdGen,
}

fn pair(config: TransportConfig) -> Pair {
    let mut sa = SteeringTable::new(4);
    let mut sb = SteeringTable::new(4);
    let mut a = RoceEngine::new(NodeId(0), 0, MTU, 200_000_000_000, 4, config.clone());
    let mut b = RoceEngine::new(NodeId(1), 1, MTU, 200_000_000_000, 4, config);
    let qa = a.create_qp(NodeId(1), 0, &mut sa).unwrap();
    let qb = b.create_qp(NodeId(0), 1, &mut sb).unwrap();
    a.connect(qa, qb).unwrap();
    b.connect(qb, qa).unwrap();
    a.register_mr(0, 200 * 1024, SimTime::ZERO).unwrap();
    b.register_mr(0, 200 * 1024, SimTime::ZERO).unwrap();
    Pair { a, b, ma: HostMemory::new(), mb: HostMemory::new(), qa, qb, ids: PacketIdGen::default() }
}

#[derive(Default)]
struct Trace {
    a_tx: Vec<Packet>,
    b_tx: Vec<Packet>,
    a_actions: Vec<RxAction>,
    b_actions: Vec<RxAction>,
}

impl Pair {
    /// Moves packets until both sides are idle; `drop` sees every data
    /// packet from A and may discard it.
    fn run(&mut self, mut drop: impl FnMut(&Packet) -> bool) -> Trace {
        let mut t = Trace::default();
        let mut now = SimTime::ZERO;
        for _ in 0..100_000 {
            let mut moved = false;
            now += 100;
            self.a.tick(now);
            self.b.tick(now);
            moved |= step(&mut self.a, &mut self.b, &self.ma, self.qa, now, &mut self.ids, &mut drop, &mut t.a_tx, &mut t.b_actions);
            moved |= step(&mut self.b, &mut self.a, &self.mb, self.qb, now, &mut self.ids, &mut |_| false, &mut t.b_tx, &mut t.a_actions);
            if !moved && !self.a.has_tx_work(self.qa) && !self.b.has_tx_work(self.qb) {
                let a = self.a.qp(self.qa).unwrap();
                if a.lowest_unacked().is_none() {
                    break;
                }
            }
        }
        t
    }
}

#[allow(clippy::too_many_arguments)]
fn step(
    src: &mut RoceEngine,
    dst: &mut RoceEngine,
    mem: &HostMemory,
    q: u32,
    now: SimTime,
    ids: &mut PacketIdGen,
    drop: &mut dyn FnMut(&Packet) -> bool,
    tx: &mut Vec<Packet>,
    acts: &mut Vec<RxAction>,
) -> bool {
    let TxPoll::Packet(p) = src.poll_tx(q, now, mem, ids) else { return false };
    tx.push(p.clone());
    if !drop(&p) {
        let mut out = Vec::new();
        dst.on_rx_segment(now, p, ids, &mut out).unwrap();
        deliver_controls(src, now, ids, &out, acts);
        acts.extend(out);
    }
    true
}

/// Control packets generated by a receiver go straight back to the sender.
fn deliver_controls(src: &mut RoceEngine, now: SimTime, ids: &mut PacketIdGen, out: &[RxAction], _acts: &mut Vec<RxAction>) {
    for a in out {
        if let RxAction::Transmit(p) = a {
            let mut back = Vec::new();
            src.on_rx_segment(now, p.clone(), ids, &mut back).unwrap();
        }
    }
}

fn write(len: u64) -> WorkRequest {
    WorkRequest { wr_id: 7, opcode: Opcode::Write, local_addr: 0, remote_addr: 0x1000, len_bytes: len }
}

fn read(len: u64) -> WorkRequest {
    WorkRequest { wr_id: 9, opcode: Opcode::Read, local_addr: 0x2000, remote_addr: 0, len_bytes: len }
}

#[test]
fn segmentation_counts() {
    assert_eq!(segment_count(128 * 1024, 4096), 32);
    assert_eq!(segment_count(1, 4096), 1);
    assert_eq!(segment_count(4097, 4096), 2);
    let segs: Vec<_> = segment(9000, 4096).collect();
    assert_eq!(segs, vec![(0, 4096), (4096, 4096), (8192, 808)]);
}

#[test]
fn create_qp_assigns_sequential_numbers_and_steering() {
    let mut st = SteeringTable::new(2);
    let mut e = RoceEngine::new(NodeId(0), 0, MTU, 200_000_000_000, 2, TransportConfig::default());
    assert_eq!(e.create_qp(NodeId(1), 0, &mut st), Ok(1));
    assert_eq!(e.create_qp(NodeId(1), 1, &mut st), Ok(2));
    assert_eq!(e.qp(1).unwrap().state(), QpState::Ready);
    assert_eq!(crate::triage::steer(&FlowKey::Roce { qpn: 2 }, &st), crate::triage::Steering::Scu(1));
    assert_eq!(
        e.create_qp(NodeId(1), 2, &mut st),
        Err(TransportError::ScuOutOfRange { index: 2, count: 2 })
    );
}

#[test]
fn write_128k_is_32_segments_and_one_completion() {
    let mut p = pair(TransportConfig::default());
    p.a.post_work(p.qa, write(128 * 1024)).unwrap();
    let t = p.run(|_| false);
    assert_eq!(t.a_tx.len(), 32);
    assert!(t.a_tx.iter().all(|x| x.wire_bytes == MTU));
    let delivered: u64 = t
        .b_actions
        .iter()
        .filter_map(|a| match a {
            RxAction::Deliver(d) => Some(d.payload.len()),
            _ => None,
        })
        .sum();
    assert_eq!(delivered, 128 * 1024);
    assert_eq!(p.a.poll_completion(p.qa).unwrap(), CompletionPoll { count: 1, error: false });
    assert_eq!(p.a.poll_completion(p.qa).unwrap(), CompletionPoll { count: 0, error: false });
    assert_eq!(p.a.qp(p.qa).unwrap().in_flight_bytes(), 0);
}

#[test]
fn one_byte_write_is_one_segment() {
    let mut p = pair(TransportConfig::default());
    p.a.post_work(p.qa, write(1)).unwrap();
    let t = p.run(|_| false);
    assert_eq!(t.a_tx.len(), 1);
    assert_eq!(t.a_tx[0].wire_bytes, 83);
}

#[test]
fn read_8k_is_one_request_two_responses() {
    let mut p = pair(TransportConfig::default());
    p.a.post_work(p.qa, read(8192)).unwrap();
    let t = p.run(|_| false);
    assert_eq!(t.a_tx.len(), 1);
    assert!(matches!(t.a_tx[0].bth().unwrap().opcode, RoceOpcode::ReadRequest { len: 8192, .. }));
    assert_eq!(t.b_tx.len(), 2);
    assert_eq!(p.a.qp(p.qa).unwrap().send_psn(), 2);
    assert_eq!(p.b.qp(p.qb).unwrap().expect_psn(), 2);
    let done = t.a_actions.iter().filter(|a| matches!(a, RxAction::Completed { opcode: Opcode::Read, .. })).count();
    assert_eq!(done, 1);
    assert_eq!(p.a.poll_completion(p.qa).unwrap().count, 1);
}

#[test]
fn read_data_is_copied_from_responder_memory() {
    let mut p = pair(TransportConfig::default());
    let data: Vec<u8> = (0..6000u32).map(|i| (i % 251) as u8).collect();
    p.mb.back(0, data.clone());
    p.a.post_work(p.qa, read(6000)).unwrap();
    let t = p.run(|_| false);
    let mut got = Vec::new();
    for a in &t.a_actions {
        if let RxAction::Deliver(d) = a {
            assert_eq!(d.kind, DeliveryKind::ReadData);
            got.extend_from_slice(d.payload.bytes().unwrap());
        }
    }
    assert_eq!(got, data);
}

#[test]
fn unregistered_post_fails_qp() {
    let mut p = pair(TransportConfig::default());
    let bad = WorkRequest { local_addr: 1 << 30, ..write(10) };
    assert!(matches!(p.a.post_work(p.qa, bad), Err(TransportError::UnregisteredAddress { .. })));
    assert_eq!(p.a.qp(p.qa).unwrap().state(), QpState::Error);
    assert_eq!(p.a.poll_completion(p.qa).unwrap(), CompletionPoll { count: 0, error: true });
    assert!(matches!(p.a.post_work(p.qa, write(10)), Err(TransportError::QpNotReady { .. })));
}

#[test]
fn remote_access_fault_naks_and_fails_both_ends() {
    let mut p = pair(TransportConfig::default());
    let bad = WorkRequest { remote_addr: 1 << 30, ..write(100) };
    p.a.post_work(p.qa, bad).unwrap();
    let t = p.run(|_| false);
    assert_eq!(t.a_tx.len(), 1);
    assert_eq!(p.b.qp(p.qb).unwrap().state(), QpState::Error);
    assert_eq!(p.a.qp(p.qa).unwrap().state(), QpState::Error);
    assert!(p.a.poll_completion(p.qa).unwrap().error);
}

#[test]
fn lossless_gap_is_a_protocol_violation() {
    let mut p = pair(TransportConfig::default());
    p.a.post_work(p.qa, write(3 * 4096)).unwrap();
    let mut ids = PacketIdGen::default();
    let _first = p.a.poll_tx(p.qa, SimTime::ZERO, &p.ma, &mut ids);
    let TxPoll::Packet(second) = p.a.poll_tx(p.qa, SimTime::from_ns(1_000), &p.ma, &mut ids) else {
        panic!("expected a segment")
    };
    let mut out = Vec::new();
    let err = p.b.on_rx_segment(SimTime::from_ns(2_000), second, &mut ids, &mut out).unwrap_err();
    assert_eq!(err, ProtocolViolation { qpn: p.qb, expected: 0, got: 1 });
}

#[test]
fn lossy_write_recovers_with_go_back_n() {
    let config = TransportConfig { lossless: false, ..TransportConfig::default() };
    let mut p = pair(config);
    p.a.post_work(p.qa, write(40 * 4096)).unwrap();
    let mut n = 0;
    let t = p.run(|pkt| {
        n += 1;
        pkt.bth().unwrap().psn == 5 && n < 10
    });
    assert_eq!(p.b.qp(p.qb).unwrap().bytes_received(), 40 * 4096);
    assert_eq!(p.a.poll_completion(p.qa).unwrap().count, 1);
    assert!(p.a.stats().retransmits > 0);
    assert!(t.a_tx.len() > 40);
    let mut addrs: Vec<u64> = t
        .b_actions
        .iter()
        .filter_map(|a| match a {
            RxAction::Deliver(d) => Some(d.addr),
            _ => None,
        })
        .collect();
    let sorted = addrs.clone();
    addrs.sort();
    assert_eq!(addrs, sorted, "deliveries stay in order");
}

#[test]
fn lossy_tail_loss_recovers_by_timeout() {
    let config = TransportConfig { lossless: false, rto_ns: 5_000, ..TransportConfig::default() };
    let mut p = pair(config);
    p.a.post_work(p.qa, write(4 * 4096)).unwrap();
    let mut dropped = false;
    p.run(|pkt| {
        if pkt.bth().unwrap().psn == 3 && !dropped {
            dropped = true;
            return true;
        }
        false
    });
    assert!(p.a.stats().timeouts >= 1);
    assert_eq!(p.a.poll_completion(p.qa).unwrap().count, 1);
}

#[test]
fn lossy_read_response_gap_rerequests() {
    let config = TransportConfig { lossless: false, ..TransportConfig::default() };
    let mut p = pair(config);
    p.a.post_work(p.qa, read(8 * 4096)).unwrap();
    // Drop B's third response once by intercepting directly.
    let mut ids = PacketIdGen::default();
    let mut now = SimTime::ZERO;
    let mut dropped = false;
    let mut completed = 0;
    for _ in 0..10_000 {
        now += 1_000;
        p.a.tick(now);
        if let TxPoll::Packet(req) = p.a.poll_tx(p.qa, now, &p.ma, &mut ids) {
            let mut out = Vec::new();
            p.b.on_rx_segment(now, req, &mut ids, &mut out).unwrap();
        }
        if let TxPoll::Packet(resp) = p.b.poll_tx(p.qb, now, &p.mb, &mut ids) {
            if resp.bth().unwrap().psn == 2 && !dropped {
                dropped = true;
                continue;
            }
            let mut out = Vec::new();
            p.a.on_rx_segment(now, resp, &mut ids, &mut out).unwrap();
            completed += out.iter().filter(|a| matches!(a, RxAction::Completed { .. })).count();
        }
        if completed == 1 {
            break;
        }
    }
    assert_eq!(completed, 1);
    assert_eq!(p.a.qp(p.qa).unwrap().bytes_received(), 8 * 4096);
}

#[test]
fn marked_write_triggers_rate_limited_cnp() {
    let mut p = pair(TransportConfig::default());
    p.a.post_work(p.qa, write(4 * 4096)).unwrap();
    let mut ids = PacketIdGen::default();
    let mut cnps = 0;
    for i in 0..4 {
        let now = SimTime::from_ns(i * 1000);
        let TxPoll::Packet(mut pkt) = p.a.poll_tx(p.qa, now, &p.ma, &mut ids) else { panic!() };
        pkt.ecn_marked = true;
        let mut out = Vec::new();
        p.b.on_rx_segment(now, pkt, &mut ids, &mut out).unwrap();
        cnps += out
            .iter()
            .filter(|a| matches!(a, RxAction::Transmit(x) if matches!(x.bth().unwrap().opcode, RoceOpcode::Cnp)))
            .count();
    }
    assert_eq!(cnps, 1);
}

#[test]
fn window_blocks_until_acked() {
    let mut p = pair(TransportConfig::default());
    p.a.set_cc_defaults(CcConfig::for_line_rate(200_000_000_000, 2 * 4096), CcKind::Window, 0);
    let mut st = SteeringTable::new(4);
    let q = p.a.create_qp(NodeId(1), 0, &mut st).unwrap();
    p.a.connect(q, p.qb).unwrap();
    p.a.post_work(q, write(4 * 4096)).unwrap();
    let mut ids = PacketIdGen::default();
    assert!(matches!(p.a.poll_tx(q, SimTime::ZERO, &p.ma, &mut ids), TxPoll::Packet(_)));
    assert!(matches!(p.a.poll_tx(q, SimTime::ZERO, &p.ma, &mut ids), TxPoll::Packet(_)));
    assert_eq!(p.a.poll_tx(q, SimTime::ZERO, &p.ma, &mut ids), TxPoll::Blocked);
}

#[test]
fn streaming_write_waits_for_source_bytes() {
    let mut p = pair(TransportConfig::default());
    p.a.post_streaming_write(p.qa, write(3 * 4096)).unwrap();
    let mut ids = PacketIdGen::default();
    assert_eq!(p.a.poll_tx(p.qa, SimTime::ZERO, &p.ma, &mut ids), TxPoll::Blocked);
    p.a.extend_available(p.qa, 4096).unwrap();
    assert!(matches!(p.a.poll_tx(p.qa, SimTime::ZERO, &p.ma, &mut ids), TxPoll::Packet(_)));
    assert_eq!(p.a.poll_tx(p.qa, SimTime::ZERO, &p.ma, &mut ids), TxPoll::Blocked);
}

#[test]
fn tlb_miss_stalls_sender() {
    let config = TransportConfig { tlb: TlbConfig { capacity: 4, ..TlbConfig::default() }, ..TransportConfig::default() };
    let mut p = pair(config);
    p.a.register_mr(1 << 24, 4 * 4096, SimTime::ZERO).unwrap();
    p.a.post_work(p.qa, write(4096)).unwrap();
    let mut ids = PacketIdGen::default();
    assert_eq!(p.a.poll_tx(p.qa, SimTime::ZERO, &p.ma, &mut ids), TxPoll::PacedUntil(SimTime::from_ns(1000)));
    assert!(matches!(p.a.poll_tx(p.qa, SimTime::from_ns(1000), &p.ma, &mut ids), TxPoll::Packet(_)));
    assert_eq!(p.a.stats().tx_tlb_stall_ns, 1000);
}

/// Reference LRU on a plain list, most recent last.
fn lru_oracle(cap: usize, trace: &[u64]) -> (u64, Vec<u64>) {
    let mut list: Vec<u64> = Vec::new();
    let mut misses = 0;
    for &p in trace {
        if let Some(i) = list.iter().position(|&x| x == p) {
            list.remove(i);
        } else {
            misses += 1;
            if list.len() == cap {
                list.remove(0);
            }
        }
        list.push(p);
    }
    (misses, list)
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn tlb_matches_lru_oracle(cap in 1usize..12, trace in proptest::collection::vec(0u64..24, 0..300)) {
            let mut tlb = Tlb::new(cap);
            for (i, &p) in trace.iter().enumerate() {
                let now = SimTime::from_ns(i as u64);
                if tlb.lookup(p, now).is_none() {
                    tlb.insert(p, p + 1000, now);
                }
            }
            let (misses, order) = lru_oracle(cap, &trace);
            prop_assert_eq!(tlb.misses(), misses);
            prop_assert_eq!(tlb.lru_order(), order);
            prop_assert!(tlb.len() <= cap);
        }

        #[test]
        fn segments_cover_message(len in 1u64..1_000_000, mtu in 1u64..9000) {
            let segs: Vec<_> = segment(len, mtu).collect();
            prop_assert_eq!(segs.len() as u32, segment_count(len, mtu));
            prop_assert_eq!(segs.iter().map(|s| s.1).sum::<u64>(), len);
            prop_assert!(segs.iter().all(|s| s.1 >= 1 && s.1 <= mtu));
        }

        #[test]
        fn lossless_write_delivers_exactly(len in 1u64..200_000) {
            let mut p = pair(TransportConfig::default());
            p.a.post_work(p.qa, write(len)).unwrap();
            p.run(|_| false);
            prop_assert_eq!(p.b.qp(p.qb).unwrap().bytes_received(), len);
            prop_assert_eq!(p.a.poll_completion(p.qa).unwrap().count, 1);
        }
    }
}
