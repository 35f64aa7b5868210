use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use scenic_sim::report::{read_counters, read_metrics, METRICS_HEADER};
use scenic_sim::runner::{run_all, RunOptions, COUNTERS_FILE, METRICS_FILE};
use scenic_sim::{parse_scenario, ringdump};

fn sim(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scenic-sim"))
        .args(args)
        .current_dir(cwd)
        .env_remove("SCENIC_SIM_OUT")
        .output()
        .expect("binary runs")
}

const ZERO_LENGTH: &str = "[scenario]\nname = empty\nduration_ns = 0\n\n[topology]\nnode name=a\nnode name=b\n\n[flows]\nflow id=1 src=a dst=b op=write size=4096\n";

#[test]
fn zero_duration_writes_an_empty_series() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("empty.scn"), ZERO_LENGTH).unwrap();
    let out = sim(&["run", "empty.scn"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("out/empty");
    let metrics = fs::read_to_string(run.join(METRICS_FILE)).unwrap();
    assert_eq!(metrics.trim_end(), METRICS_HEADER);
    let counters = read_counters(&fs::read_to_string(run.join(COUNTERS_FILE)).unwrap()).unwrap();
    assert!(counters.iter().any(|(k, v)| k == "bytes_delivered" && *v == 0));
}

#[test]
fn invalid_scenario_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.scn"), "[scenario]\nname = bad\n").unwrap();
    for cmd in ["validate", "run"] {
        let out = sim(&[cmd, "bad.scn"], dir.path());
        assert_eq!(out.status.code(), Some(2), "{cmd}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("topology"), "{cmd}");
    }
    assert!(!dir.path().join("out").exists());
}

#[test]
fn canonical_output_is_a_valid_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let out = sim(&["validate", "--canonical", "incast-firewall"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(parse_scenario(&text).unwrap(), scenic_sim::load("incast-firewall").unwrap());
}

#[test]
fn overrides_and_out_dir_apply() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("empty.scn"), ZERO_LENGTH.replace("duration_ns = 0", "duration_ns = 100000")).unwrap();
    let out = sim(&["run", "empty.scn", "--out", "results", "--sample-period-ns", "25000", "--seed", "9"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let samples = read_metrics(&fs::read_to_string(dir.path().join("results/empty").join(METRICS_FILE)).unwrap()).unwrap();
    let times: Vec<u64> = samples.iter().map(|s| s.time_ns).collect();
    assert_eq!(times, [25_000, 50_000, 75_000, 100_000]);
    assert!(samples.windows(2).all(|w| w[0].bytes_delivered <= w[1].bytes_delivered));
}

#[test]
fn ring_entry_layout() {
    let dump = ringdump::encode(&[vec![0xAA; 5], vec![], vec![0x11; 8]]);
    let mut want = vec![5, 0, 0, 0, 1, 0, 0, 0, 0xAA, 0xAA, 0xAA, 0xAA, 0xAA, 0, 0, 0];
    want.extend([0, 0, 0, 0, 1, 0, 0, 0]);
    want.extend([8, 0, 0, 0, 1, 0, 0, 0]);
    want.extend([0x11; 8]);
    assert_eq!(dump, want);
}

#[test]
fn ring_dump_holds_unpolled_packets() {
    let text = "[scenario]\nname = ring\nduration_ns = 100000\n\n[topology]\nnode name=a\nnode name=b\n\n\
                [flows]\nflow id=1 src=a dst=b op=raw size=100 rate_bps=1000000000\n\n\
                [hostpath]\nirq_count = 1000000\nirq_timeout_ns = 1000000000\n";
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("ring.scn"), text).unwrap();
    let out = sim(&["run", "ring.scn", "--ring-dump"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("out/ring");
    assert!(ringdump::read(&run.join("ring-a.bin")).unwrap().is_empty());
    let entries = ringdump::read(&run.join("ring-b.bin")).unwrap();
    let counters = read_counters(&fs::read_to_string(run.join(COUNTERS_FILE)).unwrap()).unwrap();
    let enqueued = counters.iter().find(|(k, _)| k == "slowpath_enqueued").unwrap().1;
    assert!(enqueued > 0);
    assert_eq!(entries.len() as u64, enqueued);
    let len = entries[0].len();
    assert!(len >= 100);
    assert!(entries.iter().all(|e| e.len() == len));
}

#[test]
fn run_all_keeps_input_order() {
    let names = ["collective", "hashpart", "fairness"];
    let mut scenarios: Vec<_> = names.iter().map(|n| scenic_sim::load(n).unwrap()).collect();
    for sc in &mut scenarios {
        sc.duration_ns = sc.duration_ns.min(1_000_000);
        sc.sample_period_ns = sc.sample_period_ns.min(100_000);
        let end = sc.duration_ns;
        sc.flows.retain(|f| f.start_ns <= end);
    }
    let dir = tempfile::tempdir().unwrap();
    let results = run_all(&scenarios, dir.path(), 3, RunOptions::default());
    let dirs: Vec<_> = results.into_iter().map(|r| r.unwrap().dir).collect();
    let want: Vec<_> = names.iter().map(|n| dir.path().join(n)).collect();
    assert_eq!(dirs, want);
    let serial = tempfile::tempdir().unwrap();
    run_all(&scenarios, serial.path(), 1, RunOptions::default());
    for n in names {
        let a = fs::read(dir.path().join(n).join(METRICS_FILE)).unwrap();
        let b = fs::read(serial.path().join(n).join(METRICS_FILE)).unwrap();
        assert_eq!(a, b, "{n}");
    }
}
