use std::path::PathBuf;
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wmsn-sim")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn clean_run_writes_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = sim(&["run", "--scenario", scenario("line.toml").to_str().unwrap(), "--out", out, "--trace"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "row,flow_id,class,generated,delivered,delivery_ratio,mean_delay_ms,max_delay_ms,\
         deadline_miss_rate,loss_rate,station_id,tx_slots,rx_slots,idle_slots,sleep_slots,duty_cycle"
    );
    assert!(!csv.contains('\r'));
    assert_eq!(csv.lines().filter(|l| l.starts_with("flow,")).count(), 2);
    assert_eq!(csv.lines().filter(|l| l.starts_with("station,")).count(), 3);
    let trace = std::fs::read_to_string(dir.path().join("trace.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(trace.lines().next().unwrap()).unwrap();
    for key in ["frame", "slot", "phase", "station", "event", "detail"] {
        assert!(first.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn unroutable_flow_is_flagged_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let o = sim(&[
        "run",
        "--scenario",
        scenario("line.toml").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("flow 2 ABR 2 -> 100: UNROUTED (0 paths found)"));
}

#[test]
fn dropped_reservation_broadcast_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = sim(&[
        "run",
        "--scenario",
        scenario("line.toml").to_str().unwrap(),
        "--faults",
        scenario("srb_drop.toml").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("lemma 3 (table agreement): FAIL"));
    assert!(dir.path().join("metrics.csv").exists());
}

#[test]
fn same_seed_same_trace() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = sim(&[
            "run",
            "--scenario",
            scenario("two_branch.toml").to_str().unwrap(),
            "--seed",
            "9",
            "--trace",
            "--out",
            d.path().to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0));
    }
    let ta = std::fs::read(a.path().join("trace.jsonl")).unwrap();
    let tb = std::fs::read(b.path().join("trace.jsonl")).unwrap();
    assert_eq!(ta, tb);
}

#[test]
fn route_marks_the_smaller_deviation() {
    let o = sim(&["route", "--scenario", scenario("two_branch.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("2 paths found"));
    assert!(text.contains("* 0 -> 1 -> 2 -> 3 -> 9 d_path 4.333333 (selected)"));
    assert!(text.contains("  0 -> 4 -> 5 -> 6 -> 9 d_path 6.666667\n"));
}

#[test]
fn route_direct_and_disconnected() {
    let path = scenario("line.toml");
    let o = sim(&["route", "--scenario", path.to_str().unwrap(), "--src", "1", "--dst", "2"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("1 paths found\n* 1 -> 2 d_path 0.000000 (selected)"));
    let o = sim(&["route", "--scenario", path.to_str().unwrap(), "--src", "2", "--dst", "100"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("0 paths found"));
}

#[test]
fn validate_reports_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    let text = std::fs::read_to_string(scenario("line.toml"))
        .unwrap()
        .replace("rp_modulus = 11", "rp_modulus = 7")
        .replace("dst = 3", "dst = 99");
    std::fs::write(&bad, text).unwrap();
    let o = sim(&["validate", "--scenario", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("E_RP_MODULUS"), "{err}");
    assert!(err.contains("E_UNKNOWN_STATION"), "{err}");

    std::fs::write(&bad, "horizon_frames = 5\nhorizon = 3\n").unwrap();
    let o = sim(&["validate", "--scenario", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8(o.stderr).unwrap().contains("line 2"));

    let o = sim(&["validate", "--scenario", scenario("two_branch.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn sweep_runs_every_seed() {
    let dir = tempfile::tempdir().unwrap();
    let o = sim(&[
        "sweep",
        "--scenario",
        scenario("line.toml").to_str().unwrap(),
        scenario("two_branch.toml").to_str().unwrap(),
        "--seed",
        "1",
        "2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    for name in ["line-seed1", "line-seed2", "two_branch-seed1", "two_branch-seed2"] {
        assert!(dir.path().join(name).join("metrics.csv").exists(), "{name}");
    }
}

#[test]
fn missing_file_is_a_tool_error() {
    let o = sim(&["run", "--scenario", "/nonexistent/scenario.toml"]);
    assert_eq!(o.status.code(), Some(1));
}
