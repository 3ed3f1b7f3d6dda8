use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn memdse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_memdse")).args(args).output().expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY_POOL: &str = r#"
schema = "memdse-pool/1"

[[memory]]
name = "rf"
size_bits = 512
allowed_unrolls = [1, 4]
port = "dual_port"

[[memory.variants]]
bw = [16, 16]
cost = [1.0, 1.2]
area = 100.0

[[memory]]
name = "buf"
size_bits = 16384
allowed_unrolls = [1]
port = "dual_port"

[[memory.variants]]
bw = [32, 32]
cost = [5.0, 6.0]
area = 1000.0

[[memory.variants]]
bw = [128, 128]
cost = [9.0, 11.0]
area = 1600.0
"#;

const TINY_CONFIG: &str = r#"
schema = "memdse-config/1"

[search]
strategy = "heuristic"

[archgen]
area_budget_um2 = 2000.0
pe_array = [2, 2]
mac_energy_pj = 0.5
spatial = [["Ku 2", "OXu 2"]]
max_levels_per_operand = 2
max_instances_per_entry = 1
"#;

const TINY_WORKLOAD: &str = r#"
schema = "memdse-workload/1"

[[layer]]
name = "t"
bounds = { K = 4, C = 4, OX = 4, FX = 3 }
"#;

#[test]
fn schedule_writes_deterministic_results() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let w = data("small.toml");
    let arch = data("eyeriss.toml");
    for (out, workers) in [(&a, "1"), (&b, "3")] {
        let o = memdse(&["schedule", "--workload", s(&w), "--arch", s(&arch), "--workers", workers, "-o", s(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let ra = fs::read(a.join("result.json")).unwrap();
    assert_eq!(ra, fs::read(b.join("result.json")).unwrap());
    let v: Value = serde_json::from_slice(&ra).unwrap();
    assert_eq!(v["schema"], "memdse-result/1");
    assert_eq!(v["config"]["search"]["strategy"], "heuristic");
    assert_eq!(v["results"].as_array().unwrap().len(), 2);
    assert!(a.join("small_conv.map").exists() && a.join("small_fc.map").exists());
    let meta = json(&a.join("metadata.json"));
    assert!(meta["unix_time"].as_u64().unwrap() > 0);
    assert!(!String::from_utf8_lossy(&ra).contains("unix_time"));
}

#[test]
fn evaluate_reproduces_the_scheduled_cost() {
    let dir = tempfile::tempdir().unwrap();
    let (sch, ev) = (dir.path().join("s"), dir.path().join("e"));
    let w = data("small.toml");
    let arch = data("eyeriss.toml");
    let o = memdse(&["schedule", "--workload", s(&w), "--arch", s(&arch), "--layer", "small_conv", "-o", s(&sch)]);
    assert!(o.status.success());
    let map = sch.join("small_conv.map");
    let o = memdse(&[
        "evaluate",
        "--workload",
        s(&w),
        "--arch",
        s(&arch),
        "--mapping",
        s(&map),
        "--layer",
        "small_conv",
        "-o",
        s(&ev),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let a = json(&sch.join("result.json"));
    let b = json(&ev.join("result.json"));
    assert_eq!(a["results"][0]["report"], b["results"][0]["report"]);
    assert!(fs::read_to_string(ev.join("breakdown.csv")).unwrap().starts_with("operand,level"));
}

#[test]
fn stdout_mode_prints_the_result() {
    let o = memdse(&[
        "schedule",
        "--workload",
        s(&data("small.toml")),
        "--arch",
        s(&data("eyeriss.toml")),
        "--layer",
        "small_fc",
    ]);
    assert!(o.status.success());
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["results"][0]["layer"], "small_fc");
}

#[test]
fn explore_then_pareto() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("pool.toml"), TINY_POOL).unwrap();
    fs::write(p.join("cfg.toml"), TINY_CONFIG).unwrap();
    fs::write(p.join("w.toml"), TINY_WORKLOAD).unwrap();
    let x = p.join("x");
    let o = memdse(&[
        "explore",
        "--workload",
        s(&p.join("w.toml")),
        "--pool",
        s(&p.join("pool.toml")),
        "--config",
        s(&p.join("cfg.toml")),
        "-o",
        s(&x),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let all = json(&x.join("result.json"));
    let points = all["results"][0]["points"].as_array().unwrap();
    assert!(points.len() > 1);
    for pt in points {
        assert!(pt["area_um2"].as_f64().unwrap() <= 2000.0);
    }
    let f = p.join("f");
    let o = memdse(&["pareto", "--input", s(&x.join("result.json")), "-o", s(&f)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let front = json(&f.join("result.json"));
    let fp = front["results"][0]["points"].as_array().unwrap();
    assert!(!fp.is_empty() && fp.len() <= points.len());
    let keys: Vec<&Value> = points.iter().map(|p| &p["key"]).collect();
    assert!(fp.iter().all(|p| keys.contains(&&p["key"])));
    assert_eq!(fs::read_to_string(f.join("pareto.csv")).unwrap().lines().count(), fp.len() + 1);

    // a budget nothing fits in
    let o = memdse(&[
        "explore",
        "--workload",
        s(&p.join("w.toml")),
        "--pool",
        s(&p.join("pool.toml")),
        "--config",
        s(&p.join("cfg.toml")),
        "--area-budget",
        "10",
        "-o",
        s(&p.join("none")),
    ]);
    assert_eq!(o.status.code(), Some(4));
    assert_eq!(json(&p.join("none/error.json"))["kind"], "infeasible");
}

#[test]
fn failures_are_machine_readable() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    // a pool file where an architecture is expected
    let o = memdse(&["schedule", "--workload", s(&data("small.toml")), "--arch", s(&data("pool.toml")), "-o", s(&out)]);
    assert_eq!(o.status.code(), Some(3));
    let rec: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(rec["schema"], "memdse-error/1");
    assert_eq!(rec["kind"], "invalid_input");
    assert!(rec["message"].as_str().unwrap().contains("pool.toml"));
    assert_eq!(json(&out.join("error.json")), rec);
    assert!(!out.join("result.json").exists());

    let o = memdse(&["schedule", "--workload", "/nonexistent.toml", "--arch", s(&data("eyeriss.toml"))]);
    assert_eq!(o.status.code(), Some(3));

    let o = memdse(&[
        "schedule",
        "--workload",
        s(&data("small.toml")),
        "--arch",
        s(&data("eyeriss.toml")),
        "--layer",
        "nope",
    ]);
    assert_eq!(o.status.code(), Some(3));

    let o = memdse(&["schedule", "--strategy", "random"]);
    assert_eq!(o.status.code(), Some(2));
}
