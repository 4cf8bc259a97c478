use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn ocplab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ocplab"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr_error(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("error line on stderr");
    serde_json::from_str::<Value>(line).unwrap()["error"].clone()
}

#[test]
fn solve_lq_reaches_closed_form_cost() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "lq.toml", "system = \"lq-scalar\"\ntarget = [1.0]\n");
    let out = ocplab(tmp.path(), &["solve", "--config", "lq.toml", "--out", "run"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let solve = read_json(&tmp.path().join("run/solve.json"));
    assert!((solve["cost"].as_f64().unwrap() - 0.5).abs() <= 1e-4);
    let csv = fs::read_to_string(tmp.path().join("run/candidates.csv")).unwrap();
    assert!(csv.starts_with("candidate,k,t,u1\n"));

    let manifest = read_json(&tmp.path().join("run/manifest.json"));
    assert_eq!(manifest["command"], "solve");
    assert_eq!(manifest["seed"], 0);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["versions"]["ocplab"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn simulate_zero_control_stays_at_origin() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "h.toml", "system = \"heisenberg\"\n");
    let out = ocplab(tmp.path(), &["simulate", "--config", "h.toml", "--out", "run"]);
    assert!(out.status.success());
    let csv = fs::read_to_string(tmp.path().join("run/trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,x1,x2,x3"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 64 * 8 + 1);
    assert!(rows.iter().all(|r| r[1..].iter().all(|v| *v == 0.0)));
    assert_eq!(rows.last().unwrap()[0], 1.0);
}

#[test]
fn identical_config_and_seed_give_identical_outputs() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "osc.toml", "system = \"oscillator-potential\"\ntarget = [0.4]\nN = 32\n");
    let a = ocplab(tmp.path(), &["classify", "--config", "osc.toml", "--out", "a", "--seed", "7", "--threads", "1"]);
    let b = ocplab(tmp.path(), &["classify", "--config", "osc.toml", "--out", "b", "--seed", "7", "--threads", "3"]);
    assert!(a.status.success() && b.status.success());
    for f in ["classify.json", "candidates.csv"] {
        let (x, y) = (fs::read(tmp.path().join("a").join(f)).unwrap(), fs::read(tmp.path().join("b").join(f)).unwrap());
        assert_eq!(x, y, "{f} differs");
    }
    let report = read_json(&tmp.path().join("a/classify.json"));
    assert_eq!(report["smooth"], "true");
}

#[test]
fn config_errors_name_the_key() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "bad.toml", "system = \"lq-scalar\"\ntarget = [1.0]\n[solve]\nmultistart = 3\n");
    let out = ocplab(tmp.path(), &["solve", "--config", "bad.toml", "--out", "run"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_error(&out);
    assert_eq!(err["category"], "config");
    assert!(err["message"].as_str().unwrap().contains("solve.multistart"));

    write(tmp.path(), "unknown.toml", "system = \"no-such-system\"\n");
    let out = ocplab(tmp.path(), &["simulate", "--config", "unknown.toml", "--out", "run"]);
    assert_eq!(stderr_error(&out)["category"], "config");

    let out = ocplab(tmp.path(), &["solve", "--out", "run"]);
    assert_eq!(stderr_error(&out)["category"], "config");
}

#[test]
fn numeric_failures_carry_their_category() {
    let tmp = TempDir::new().unwrap();
    write(
        tmp.path(),
        "osc.toml",
        "system = \"oscillator-potential\"\nT = 3.141592653589793\ntarget = [0.2]\n",
    );
    let out = ocplab(tmp.path(), &["shoot", "--config", "osc.toml", "--out", "run"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_error(&out)["category"], "conjugate-obstruction");
}

#[test]
fn unreached_cells_serialize_as_inf_and_null() {
    let tmp = TempDir::new().unwrap();
    write(
        tmp.path(),
        "osc.toml",
        "system = \"oscillator-potential\"\nT = 4.0\nN = 16\n[solve]\nmultistart_count = 2\n\
         [sweep]\naxes = [{ coord = 0, lo = 0.2, hi = 0.4, n = 2 }]\nconfirm_lsc = false\n",
    );
    let out = ocplab(tmp.path(), &["sweep", "--config", "osc.toml", "--out", "run"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(tmp.path().join("run/value_map.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("x,y,V,label,jump"));
    assert!(csv.lines().skip(1).all(|l| l.contains(",inf,unreached,")), "{csv}");
    let summary = read_json(&tmp.path().join("run/sweep.json"));
    assert_eq!(summary["labels"]["unreached"], 2);
    assert!(summary["lipschitz"].is_null());

    write(tmp.path(), "solve.toml", "system = \"oscillator-potential\"\nT = 4.0\nN = 16\ntarget = [0.3]\n");
    let out = ocplab(tmp.path(), &["solve", "--config", "solve.toml", "--out", "solve"]);
    assert_eq!(stderr_error(&out)["category"], "unreachable");
    assert!(read_json(&tmp.path().join("solve/solve.json"))["cost"].is_null());
}

#[test]
fn hormander_reports_rank_by_depth() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "m.toml", "system = \"martinet\"\n[hormander]\npoint = [0.0, 0.5, 0.0]\ndepth = 3\n");
    let out = ocplab(tmp.path(), &["hormander", "--config", "m.toml", "--out", "run"]);
    assert!(out.status.success());
    let h = read_json(&tmp.path().join("run/hormander.json"));
    assert_eq!(h["rank_by_depth"], serde_json::json!([2, 2, 3, 3]));
    // [X1, X2] = 2x dz vanishes on x = 0, so the plane needs depth 2
    assert_eq!(h["full_rank_depth"], 2);
}

#[test]
fn polynomial_system_from_tables() {
    let tmp = TempDir::new().unwrap();
    // x' = u as a table, constant control 2 for T = 1
    write(
        tmp.path(),
        "p.toml",
        "[system]\ndim = 1\ncontrols = [[[[1.0, 0]]]]\n[control]\nconstant = [2.0]\n",
    );
    let out = ocplab(tmp.path(), &["simulate", "--config", "p.toml", "--out", "run"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = read_json(&tmp.path().join("run/simulate.json"));
    assert!((s["final_state"][0].as_f64().unwrap() - 2.0).abs() < 1e-12);
    assert!((s["cost"].as_f64().unwrap() - 2.0).abs() < 1e-12);
}

#[test]
fn bench_prints_a_passing_table() {
    let tmp = TempDir::new().unwrap();
    let out = ocplab(tmp.path(), &["bench", "--out", "run"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().next().unwrap().starts_with("status"));
    assert!(!stdout.contains("FAIL"));
    let b = read_json(&tmp.path().join("run/bench.json"));
    assert_eq!(b["failed"], 0);
}
