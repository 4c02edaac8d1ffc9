use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_strattree"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Small LCG so fixtures do not depend on an RNG crate.
struct Lcg(u64);

impl Lcg {
    fn next(&mut self) -> f64 {
        self.0 = self
            .0
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }
}

fn outcome(x1: f64, a: usize, u: f64) -> f64 {
    let effect = if x1 > 0.5 { 2.0 } else { 0.0 };
    let scale = if x1 > 0.5 { 3.0 } else { 1.0 };
    a as f64 * effect + scale * (u - 0.5)
}

fn write_pilot(dir: &Path, n: usize, seed: u64) {
    let mut rng = Lcg(seed);
    let mut s = String::from("y,a,x1,x2\n");
    for i in 0..n {
        let (x1, x2, u) = (rng.next(), rng.next(), rng.next());
        s += &format!("{},{},{x1},{x2}\n", outcome(x1, i % 2, u), i % 2);
    }
    fs::write(dir.join("pilot.csv"), s).unwrap();
}

#[test]
fn fit_assign_estimate_pipeline() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write_pilot(dir, 200, 1);
    let fit_args = [
        "fit",
        "--pilot",
        "pilot.csv",
        "--depth",
        "2",
        "--population",
        "30",
        "--seed",
        "7",
    ];
    ok(dir, &fit_args);
    let first = fs::read(dir.join("tree.json")).unwrap();
    ok(dir, &fit_args);
    assert_eq!(first, fs::read(dir.join("tree.json")).unwrap());

    let report = json(dir.join("fit_report.json"));
    assert_eq!(report["schema"], "strattree.fit_report/v1");
    assert_eq!(report["seed"], 7);
    assert_eq!(report["config"]["max_depth"], 2);

    let mut rng = Lcg(2);
    let mut wave = String::from("id,x1,x2\n");
    for i in 0..300 {
        wave += &format!("{i},{},{}\n", rng.next(), rng.next());
    }
    fs::write(dir.join("wave.csv"), wave).unwrap();
    ok(
        dir,
        &[
            "assign",
            "--tree",
            "tree.json",
            "--data",
            "wave.csv",
            "--seed",
            "5",
            "--out",
            "assigned.csv",
            "--plan",
            "plan.json",
        ],
    );
    let plan = json(dir.join("plan.json"));
    assert_eq!(plan["plan"]["seed"], 5);

    let mut reader = csv::Reader::from_path(dir.join("assigned.csv")).unwrap();
    let headers = reader.headers().unwrap().clone();
    assert_eq!(
        headers.iter().collect::<Vec<_>>(),
        ["id", "x1", "x2", "stratum", "treatment"]
    );
    let mut rng = Lcg(3);
    let mut wave2 = String::from("y,a,x1,x2\n");
    for rec in reader.records() {
        let rec = rec.unwrap();
        let x1: f64 = rec[1].parse().unwrap();
        let a: usize = rec[4].parse().unwrap();
        wave2 += &format!(
            "{},{a},{},{}\n",
            outcome(x1, a, rng.next()),
            &rec[1],
            &rec[2]
        );
    }
    fs::write(dir.join("wave2.csv"), wave2).unwrap();

    let out = ok(
        dir,
        &["estimate", "--tree", "tree.json", "--data", "wave2.csv"],
    );
    let est: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(est["schema"], "strattree.estimate/v1");
    assert_eq!(est["estimate"]["n"], 300);
    let theta = est["estimate"]["theta"].as_f64().unwrap();
    assert!((theta - 1.0).abs() < 0.6, "{theta}");

    let out = ok(
        dir,
        &[
            "estimate",
            "--tree",
            "tree.json",
            "--data",
            "wave2.csv",
            "--pilot",
            "pilot.csv",
        ],
    );
    let pooled: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(pooled["estimate"]["n"], 500);
    let (p, w) = (
        pooled["pilot"]["theta"].as_f64().unwrap(),
        pooled["wave2"]["theta"].as_f64().unwrap(),
    );
    let got = pooled["estimate"]["theta"].as_f64().unwrap();
    assert!((got - (0.4 * p + 0.6 * w)).abs() < 1e-12);
}

#[test]
fn missing_value_is_an_input_error() {
    let tmp = TempDir::new().unwrap();
    fs::write(
        tmp.path().join("bad.csv"),
        "y,a,x1,x2\n1,0,0.5,0.1\n2,1,0.3,\n",
    )
    .unwrap();
    let out = run(tmp.path(), &["fit", "--pilot", "bad.csv"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("row 2") && err.contains("\"x2\""), "{err}");
}

#[test]
fn out_of_bounds_needs_a_space() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let mut s = String::from("y,a,x1\n");
    for i in 0..40 {
        s += &format!("{},{},{}\n", i % 3, i % 2, 10.0 * i as f64);
    }
    fs::write(dir.join("p.csv"), s).unwrap();
    let out = run(dir, &["fit", "--pilot", "p.csv", "--population", "10"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--space"));

    fs::write(
        dir.join("space.json"),
        r#"[{"kind": "continuous", "lower": 0, "upper": 400}]"#,
    )
    .unwrap();
    ok(
        dir,
        &[
            "fit",
            "--pilot",
            "p.csv",
            "--population",
            "10",
            "--space",
            "space.json",
        ],
    );
}

#[test]
fn fit_on_a_grid_matches_the_oracle() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let rows = [
        (0.1, 0, 0.0),
        (0.2, 1, 0.3),
        (0.3, 0, 0.1),
        (0.4, 1, 0.2),
        (0.6, 0, -2.0),
        (0.7, 1, 4.0),
        (0.8, 0, 2.0),
        (0.9, 1, 9.0),
    ];
    let mut s = String::from("y,a,x1\n");
    for (x, a, y) in rows {
        s += &format!("{y},{a},{x}\n");
    }
    fs::write(dir.join("p.csv"), s).unwrap();
    fs::write(dir.join("grid.json"), "[[0.25, 0.5, 0.75]]").unwrap();
    let common = ["--pilot", "p.csv", "--grid", "grid.json", "--depth", "2"];
    let mut args = vec![
        "oracle",
        "--tree",
        "oracle.json",
        "--report",
        "oracle_report.json",
    ];
    args.extend(common);
    ok(dir, &args);
    let mut args = vec!["fit", "--population", "20", "--seed", "1"];
    args.extend(common);
    ok(dir, &args);
    let oracle = json(dir.join("oracle.json"));
    let fitted = json(dir.join("tree.json"));
    assert_eq!(oracle["root"], fitted["root"]);
    let report = json(dir.join("oracle_report.json"));
    let fit_report = json(dir.join("fit_report.json"));
    let (a, b) = (
        report["objective"].as_f64().unwrap(),
        fit_report["objective"].as_f64().unwrap(),
    );
    assert!((a - b).abs() <= 1e-12 * a.abs());
}

#[test]
fn sfe_refuses_unequal_targets() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    fs::write(
        dir.join("tree.json"),
        r#"{"depth": 1,
            "space": [{"kind": "continuous", "lower": 0, "upper": 1}],
            "root": {"cut": {"dim": 1, "threshold": 0.5},
                     "left": {"leaf": 1, "pi": [0.3]},
                     "right": {"leaf": 2, "pi": [0.6]}}}"#,
    )
    .unwrap();
    let mut s = String::from("y,a,x1\n");
    for i in 0..20 {
        s += &format!("{},{},{}\n", i as f64 * 0.1, i % 2, (i as f64 + 0.5) / 20.0);
    }
    fs::write(dir.join("w.csv"), s).unwrap();
    ok(dir, &["estimate", "--tree", "tree.json", "--data", "w.csv"]);
    let out = run(
        dir,
        &[
            "estimate",
            "--tree",
            "tree.json",
            "--data",
            "w.csv",
            "--sfe",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fixed-effects"));
}

#[test]
fn three_arm_estimate() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    fs::write(
        dir.join("tree.json"),
        r#"{"depth": 0,
            "space": [{"kind": "continuous", "lower": 0, "upper": 1}],
            "root": {"leaf": 1, "pi": [0.3, 0.3]}}"#,
    )
    .unwrap();
    let mut s = String::from("y,a,x1\n");
    for i in 0..30 {
        let a = i % 3;
        s += &format!(
            "{},{a},{}\n",
            a as f64 + (i % 5) as f64 * 0.1,
            i as f64 / 30.0
        );
    }
    fs::write(dir.join("w.csv"), s).unwrap();
    let out = ok(dir, &["estimate", "--tree", "tree.json", "--data", "w.csv"]);
    let est: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(est["estimate"]["theta"].as_array().unwrap().len(), 2);
}

#[test]
fn cv_fit_writes_three_artifacts() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write_pilot(dir, 120, 4);
    ok(
        dir,
        &[
            "cv-fit",
            "--pilot",
            "pilot.csv",
            "--depth",
            "2",
            "--population",
            "20",
            "--seed",
            "3",
        ],
    );
    let cv = json(dir.join("cv_report.json"));
    assert_eq!(cv["schema"], "strattree.cv_report/v1");
    assert_eq!(cv["depths"].as_array().unwrap().len(), 3);
    let chosen = cv["chosen_depth"].as_u64().unwrap();
    let fit = json(dir.join("fit_report.json"));
    assert_eq!(fit["config"]["max_depth"].as_u64().unwrap(), chosen);
}

#[test]
fn small_simulation() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let out = ok(
        dir,
        &[
            "simulate",
            "--model",
            "1",
            "--pilot-n",
            "100",
            "--main-n",
            "200",
            "--reps",
            "3",
            "--population",
            "10",
            "--max-iterations",
            "20",
            "--methods",
            "adhoc,strat",
            "--seed",
            "9",
            "--csv",
            "m.csv",
            "--json",
            "m.json",
        ],
    );
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("Coverage"), "{table}");
    let csv = fs::read_to_string(dir.join("m.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.lines().nth(1).unwrap().starts_with("none,"));
    assert_eq!(json(dir.join("m.json"))["config"]["seed"], 9);
}

#[test]
fn unknown_method_is_an_input_error() {
    let tmp = TempDir::new().unwrap();
    let out = run(
        tmp.path(),
        &["simulate", "--model", "1", "--methods", "bogus"],
    );
    assert_eq!(out.status.code(), Some(2));
}
