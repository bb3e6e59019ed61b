use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cyclescope"));
    cmd.env_remove("CYCLESCOPE_THREADS");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn models() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

fn model(name: &str) -> String {
    models().join(name).display().to_string()
}

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .map(|l| l.split(',').map(|x| x.parse::<f64>().unwrap()).collect())
        .collect();
    (header, rows)
}

/// Replaces values by their JSON type, keeping keys and nesting.
fn schema(v: &Value) -> Value {
    match v {
        Value::Null => Value::from("null"),
        Value::Bool(_) => Value::from("bool"),
        Value::Number(_) => Value::from("number"),
        Value::String(_) => Value::from("string"),
        Value::Array(items) => Value::Array(items.first().map(schema).into_iter().collect()),
        Value::Object(map) => Value::Object(map.iter().map(|(k, v)| (k.clone(), schema(v))).collect()),
    }
}

fn assert_golden_schema(actual: &Value, name: &str) {
    let path = golden(name);
    let got = schema(actual);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, serde_json::to_string_pretty(&got).unwrap() + "\n").unwrap();
    }
    assert_eq!(got, read_json(&path), "schema drifted from {}", path.display());
}

fn dir_contents(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn check_exit_codes() {
    let ok = run(&["check", &model("maser.json")]);
    assert_eq!(ok.status.code(), Some(0), "{}", stderr(&ok));
    assert!(stdout(&ok).starts_with("structure: PASS"));

    let allowed = run(&["check", &model("allowed_fourlevel.json")]);
    assert_eq!(allowed.status.code(), Some(0));

    let forbidden = run(&["check", &model("forbidden_fourlevel.json")]);
    assert_eq!(forbidden.status.code(), Some(2));
    let report = stdout(&forbidden);
    assert!(report.starts_with("structure: FAIL"));
    assert!(report.lines().any(|l| l.contains("hamiltonian_block_diagonal") && l.ends_with("FAIL")));

    let tmp = TempDir::new().unwrap();
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "{\"hamiltonian\": [").unwrap();
    assert_eq!(run(&["check", bad.to_str().unwrap()]).status.code(), Some(1));
    fs::write(&bad, "{\"hamiltonian\": []}").unwrap();
    assert_eq!(run(&["check", bad.to_str().unwrap()]).status.code(), Some(1));
    let missing = tmp.path().join("missing.json");
    assert_eq!(run(&["check", missing.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(1));
}

#[test]
fn shipped_models_match_the_generator() {
    for (kind, file) in [
        ("maser", "maser.json"),
        ("forbidden", "forbidden_fourlevel.json"),
        ("allowed", "allowed_fourlevel.json"),
    ] {
        let o = run(&["model", kind]);
        assert_eq!(o.status.code(), Some(0));
        assert_eq!(stdout(&o), fs::read_to_string(models().join(file)).unwrap(), "{file}");
    }
}

#[test]
fn stats_reports_the_engine_regime_and_density_grid() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("stats");
    let o = run(&[
        "stats",
        &model("maser.json"),
        "--tau-grid",
        "t_max=40,n=2048",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let stats = read_json(&out.join("stats.json"));
    assert_golden_schema(&stats, "stats.schema.json");
    assert_eq!(stats["regime"], "engine");
    assert_eq!(stats["provenance"], "analytic");
    let p: Vec<f64> = stats["p"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert!(p[0] > p[1]);
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);

    let (header, rows) = read_csv(&out.join("densities.csv"));
    assert_eq!(header, ["tau", "p1", "p2", "p3", "p4"]);
    assert_eq!(rows.len(), 2048);
    assert_eq!(rows[0][0], 0.0);
    assert_eq!(rows[2047][0], 40.0);
    assert!(rows.iter().all(|r| r[1..].iter().all(|&v| v >= -1e-15)));

    let (header, counts) = read_csv(&out.join("useful_counts.csv"));
    assert_eq!(header, ["n", "probability", "geometric"]);
    assert_eq!(counts[0][0], 0.0);
    let (header, _) = read_csv(&out.join("useful_time.csv"));
    assert_eq!(header, ["t", "density", "cdf"]);

    let closed = tmp.path().join("closed");
    let o = run(&[
        "stats",
        &model("maser.json"),
        "--oracle=closed_form",
        "--tau-grid",
        "40,2048",
        "--out",
        closed.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let cf = read_json(&closed.join("stats.json"));
    assert_eq!(cf["provenance"], "closed_form");
    for k in 0..4 {
        assert!((cf["p"][k].as_f64().unwrap() - p[k]).abs() < 1e-12);
    }
    let (_, cf_rows) = read_csv(&closed.join("densities.csv"));
    for (a, b) in rows.iter().zip(&cf_rows) {
        for k in 1..5 {
            assert!((a[k] - b[k]).abs() <= 1e-10, "tau {}: {} vs {}", a[0], a[k], b[k]);
        }
    }
}

#[test]
fn stats_tags_the_crossover_and_rejects_bad_inputs() {
    let tmp = TempDir::new().unwrap();
    let m4 = tmp.path().join("m4.json");
    let o = run(&["model", "maser", "--t-h", "4", "--out", m4.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let out = tmp.path().join("s4");
    let o = run(&["stats", m4.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let stats = read_json(&out.join("stats.json"));
    assert_eq!(stats["regime"], "crossover");
    assert!((stats["p"][0].as_f64().unwrap() - stats["p"][1].as_f64().unwrap()).abs() <= 1e-8);

    let o = run(&[
        "stats",
        &model("allowed_fourlevel.json"),
        "--oracle",
        "closed_form",
        "--out",
        tmp.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("maser"));

    let o = run(&[
        "stats",
        &model("forbidden_fourlevel.json"),
        "--out",
        tmp.path().join("y").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!tmp.path().join("y").exists());
}

fn simulate(out: &Path, cycles: &str, seeds: &str) -> Output {
    run(&[
        "simulate",
        &model("maser.json"),
        "--cycles",
        cycles,
        "--seeds",
        seeds,
        "--seed",
        "2024",
        "--out",
        out.to_str().unwrap(),
    ])
}

#[test]
fn simulate_agrees_with_the_oracle_and_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let first = tmp.path().join("a");
    let o = simulate(&first, "100000", "8");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = read_json(&first.join("empirical.json"));
    assert_golden_schema(&report, "empirical.schema.json");
    assert!(report["empirical"]["n_cycles"].as_u64().unwrap() >= 100_000);
    let rows = report["comparison"].as_array().unwrap();
    for k in 1..=4 {
        let row = rows.iter().find(|r| r["quantity"] == format!("p{k}").as_str()).unwrap();
        assert_eq!(row["within"], true, "{row}");
    }
    assert_eq!(report["records"].as_array().unwrap().len(), 8);

    let second = tmp.path().join("b");
    let o = bin()
        .env("CYCLESCOPE_THREADS", "1")
        .args([
            "simulate",
            &model("maser.json"),
            "--cycles",
            "100000",
            "--seeds",
            "8",
            "--seed",
            "2024",
            "--out",
            second.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(dir_contents(&first), dir_contents(&second));

    let records: Vec<String> = (0..8)
        .map(|k| first.join(format!("trajectories/stream_{k:04}.jsonl")).display().to_string())
        .collect();
    let analyzed = tmp.path().join("analyzed.json");
    let mut args = vec!["analyze".to_string(), model("maser.json")];
    args.extend(records);
    args.extend(["--out".to_string(), analyzed.display().to_string()]);
    let o = bin().args(&args).output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(read_json(&analyzed)["empirical"], report["empirical"]);
}

#[test]
fn simulate_refuses_tiny_runs() {
    let tmp = TempDir::new().unwrap();
    let o = simulate(&tmp.path().join("c"), "50", "1");
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("insufficient statistics"));
}

fn sweep(spec: &str, threads: Option<&str>) -> (Output, String) {
    let tmp = TempDir::new().unwrap();
    let spec_path = tmp.path().join("sweep.json");
    fs::write(&spec_path, spec).unwrap();
    let out = tmp.path().join("sweep.csv");
    let mut cmd = bin();
    if let Some(t) = threads {
        cmd.env("CYCLESCOPE_THREADS", t);
    }
    let o = cmd
        .args([
            "sweep",
            &model("maser.json"),
            spec_path.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    let text = fs::read_to_string(&out).unwrap_or_default();
    (o, text)
}

#[test]
fn temperature_sweep_shows_idle_bound_and_optimum() {
    let ratios: Vec<f64> = (0..=77).map(|k| 1.5 + 0.5 * k as f64).collect();
    let spec = serde_json::json!({
        "parameter": "T_h/T_c",
        "values": ratios,
        "quantities": ["p1", "p2", "p3", "p4", "mean_idle", "time_ratio", "e_tau"],
    })
    .to_string();
    let (o, text) = sweep(&spec, None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let tmp = TempDir::new().unwrap();
    let csv = tmp.path().join("s.csv");
    fs::write(&csv, &text).unwrap();
    let (header, rows) = read_csv(&csv);
    assert_eq!(header, ["T_h/T_c", "p1", "p2", "p3", "p4", "mean_idle", "time_ratio", "e_tau"]);
    assert_eq!(rows.len(), ratios.len());
    for (row, r) in rows.iter().zip(&ratios) {
        assert_eq!(row[0], *r);
        assert!(row[3] + row[4] >= row[1] + row[2], "idle below useful at {r}");
        assert!(row[5] >= 1.0 - 1e-12, "mean idle {} at {r}", row[5]);
    }
    let best = rows.iter().min_by(|a, b| a[5].total_cmp(&b[5])).unwrap();
    assert_eq!(best[0], 4.0);
    assert!((best[5] - 1.0).abs() < 1e-12);

    let e_tau = |r: f64| rows.iter().find(|row| row[0] == r).unwrap()[7];
    assert!(e_tau(2.0) > 2.0 * e_tau(10.0));

    let (o, single) = sweep(&spec, Some("1"));
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(single, text);
}

#[test]
fn sweep_rejects_unknown_names() {
    let (o, _) = sweep(r#"{"parameter": "T_h", "values": [5], "quantities": ["p1", "nope"]}"#, None);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("nope") && err.contains("mean_idle") && err.contains("e_tau_3"));

    let (o, _) = sweep(r#"{"parameter": "B_field", "values": [5], "quantities": ["p1"]}"#, None);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("T_h/T_c"));

    let (o, _) = sweep(r#"{"parameter": "T_h", "values": [], "quantities": ["p1"]}"#, None);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn shipped_sweep_runs() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("ratio.csv");
    let o = run(&[
        "sweep",
        &model("maser.json"),
        &model("temperature_ratio_sweep.json"),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let (header, rows) = read_csv(&out);
    assert_eq!(header.len(), 11);
    assert_eq!(rows.len(), 12);
    assert!(rows.windows(2).all(|w| w[0][0] < w[1][0]));
}
