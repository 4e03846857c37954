use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn dpfl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpfl"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("dpfl runs")
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/configs").join(name)
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn value<'a>(text: &'a str, key: &str) -> &'a str {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no `{key}=` line in:\n{text}"))
}

#[test]
fn accountant_calibrates_and_reports() {
    let out = dpfl(&["accountant", "--epsilon", "2", "--delta", "1e-6", "--q", "0.01", "--rounds", "300"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let z: f64 = value(&text, "z").parse().unwrap();
    let eps: f64 = value(&text, "epsilon").parse().unwrap();
    assert!((z - 0.9552).abs() < 1e-3, "z = {z}");
    assert!(eps <= 2.0 && eps > 1.99);
    assert_eq!(value(&text, "rounds"), "300");

    let back = dpfl(&["accountant", "--z", &z.to_string(), "--delta", "1e-6", "--q", "0.01", "--rounds", "300"]);
    let again: f64 = value(&stdout(&back), "epsilon").parse().unwrap();
    assert!((again - eps).abs() < 1e-12);
}

#[test]
fn unreachable_budget_exits_2() {
    let out = dpfl(&["accountant", "--epsilon", "0.01", "--delta", "1e-6", "--q", "1", "--rounds", "1000"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("calibration"));
}

#[test]
fn run_writes_one_row_per_round() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = dpfl(&["run", config("fedavg_minimal.toml").to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--seed", "9"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.starts_with("seed = 9\n"), "resolved config is echoed first");
    let rounds = fs::read_to_string(out_dir.join("rounds.csv")).unwrap();
    assert_eq!(rounds.lines().count(), 1 + 30);
    for f in ["rank_eval.csv", "timing.csv", "summary.json", "config.toml"] {
        assert!(out_dir.join(f).is_file(), "{f} missing");
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 9);
    let acc: f64 = value(&text, "final_accuracy").parse().unwrap();
    assert_eq!(summary["final_accuracy"].as_f64(), Some(acc));
}

#[test]
fn bad_method_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(config("fedavg_minimal.toml")).unwrap().replace("kind = \"lora\"", "kind = \"lorax\"");
    let path = dir.path().join("bad.toml");
    fs::write(&path, text).unwrap();
    let out = dpfl(&["run", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("method.kind"), "{err}");
    assert!(err.contains("lorax"), "{err}");
}

#[test]
fn grid_runs_every_cell() {
    let dir = tempfile::tempdir().unwrap();
    let base = fs::read_to_string(config("fedavg_minimal.toml")).unwrap().replace("rounds = 30", "rounds = 3");
    let text = format!("{base}\n[sweep]\n\"method.rank\" = [1, 2, 4]\n\"federation.learning_rate\" = [0.05, 0.1, 0.2, 0.3]\n");
    let path = dir.path().join("grid.toml");
    fs::write(&path, text).unwrap();
    let out_dir = dir.path().join("grid");
    let out = dpfl(&["grid", path.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let mut reader = csv::Reader::from_path(out_dir.join("index.csv")).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    // swept keys in sorted order; the last one varies fastest
    assert_eq!(&header[..5], ["cell", "dir", "seed", "federation.learning_rate", "method.rank"]);
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 12);
    assert_eq!((&rows[0][3], &rows[0][4]), ("0.05", "1"));
    assert_eq!((&rows[1][3], &rows[1][4]), ("0.05", "2"));
    assert_eq!((&rows[3][3], &rows[3][4]), ("0.1", "1"));
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row[2].parse::<u64>().unwrap(), 3 + i as u64);
        assert_eq!(&row[5], "ok");
        assert!(out_dir.join(&row[1]).join("rounds.csv").is_file());
    }
}
