use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use haphazard::streamgen::{load_csv, CsvOptions, HaphazardStream};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_haphazard"));
    c.env_remove("HAPHAZARD_RESULTS_DIR");
    c
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn records(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir.join("records"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| !p.to_string_lossy().ends_with(".timing.json"))
        .collect();
    v.sort();
    v
}

#[test]
fn simulate_full_availability_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.jsonl");
    ok(&run(bin().args(["simulate", "--p", "1.0", "--seed", "3", "--dataset"]).arg(data("wbc.csv")).arg("--out").arg(&out)));
    let stream = HaphazardStream::read_jsonl(&out).unwrap();
    let direct = load_csv(&data("wbc.csv"), &CsvOptions::default()).unwrap().to_stream().unwrap();
    assert_eq!(stream, direct);
}

#[test]
fn simulate_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    for path in [&a, &b] {
        ok(&run(bin().args(["simulate", "--p", "0.5", "--seed", "9", "--dataset"]).arg(data("ipd.csv")).arg("--out").arg(path)));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let c = dir.path().join("c.jsonl");
    ok(&run(bin().args(["simulate", "--p", "0.5", "--seed", "10", "--dataset"]).arg(data("ipd.csv")).arg("--out").arg(&c)));
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn bad_paths_and_usage_exit_2() {
    let out = run(bin().args(["simulate", "--p", "0.5", "--dataset", "/no/such/file.csv"]));
    assert_eq!(out.status.code(), Some(2));
    let out = run(bin().args(["run", "--model", "olvf", "--p", "0.5", "--dataset", "/no/such/file.csv"]));
    assert_eq!(out.status.code(), Some(2));
    let out = run(bin().args(["run", "--model", "svm", "--p", "0.5", "--dataset"]).arg(data("ipd.csv")));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("auxdrop"));
    let out = run(bin().args(["simulate", "--p", "1.5", "--dataset"]).arg(data("ipd.csv")));
    assert_eq!(out.status.code(), Some(2));
    let out = run(bin().args(["frobnicate"]));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_writes_one_record_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let cmd = |out: &Path| {
        let mut c = bin();
        c.args(["run", "--model", "olvf", "--p", "0.75", "--seeds", "0", "--dataset"]).arg(data("ipd.csv")).arg("--out").arg(out);
        c
    };
    ok(&run(&mut cmd(dir.path())));
    let recs = records(dir.path());
    assert_eq!(recs.len(), 1);
    let first = fs::read(&recs[0]).unwrap();
    ok(&run(&mut cmd(dir.path())));
    assert_eq!(records(dir.path()).len(), 1);
    assert_eq!(fs::read(&recs[0]).unwrap(), first);
}

#[test]
fn results_dir_env_overrides_out() {
    let dir = tempfile::tempdir().unwrap();
    let env_dir = dir.path().join("env");
    let flag_dir = dir.path().join("flag");
    ok(&run(bin()
        .env("HAPHAZARD_RESULTS_DIR", &env_dir)
        .args(["run", "--model", "nb3", "--p", "0.5", "--dataset"])
        .arg(data("wbc.csv"))
        .arg("--out")
        .arg(&flag_dir)));
    assert_eq!(records(&env_dir).len(), 1);
    assert!(!flag_dir.exists());
}

#[test]
fn report_for_one_model_wins_every_cell() {
    let dir = tempfile::tempdir().unwrap();
    ok(&run(bin()
        .args(["run", "--model", "olvf", "--p", "0.25,0.5,0.75", "--dataset"])
        .arg(data("wbc.csv"))
        .arg("--out")
        .arg(dir.path())));
    ok(&run(bin().args(["report", "--out"]).arg(dir.path())));
    let csv = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(json["win_counts"]["olvf"], 3);

    let before = fs::read(dir.path().join("summary.json")).unwrap();
    ok(&run(bin().args(["report", "--out"]).arg(dir.path())));
    assert_eq!(fs::read(dir.path().join("summary.json")).unwrap(), before);
}

#[test]
fn stored_stream_matches_masked_run() {
    let dir = tempfile::tempdir().unwrap();
    let stream = dir.path().join("ipd.jsonl");
    ok(&run(bin().args(["simulate", "--p", "0.5", "--seed", "4", "--dataset"]).arg(data("ipd.csv")).arg("--out").arg(&stream)));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&run(bin().args(["run", "--model", "nb3", "--p", "real", "--loader", "stream", "--dataset"]).arg(&stream).arg("--out").arg(&a)));
    ok(&run(bin()
        .args(["run", "--model", "nb3", "--p", "0.5", "--mask-seed", "4", "--dataset"])
        .arg(data("ipd.csv"))
        .arg("--out")
        .arg(&b)));
    let read = |d: &Path| -> serde_json::Value {
        serde_json::from_str(&fs::read_to_string(&records(d)[0]).unwrap()).unwrap()
    };
    assert_eq!(read(&a)["runs"], read(&b)["runs"]);
}

#[test]
fn grid_writes_reusable_config() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("grid.toml");
    fs::write(&grid, "[olvf]\nC = [0.01, 1.0]\nB = [0.5, 1.0]\n").unwrap();
    let out = run(bin()
        .args(["grid", "--model", "olvf", "--dataset"])
        .arg(data("ipd.csv"))
        .arg("--grid")
        .arg(&grid)
        .arg("--out")
        .arg(dir.path()));
    ok(&out);
    let best = fs::read_dir(dir.path().join("best")).unwrap().next().unwrap().unwrap().path();
    ok(&run(bin()
        .args(["run", "--model", "olvf", "--p", "0.25", "--dataset"])
        .arg(data("ipd.csv"))
        .arg("--config")
        .arg(&best)
        .arg("--out")
        .arg(dir.path())));
    let cells: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(fs::read_dir(dir.path().join("grid")).unwrap().next().unwrap().unwrap().path()).unwrap(),
    )
    .unwrap();
    assert_eq!(cells["cells"].as_array().unwrap().len(), 4);
}

#[test]
fn carbon_reproduces_nb3_footprint() {
    let profile = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../profiles/dgx128.json");
    let out = run(bin().args(["carbon", "--time", "9579.05", "--profile"]).arg(profile));
    ok(&out);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let kg = v["carbon_kg"].as_f64().unwrap();
    let kwh = v["energy_kwh"].as_f64().unwrap();
    assert!((kwh - 8.5).abs() / 8.5 < 0.15, "{kwh}");
    assert!((kg - 0.06).abs() / 0.06 < 0.15, "{kg}");
}
