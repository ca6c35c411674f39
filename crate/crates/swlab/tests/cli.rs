use std::path::Path;
use std::process::{Command, Output};

use swlab::table::Table;

fn swlab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_swlab"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("swlab starts")
}

fn read_table(path: &Path) -> Table {
    Table::from_csv_str("t", &std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn sweep_writes_tables_meta_and_passes_audit() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("phase");
    let res = swlab(
        &["cv-proba", "--n", "4", "--d", "2", "--p", "4,32", "--trials", "3", "--audit", "--plot"],
        &out,
    );
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let trials = read_table(&out.join("trials.csv"));
    assert_eq!(trials.rows.len(), 6);
    assert!(out.join("trials-summary.csv").exists());
    assert!(out.join("convergence.svg").exists());
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta["spec"]["kind"], "cv-proba");
    assert_eq!(meta["threshold_is_default"], true);
    assert!(String::from_utf8_lossy(&res.stdout).contains("audit: summaries match"));
}

#[test]
fn json_output_and_spec_files() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    std::fs::write(&spec, "kind = \"clt\"\np = [32]\nresamples = 50\noracle_samples = 1000\nformat = \"json\"\n").unwrap();
    let out = dir.path().join("clt");
    let res = swlab(&["clt", "--spec", spec.to_str().unwrap(), "--seed", "3"], &out);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let rows: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("trials.json")).unwrap()).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 50);
    assert_eq!(rows[0]["seed"], 3);

    let res = Command::new(env!("CARGO_BIN_EXE_swlab"))
        .args(["run", spec.to_str().unwrap(), "--out"])
        .arg(dir.path().join("again"))
        .output()
        .unwrap();
    assert!(res.status.success());
}

#[test]
fn bad_specs_and_missing_files_fail() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("bad.json");
    std::fs::write(&spec, r#"{"kind": "scaling", "trials": 0}"#).unwrap();
    let res = swlab(&["scaling", "--spec", spec.to_str().unwrap()], &dir.path().join("o"));
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("trials"));

    let res = swlab(&["bcd", "--z", "/nonexistent/z.csv", "--p", "4"], &dir.path().join("t.csv"));
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("/nonexistent/z.csv"));

    let res = swlab(&["clt", "--alpha", "-1"], &dir.path().join("o"));
    assert!(!res.status.success());
}

#[test]
fn trajectory_from_the_target_stays_put() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t");
    let res = swlab(
        &["trajectory", "--solver", "bcd", "--dataset", "sym2d", "--p", "3", "--start", "target"],
        &out,
    );
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let trials = read_table(&out.join("trials.csv"));
    assert_eq!(trials.floats("iters"), vec![1.0]);
    // One solve A^{-1} (A z_k) reproduces Z up to rounding.
    assert!(trials.floats("final_w2_over_d")[0] < 1e-28);
    assert!(trials.floats("path_length")[0] < 1e-14);
    let stable = trials.column("stable_cell").unwrap();
    assert_eq!(trials.rows[0][stable].to_string(), "true");
}

#[test]
fn single_run_commands_write_their_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let z = dir.path().join("z.csv");
    std::fs::write(&z, "x0,x1\n0,-1\n0,1\n").unwrap();
    let z = z.to_str().unwrap();

    let traj = dir.path().join("sgd.csv");
    let res = swlab(&["sgd", "--z", z, "--alpha", "0.5", "--max-iters", "50", "--seed", "2"], &traj);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(read_table(&traj).rows.len(), 51);
    assert!(dir.path().join("sgd.csv.json").exists());

    let energy = dir.path().join("e.json");
    let res = swlab(&["energy", "--y", z, "--z", z, "--p", "10"], &energy);
    assert!(res.status.success());
    let e: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&energy).unwrap()).unwrap();
    assert_eq!(e["value"], 0.0);

    let res = Command::new(env!("CARGO_BIN_EXE_swlab"))
        .args(["w2", "--y", z, "--z", z])
        .output()
        .unwrap();
    let w2: serde_json::Value = serde_json::from_slice(&res.stdout).unwrap();
    assert_eq!(w2["w2"], 0.0);
}
