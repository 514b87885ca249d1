use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_tsvflab"));
    c.env_remove("TSVFLAB_THREADS");
    c
}

fn experiment(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/experiments").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn run_experiment(name: &str, out: &Path, extra: &[&str]) -> Output {
    let exp = experiment(name);
    let mut args = vec!["run", "--experiment", exp.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn reruns_are_byte_identical_at_any_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert!(run_experiment("double_mzi.exp", &a, &["--threads", "1"]).status.success());
    assert!(run_experiment("double_mzi.exp", &b, &["--threads", "1"]).status.success());
    let status = bin()
        .env("TSVFLAB_THREADS", "8")
        .args(["run", "--experiment", experiment("double_mzi.exp").to_str().unwrap(), "--out", c.to_str().unwrap()])
        .status()
        .unwrap();
    assert!(status.success());
    let ta = fs::read(a.join("trials.csv")).unwrap();
    assert_eq!(ta, fs::read(b.join("trials.csv")).unwrap());
    assert_eq!(ta, fs::read(c.join("trials.csv")).unwrap());
    assert_eq!(fs::read(a.join("summary.json")).unwrap(), fs::read(c.join("summary.json")).unwrap());
    assert_eq!(String::from_utf8_lossy(&ta).lines().count(), 100_001);
}

#[test]
fn manifest_lists_hashed_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment("double_mzi.exp", dir.path(), &["--trials", "500", "--seed", "9"]);
    assert!(out.status.success());
    let m: Value = serde_json::from_slice(&fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["master_seed"], 9);
    assert_eq!(m["parameters"]["trials"], 500);
    assert_eq!(m["experiment"]["sha256"].as_str().unwrap().len(), 64);
    let files: Vec<&str> = m["outputs"].as_array().unwrap().iter().map(|o| o["file"].as_str().unwrap()).collect();
    assert_eq!(files, ["trials.csv", "summary.json"]);
    let leftovers = fs::read_dir(dir.path()).unwrap().filter(|e| {
        e.as_ref().unwrap().file_name().to_string_lossy().ends_with(".tmp")
    });
    assert_eq!(leftovers.count(), 0);
}

#[test]
fn output_schemas_are_pinned() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_experiment("blocked.exp", dir.path(), &["--trials", "2000"]).status.success());
    let csv = fs::read_to_string(dir.path().join("trials.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "trial_id,initial_port,final_port,absorbed,reading_W1,reading_W2,seed");
    let s: Value = serde_json::from_slice(&fs::read(dir.path().join("summary.json")).unwrap()).unwrap();
    let mut keys: Vec<&String> = s.as_object().unwrap().keys().collect();
    keys.sort();
    assert_eq!(
        keys,
        [
            "absorbed_count",
            "circuit",
            "final_port_counts",
            "fingerprint",
            "leakage_fraction",
            "master_seed",
            "oracle",
            "probes",
            "trials"
        ]
    );
    assert!(s["absorbed_count"].as_u64().unwrap() > 0);
}

#[test]
fn cycle_mode_writes_pass_table() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_experiment("single_photon.exp", dir.path(), &[]).status.success());
    let csv = fs::read_to_string(dir.path().join("cycles.csv")).unwrap();
    assert_eq!(csv.lines().count(), 10_001);
    let s: Value = serde_json::from_slice(&fs::read(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(s["passes"], 10_000);
    assert!(s["match_probability"]["fraction"].is_number());
}

#[test]
fn oracle_reports_weak_values() {
    let v = json(&run(&["oracle", "--experiment", experiment("double_mzi.exp").to_str().unwrap(), "--post", "Rf"]));
    let w = &v["stages"][0]["weak_values"];
    assert!((w[0]["re"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!(w[1]["re"].as_f64().unwrap().abs() < 1e-12);

    let none = json(&run(&["oracle", "--experiment", experiment("double_mzi.exp").to_str().unwrap()]));
    let shift = &none["probes"][0]["pointer_shift"];
    assert!((shift["limit"].as_f64().unwrap() - 0.05).abs() < 1e-12);

    let blocked = json(&run(&["oracle", "--experiment", experiment("blocked.exp").to_str().unwrap(), "--post", "Rf"]));
    for k in 0..2 {
        assert!((blocked["stages"][0]["weak_values"][k]["re"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    }
    assert!(none["leakage_probability"].as_f64().unwrap() > 0.0);
}

#[test]
fn orthogonal_post_selection_is_reported_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("straight.exp");
    fs::write(
        &path,
        "experiment straight {\n  source a0;\n  beamsplitter S (a0, b0) -> (a1, b1) theta 0;\n  probe P on a1 strength 0.1;\n  beamsplitter T (a1, b1) -> (a2, b2);\n  detect (a2, b2);\n}\n",
    )
    .unwrap();
    // T mixes, so post-selecting either exit is fine; straight-through S makes b1 empty.
    let ok = json(&run(&["oracle", "--experiment", path.to_str().unwrap(), "--post", "a2"]));
    assert!(ok["stages"][0]["weak_values"].is_array());

    let path2 = dir.path().join("orth.exp");
    fs::write(
        &path2,
        "experiment orth {\n  source a0;\n  beamsplitter S (a0, b0) -> (a1, b1) theta 0;\n  probe P on a1 strength 0.1;\n  detect (a1, b1);\n}\n",
    )
    .unwrap();
    let v = json(&run(&["oracle", "--experiment", path2.to_str().unwrap(), "--post", "b1"]));
    assert!(v["probes"][0]["weak_value"]["undefined"].is_string(), "{v}");
}

#[test]
fn slicing_a_recorded_run() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_experiment("double_mzi.exp", dir.path(), &[]).status.success());
    let trials = dir.path().join("trials.csv");
    let exp = experiment("double_mzi.exp");
    let plot = dir.path().join("plot.csv");
    let v = json(&run(&[
        "slice",
        "--input",
        trials.to_str().unwrap(),
        "--by",
        "final",
        "--experiment",
        exp.to_str().unwrap(),
        "--emit-plot-data",
        plot.to_str().unwrap(),
    ]));
    let slices = v["report"]["slices"].as_array().unwrap();
    assert_eq!(slices.len(), 2);
    let w1 = |k: usize| &slices[k]["probes"][0];
    assert!((w1(1)["mean"].as_f64().unwrap() - 0.1).abs() < 4.0 * w1(1)["se"].as_f64().unwrap());
    assert!(w1(0)["mean"].as_f64().unwrap().abs() < 4.0 * w1(0)["se"].as_f64().unwrap());
    assert!(v["report"]["contrasts"][0]["z"].as_f64().unwrap() > 10.0);
    assert!(w1(0)["oracle_mean"].is_number());
    let plot = fs::read_to_string(plot).unwrap();
    assert_eq!(plot.lines().next().unwrap(), "slice,probe,count,mean,se");
    assert_eq!(plot.lines().count(), 5);

    let sub = json(&run(&["slice", "--input", trials.to_str().unwrap(), "--subsample", "0.1", "--subsample-seed", "4"]));
    assert_eq!(sub["subsample"]["retained"], 10_000);
    assert_eq!(sub["subsample"]["seed"], 4);

    let acin = json(&run(&["slice", "--input", trials.to_str().unwrap(), "--ac-in", "--experiment", exp.to_str().unwrap()]));
    assert!(acin["ac_in"]["verdict"].is_string());
    assert!(acin["ac_in"]["collapsed_minority_rejected"].is_boolean());

    let by_initial = json(&run(&["slice", "--input", trials.to_str().unwrap(), "--by", "initial"]));
    assert_eq!(by_initial["report"]["slices"].as_array().unwrap().len(), 1);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.exp");
    fs::write(&bad, "experiment e {\n  source L0;\n  beamsplitter B (L0, R0) -> (a, b);\n  probe W on Lx strength 1;\n  detect (a, b);\n}\n").unwrap();
    let out = run_experiment_path(&bad, &dir.path().join("o"));
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("4:14") && err.contains("Lx"), "{err}");

    let missing = run_experiment_path(&dir.path().join("nope.exp"), &dir.path().join("o"));
    assert_eq!(missing.status.code(), Some(2));

    let csv = dir.path().join("t.csv");
    fs::write(&csv, "trial_id,initial_port,final_port,absorbed,reading_W1,seed\n0,L0,Rf,maybe,0.1,3\n").unwrap();
    let out = run(&["slice", "--input", csv.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("row 2") && err.contains("absorbed"), "{err}");

    assert_eq!(run(&["slice", "--input", dir.path().join("none.csv").to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

fn run_experiment_path(exp: &Path, out: &Path) -> Output {
    run(&["run", "--experiment", exp.to_str().unwrap(), "--out", out.to_str().unwrap()])
}
