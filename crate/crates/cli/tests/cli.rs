use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn tmx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tmx"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("failed to launch tmx")
}

fn ok(args: &[&str]) {
    let out = tmx(args);
    assert!(out.status.success(), "tmx {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn code(args: &[&str]) -> i32 {
    tmx(args).status.code().expect("terminated by signal")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every file below `root`, keyed by relative path.
fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// Compares two snapshots, skipping the manifests that record their own
/// output directory.
fn assert_same(a: &BTreeMap<PathBuf, Vec<u8>>, b: &BTreeMap<PathBuf, Vec<u8>>) {
    let manifest = |p: &PathBuf| p.ends_with("config.json") || p.ends_with("run.json");
    let keys = |m: &BTreeMap<PathBuf, Vec<u8>>| m.keys().cloned().collect::<Vec<_>>();
    assert_eq!(keys(a), keys(b));
    let differing: Vec<&PathBuf> = a.iter().filter(|(k, v)| !manifest(k) && b[*k] != **v).map(|(k, _)| k).collect();
    assert!(differing.is_empty(), "files differ: {differing:?}");
}

fn gen_small(dir: &Path, sigma: &str) {
    ok(&["gen", "--w", "2", "--s", "0.5", "--m", "2000", "--sigma", sigma, "--seed", "7", "--out", s(dir)]);
}

#[test]
fn gen_is_byte_identical_and_metadata_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["gen", "--w", "4", "--s", "0.2", "--m", "10000", "--sigma", "0", "--seed", "1", "--out", s(&a)]);
    ok(&["gen", "--w", "4", "--s", "0.2", "--m", "10000", "--sigma", "0", "--seed", "1", "--out", s(&b)]);
    assert_same(&snapshot(&a), &snapshot(&b));
    let meta: serde_json::Value = serde_json::from_slice(&fs::read(a.join("dataset.json")).unwrap()).unwrap();
    assert_eq!(meta["w"], 4);
    assert_eq!(meta["M"], 10000);
    assert_eq!(meta["seed"], 1);
    assert_eq!(meta["shifted"], false);
    let rows = fs::read_to_string(a.join("dataset.csv")).unwrap();
    assert_eq!(rows.lines().count(), 10000);
    assert_eq!(rows.lines().next().unwrap().split(',').count(), 32);
}

#[test]
fn usage_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&["gen", "--w", "2", "--s", "0.01", "--out", s(&tmp.path().join("x"))]), 1);
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["validate", s(&tmp.path().join("missing"))]), 1);
    assert_eq!(code(&["infer", "--out", s(&tmp.path().join("y"))]), 1);
    assert_eq!(code(&["infer", "--dataset", s(tmp.path()), "--variant", "sideways"]), 1);
    assert_eq!(code(&["--help"]), 0);
}

#[test]
fn degenerate_model_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, run) = (tmp.path().join("data"), tmp.path().join("run"));
    gen_small(&data, "0.05");
    ok(&["infer", "--dataset", s(&data), "--criteria", "BIC", "--out", s(&run)]);
    // flip the sign of an output precision in the saved model
    let path = run.join("direct/selected/BIC.csv");
    let text = fs::read_to_string(&path).unwrap();
    let mut rows: Vec<Vec<String>> = text.lines().map(|l| l.split(',').map(String::from).collect()).collect();
    let v: f64 = rows[5][5].parse().unwrap();
    rows[5][5] = format!("{:.16e}", -v);
    let text: Vec<String> = rows.iter().map(|r| r.join(",")).collect();
    fs::write(&path, text.join("\n")).unwrap();
    assert_eq!(code(&["validate", s(&run)]), 2);
}

#[test]
fn infer_outputs_are_deterministic_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_small(&data, "0.05");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["--threads", "1", "infer", "--dataset", s(&data), "--direction", "both", "--out", s(&a)]);
    ok(&["--threads", "4", "infer", "--dataset", s(&data), "--direction", "both", "--out", s(&b)]);
    ok(&["validate", s(&a)]);
    ok(&["validate", s(&b)]);
    assert_same(&snapshot(&a), &snapshot(&b));

    let header = fs::read_to_string(a.join("direct/trajectory.csv")).unwrap();
    assert_eq!(header.lines().next().unwrap(), "step,K,k,L,TIC,AIC,AICc,BIC");
    for c in ["TIC", "AIC", "AICc", "BIC"] {
        for ext in ["csv", "mask.csv", "json"] {
            assert!(a.join(format!("inverse/selected/{c}.{ext}")).exists());
        }
    }
}

#[test]
fn emitted_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_small(&data, "0.02");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["infer", "--dataset", s(&data), "--variant", "symunit", "--criteria", "AIC,BIC", "--out", s(&a)]);
    ok(&["--config", s(&a.join("config.json")), "--out", s(&b), "infer"]);
    assert_same(&snapshot(&a.join("direct")), &snapshot(&b.join("direct")));
    assert!(!b.join("direct/selected/TIC.csv").exists());
}

#[test]
fn interrupted_run_resumes_to_identical_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_small(&data, "0.05");
    let run = tmp.path().join("run");
    ok(&["infer", "--dataset", s(&data), "--out", s(&run)]);
    let full = snapshot(&run);

    // drop the tail of the checkpoint and every final output
    let ck = run.join("direct/checkpoint");
    let steps = fs::read_dir(&ck).unwrap().filter(|e| {
        let name = e.as_ref().unwrap().file_name();
        name.to_str().unwrap().starts_with("step_") && name.to_str().unwrap().ends_with(".json")
    });
    let total = steps.count();
    assert!(total > 6);
    for step in 5..total {
        for ext in ["csv", "mask.csv", "json"] {
            fs::remove_file(ck.join(format!("step_{step:04}.{ext}"))).unwrap();
        }
    }
    fs::remove_dir_all(run.join("direct/selected")).unwrap();
    fs::remove_file(run.join("direct/trajectory.csv")).unwrap();
    fs::remove_file(run.join("direct/summary.json")).unwrap();

    ok(&["infer", "--dataset", s(&data), "--out", s(&run)]);
    assert_same(&snapshot(&run), &full);
}

#[test]
fn sweep_emits_one_block_per_noise_level() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sweep");
    ok(&[
        "sweep", "--w", "2", "--s", "0.5", "--m", "2000", "--grid", "0,0.1,0.2", "--direction", "both", "--seed", "3",
        "--out", s(&out),
    ]);
    let text = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "sigma,step,K,L,TIC,AIC,AICc,BIC");
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|c| c.parse().unwrap()).collect()).collect();
    let mut sigmas: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    sigmas.dedup();
    assert_eq!(sigmas, vec![0.0, 0.1, 0.2]);
    let full_l = |sigma: f64| rows.iter().find(|r| r[0] == sigma && r[1] == 0.0).unwrap()[3];
    assert!(full_l(0.0) >= full_l(0.1));
    assert!(out.join("sweep_inverse.csv").exists());

    for f in ["bounds", "temperature", "recovery", "validation", "pseudo_unity"] {
        let curve = fs::read_to_string(out.join("curves").join(format!("{f}.csv"))).unwrap();
        assert!(curve.lines().count() > 1, "{f} is empty");
    }
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
    let reports = summary.as_array().unwrap();
    assert_eq!(reports.len(), 3);
    let bic = &reports[0]["criteria"]["BIC"];
    for field in ["theta", "sigma_est", "q_error", "t_correlation", "row_sums", "pseudo_unity_sorted"] {
        assert!(bic["direct"].get(field).is_some(), "missing {field}");
    }
    for curve in ["focusing_direct", "focusing_inverted", "imaging_inverted", "imaging_direct"] {
        assert!(bic["validation"].get(curve).is_some(), "missing {curve}");
    }

    // a rerun of the sweep is byte-identical
    let again = tmp.path().join("again");
    ok(&["--config", s(&out.join("config.json")), "--out", s(&again), "sweep"]);
    assert_same(&snapshot(&out), &snapshot(&again));
}

#[test]
fn image_reconstruction_writes_grids() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, run) = (tmp.path().join("data"), tmp.path().join("run"));
    gen_small(&data, "0");
    ok(&["infer", "--dataset", s(&data), "--direction", "both", "--criteria", "BIC", "--out", s(&run)]);
    let img = tmp.path().join("img.csv");
    fs::write(&img, "0,1\n1,0.5\n").unwrap();
    ok(&["validate", s(&run), "--image", s(&img)]);
    let grid = fs::read_to_string(run.join("image_BIC_direct.csv")).unwrap();
    assert_eq!(grid.lines().count(), 2);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(run.join("report.json")).unwrap()).unwrap();
    assert!(report["criteria"]["BIC"]["image"]["correlation_direct"].as_f64().unwrap() > 0.9);
}
