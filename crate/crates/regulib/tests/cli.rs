//! End-to-end tests of the compiled binary: exit codes, output files,
//! determinism, and the override pipeline.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run_cli(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_regulib"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .output()
        .expect("binary launches")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("binary not killed by signal")
}

fn summary(dir: &Path) -> serde_json::Value {
    let text = fs::read_to_string(dir.join("summary.json")).expect("summary.json exists");
    serde_json::from_str(&text).expect("summary.json parses")
}

#[test]
fn run_writes_the_full_grid_and_a_complete_echo() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_cli(dir.path(), &["run", "--scenario", "harmonic1"]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));

    let csv = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "t,rho_1,w_1,w_2,z_1,e_1,xi_1,xi_2,theta_hat_1,X_1"
    );
    // 200 / 1e-3 steps plus the initial sample.
    assert_eq!(lines.count(), 200_001);

    let doc = summary(dir.path());
    assert_eq!(doc["scenario"], "harmonic1");
    assert_eq!(doc["metrics"]["regulated"], true);
    assert!(doc["analyses"].as_object().unwrap().is_empty());
    let params = doc["parameters"].as_object().unwrap();
    for key in [
        "rho", "w0", "z0", "e0", "xi0", "theta_hat0", "x0", "t_horizon", "h", "seed",
        "tol_e", "terminal_window", "divergence_bound", "flip_v_sign", "k", "lambda",
        "ell", "b", "d", "q_dim", "reduction",
    ] {
        assert!(params.contains_key(key), "echo is missing {key}");
    }
    assert_eq!(doc["parameters"]["k"], 20.0);
    assert!(doc["version"].as_str().unwrap().contains('.'));
}

#[test]
fn outputs_are_byte_deterministic() {
    let args = [
        "run",
        "--scenario",
        "harmonic1",
        "--set",
        "t_horizon=2.0",
        "--analyses",
        "pe,limit_set,decay",
    ];
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    assert_eq!(code(&run_cli(dir_a.path(), &args)), 0);
    assert_eq!(code(&run_cli(dir_b.path(), &args)), 0);
    for name in ["trajectory.csv", "summary.json"] {
        let a = fs::read(dir_a.path().join(name)).unwrap();
        let b = fs::read(dir_b.path().join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn unregulated_zero_gain_is_data_not_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_cli(
        dir.path(),
        &["run", "--scenario", "harmonic1", "--set", "k=0.0", "--set", "t_horizon=30.0"],
    );
    assert_eq!(code(&out), 0);
    let doc = summary(dir.path());
    assert_eq!(doc["metrics"]["regulated"], false);
    assert_eq!(doc["diverged"], serde_json::Value::Null);
    assert_eq!(doc["parameters"]["k"], 0.0);
}

#[test]
fn divergence_exits_with_the_documented_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_cli(
        dir.path(),
        &["run", "--scenario", "wrong-sign", "--set", "t_horizon=50.0"],
    );
    assert_eq!(code(&out), 3);
    let doc = summary(dir.path());
    assert!(doc["diverged"]["t"].as_f64().unwrap() > 0.0);
    assert!(doc["diverged"]["sup_norm"].as_f64().unwrap() > 1e6);
    // The trajectory stops at the guard breach, well short of the horizon.
    let csv = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert!(csv.lines().count() < 50_001);
}

#[test]
fn probe_settles_on_the_canonical_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_cli(dir.path(), &["probe", "k", "--scenario", "harmonic1"]);
    assert_eq!(code(&out), 0);
    let text = fs::read_to_string(dir.path().join("probe.json")).unwrap();
    let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    let probe = &doc["probe"];
    assert_eq!(probe["exhausted"], false);
    let trials = probe["trials"].as_array().unwrap();
    for (i, trial) in trials.iter().enumerate() {
        let expected = 0.01 * (1u64 << i) as f64;
        assert_eq!(trial["gain"].as_f64().unwrap(), expected, "ladder is not doubling");
    }
    let passing = probe["passing_gain"].as_f64().unwrap();
    assert_eq!(passing, trials.last().unwrap()["gain"].as_f64().unwrap());
    assert_eq!(trials.last().unwrap()["pass"], true);
    assert!(trials[..trials.len() - 1].iter().all(|t| t["pass"] == false));
}

#[test]
fn probe_exhausts_on_the_flipped_loop_regardless_of_workers() {
    let mut outputs = Vec::new();
    for threads in ["1", "4"] {
        let dir = tempfile::tempdir().unwrap();
        let out = Command::new(env!("CARGO_BIN_EXE_regulib"))
            .args(["probe", "k", "--scenario", "wrong-sign", "--out"])
            .arg(dir.path())
            .env("REGULIB_THREADS", threads)
            .output()
            .expect("binary launches");
        assert_eq!(code(&out), 4);
        outputs.push(fs::read(dir.path().join("probe.json")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1], "probe report depends on worker count");
    let doc: serde_json::Value = serde_json::from_slice(&outputs[0]).unwrap();
    assert_eq!(doc["probe"]["exhausted"], true);
    assert_eq!(doc["probe"]["passing_gain"], serde_json::Value::Null);
    assert_eq!(doc["probe"]["trials"].as_array().unwrap().len(), 12);
    assert!(doc["probe"]["last_divergence_time"].as_f64().unwrap() > 0.0);
}

#[test]
fn verify_passes_on_the_canonical_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_cli(dir.path(), &["verify", "--scenario", "harmonic1"]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("verify.json")).unwrap();
    let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(doc["pass"], true);
    for check in ["mato", "immersion", "pe", "graph"] {
        assert_eq!(doc["checks"][check]["pass"], true, "{check} failed");
    }
    assert!(doc["checks"]["mato"]["max_deviation"].as_f64().unwrap() <= 1e-12);
}

#[test]
fn verify_flags_missing_excitation() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_cli(dir.path(), &["verify", "--scenario", "no-pe"]);
    assert_eq!(code(&out), 5);
    let text = fs::read_to_string(dir.path().join("verify.json")).unwrap();
    let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(doc["pass"], false);
    assert_eq!(doc["failed"], serde_json::json!(["pe"]));
    assert_eq!(doc["checks"]["pe"]["pass"], false);
    assert_eq!(doc["checks"]["immersion"]["pass"], true);
    assert_eq!(doc["checks"]["mato"]["pass"], true);
    assert_eq!(doc["checks"]["graph"]["pass"], true);
}

#[test]
fn config_problems_use_the_config_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let cases: &[&[&str]] = &[
        &["run", "--scenario", "unknown-scenario"],
        &["run"],
        &["run", "--scenario", "harmonic1", "--set", "not_a_key=1.0"],
        &["run", "--scenario", "harmonic1", "--analyses", "spectral"],
        &["verify", "--scenario", "harmonic1", "--set", "b=[1.0,-2.0]"],
        &["probe", "q", "--scenario", "harmonic1"],
        &["probe", "g", "--scenario", "harmonic1"],
        &["run", "--scenario", "harmonic1", "--set", "rho=[5.0]"],
    ];
    for args in cases {
        let out = run_cli(dir.path(), args);
        assert_eq!(code(&out), 2, "expected config error for {args:?}");
        assert!(!out.stderr.is_empty(), "no message for {args:?}");
    }
}

#[test]
fn config_file_and_set_fragments_overlay_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("run.toml");
    fs::write(
        &config_path,
        "scenario = \"harmonic1\"\nt_horizon = 2.0\nk = 5.0\nanalyses = [\"pe\"]\n",
    )
    .unwrap();
    let out = run_cli(
        dir.path(),
        &["run", "--config", config_path.to_str().unwrap(), "--set", "k=2.0"],
    );
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let doc = summary(dir.path());
    assert_eq!(doc["parameters"]["k"], 2.0);
    assert_eq!(doc["parameters"]["t_horizon"], 2.0);
    assert!(doc["analyses"].as_object().unwrap().contains_key("pe"));
}
