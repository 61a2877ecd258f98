use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
[sgkl]
num_kernels = 2
max_outer_iters = 3
restarts = 2

[sgkl.weights]
eta_s = 10.0
eta_x = 0.01
eta_w = 10.0
eta_y = 0.1
eta_c = 0.5

[sgkl.admm]
rho = 5.0

[synthetic]
num_kernels = 2
sparsity = 4
graphs = [{ nodes = 16, knn = 4, signals = 5 }, { nodes = 12, knn = 3, signals = 4 }]
"#;

fn sgkl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgkl"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = sgkl(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    dir
}

#[test]
fn generate_fit_reconstruct_infer() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["--config", "tiny.toml", "--out", "data", "generate"]);
    for f in [
        "graph_0.csv",
        "signals_1.csv",
        "clean_0.csv",
        "coefficients_1.csv",
        "psi_0.json",
    ] {
        assert!(d.join("data").join(f).exists(), "{f} missing");
    }
    let data = [
        "--graph",
        "data/graph_0.csv",
        "--signals",
        "data/signals_0.csv",
        "--graph",
        "data/graph_1.csv",
        "--signals",
        "data/signals_1.csv",
    ];
    let mut args = vec!["--config", "tiny.toml", "--out", "model", "fit"];
    args.extend(data);
    ok(d, &args);
    let trace = fs::read_to_string(d.join("model/trace.csv")).unwrap();
    assert!(trace.starts_with("outer,phase,objective,kernel_objective\n"));
    assert_eq!(trace.lines().count(), 1 + 1 + 2 * 3);
    let descent = fs::read_to_string(d.join("model/descent.csv")).unwrap();
    assert!(descent.starts_with("iter,f,grad_norm,step\n"));
    let psi: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("model/psi.json")).unwrap()).unwrap();
    assert_eq!(psi["mu"].as_array().unwrap().len(), 2);
    assert!(d.join("model/model_coefficients_1.csv").exists());

    let mut args = vec![
        "--out",
        "resumed",
        "fit",
        "--resume",
        "model/model.json",
        "--max-outer",
        "1",
    ];
    args.extend(data);
    ok(d, &args);
    let resumed = fs::read_to_string(d.join("resumed/trace.csv")).unwrap();
    assert!(resumed.starts_with(&trace));
    assert_eq!(resumed.lines().count(), trace.lines().count() + 2);

    let mut args = vec![
        "--out",
        "rec",
        "reconstruct",
        "--checkpoint",
        "model/model.json",
    ];
    args.extend(data);
    args.extend(["--truth", "data/clean_0.csv", "--truth", "data/clean_1.csv"]);
    let stdout = ok(d, &args);
    assert_eq!(stdout.matches("NMSE").count(), 2);
    let rec = fs::read_to_string(d.join("rec/reconstruction_1.csv")).unwrap();
    assert_eq!(rec.lines().count(), 12);
    assert!(rec
        .lines()
        .all(|l| l.split(',').count() == 4 && !l.split(',').any(str::is_empty)));

    let mut args = vec!["--out", "inf", "infer", "--checkpoint", "model/model.json"];
    args.extend(data);
    args.extend([
        "--test",
        "data/signals_1.csv",
        "--graph-index",
        "1",
        "--truth",
        "data/clean_1.csv",
    ]);
    let stdout = ok(d, &args);
    assert!(stdout.contains("NMSE"));
    assert!(d.join("inf/inferred.csv").exists());
    assert!(d.join("inf/inferred_coefficients.csv").exists());
}

#[test]
fn sweep_is_reproducible_and_reports_merge() {
    let dir = setup();
    let d = dir.path();
    let run = |out: &str, format: &str| {
        ok(
            d,
            &[
                "--config",
                "tiny.toml",
                "--out",
                out,
                "--format",
                format,
                "sweep",
                "--param",
                "snr",
                "--grid=-5,15",
                "--seeds",
                "0,1",
            ],
        );
    };
    run("a", "csv");
    run("b", "csv");
    run("c", "json");
    let a = fs::read(d.join("a/sweep_snr.csv")).unwrap();
    assert_eq!(a, fs::read(d.join("b/sweep_snr.csv")).unwrap());
    // 2 values x 2 seeds x 2 graphs runs, 2 x 2 aggregates
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 1 + 8 + 4);

    let stdout = ok(
        d,
        &[
            "--out",
            "merged",
            "report",
            "a/sweep_snr.csv",
            "c/sweep_snr.json",
        ],
    );
    assert_eq!(stdout.matches("over 4 runs").count(), 4);
    let merged = fs::read_to_string(d.join("merged/report.csv")).unwrap();
    assert_eq!(merged.lines().count(), 1 + 16 + 4);
}

#[test]
fn joint_study_writes_thresholds() {
    let dir = setup();
    let d = dir.path();
    let stdout = ok(
        d,
        &[
            "--config",
            "tiny.toml",
            "--out",
            "j",
            "joint-vs-individual",
            "--deltas",
            "0,0.3",
            "--ks",
            "3,5",
            "--seeds",
            "0",
        ],
    );
    assert_eq!(stdout.matches("threshold K").count(), 2);
    let report = fs::read_to_string(d.join("j/joint_vs_individual.csv")).unwrap();
    assert_eq!(
        report
            .lines()
            .filter(|l| l.starts_with("threshold,"))
            .count(),
        2
    );
}

#[test]
fn config_and_parse_errors_exit_2() {
    let dir = setup();
    let d = dir.path();
    fs::write(d.join("bad.json"), r#"{"sgkl": {"num_kernels": "four"}}"#).unwrap();
    fs::write(d.join("invalid.json"), r#"{"sgkl": {"num_kernels": 0}}"#).unwrap();
    fs::write(d.join("graph.csv"), "nodes=3\n0,1,1.0\n1,2\n").unwrap();
    fs::write(d.join("signals.csv"), "1,2\n3,4\n5,6\n").unwrap();
    let cases: [&[&str]; 6] = [
        &["--config", "bad.json", "generate"],
        &["--config", "invalid.json", "generate"],
        &["--config", "absent.toml", "generate"],
        &["fit", "--graph", "graph.csv", "--signals", "signals.csv"],
        &["fit", "--graph", "graph.csv"],
        &["sweep", "--param", "nope", "--grid", "1"],
    ];
    for args in cases {
        let out = sgkl(d, args);
        assert_eq!(
            out.status.code(),
            Some(2),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let out = sgkl(
        d,
        &["fit", "--graph", "graph.csv", "--signals", "signals.csv"],
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("graph.csv:3"));
}

#[test]
fn numerical_failure_exits_3_with_dump() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["--config", "tiny.toml", "--out", "data", "generate"]);
    let huge: String = (0..16)
        .map(|r| format!("{}e200,-{}e200,1e200\n", r + 1, r + 2))
        .collect();
    fs::write(d.join("huge.csv"), huge).unwrap();
    let out = sgkl(
        d,
        &[
            "--config",
            "tiny.toml",
            "--out",
            "fail",
            "fit",
            "--graph",
            "data/graph_0.csv",
            "--signals",
            "huge.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("diagnostic dump written to"), "{stderr}");
    let dump: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("fail/sgkl_failure.json")).unwrap())
            .unwrap();
    assert!(!dump["error"].as_str().unwrap().is_empty());
    assert_eq!(dump["config"]["sgkl"]["num_kernels"], 2);
}
