use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn nabqr(args: &[&str], out_dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nabqr"))
        .args(args)
        .env("NABQR_OUTPUT_DIR", out_dir)
        .output()
        .expect("binary runs")
}

fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn data_rows(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn no_arguments_prints_usage_and_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = nabqr(&[], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn unknown_subcommand_and_flag_fail_with_usage() {
    let dir = tempfile::tempdir().unwrap();
    let o = nabqr(&["forecast"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));
    let o = nabqr(&["simulate", "--seed", "1", "--out", "x.csv", "--bogus"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn help_exits_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let o = nabqr(&["--help"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    for sub in ["simulate", "train", "taqr", "score", "pipeline", "plot"] {
        assert!(text.contains(sub), "{sub}");
    }
}

#[test]
fn simulate_writes_requested_horizon() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim.csv");
    let o = nabqr(
        &[
            "simulate",
            "--horizon",
            "250",
            "--seed",
            "7",
            "--out",
            out.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(data_rows(&out), 250);
    let header = std::fs::read_to_string(&out)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string();
    assert!(header.starts_with("timestamp,y,"));
}

#[test]
fn validation_errors_exit_1_and_runtime_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "train_frac = 1.5\n").unwrap();
    let sim = dir.path().join("sim.csv");
    let s = sim.to_str().unwrap();
    let o = nabqr(&["simulate", "--horizon", "80", "--out", s], dir.path());
    assert_eq!(o.status.code(), Some(1), "seed is required");
    let o = nabqr(&["simulate", "--horizon", "80", "--seed", "1", "--out", s], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));

    let model = dir.path().join("m.json");
    let m = model.to_str().unwrap();
    let o = nabqr(
        &["train", "--config", cfg.to_str().unwrap(), "--data", s, "--model", m],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));

    let o = nabqr(&["taqr", "--taus", "0.5,0.5", "--data", s, "--out", m], dir.path());
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));

    let missing = dir.path().join("missing.csv");
    let o = nabqr(
        &["train", "--data", missing.to_str().unwrap(), "--model", m],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn stage_subcommands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let run = |args: &[&str]| {
        let o = nabqr(args, dir.path());
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
        o
    };
    run(&[
        "simulate",
        "--horizon",
        "300",
        "--ensembles",
        "4",
        "--seed",
        "3",
        "--out",
        &p("sim.csv"),
    ]);

    let taus = "0.1,0.5,0.9";
    run(&[
        "train",
        "--data",
        &p("sim.csv"),
        "--taus",
        taus,
        "--timesteps",
        "6",
        "--epochs",
        "3",
        "--hidden",
        "4",
        "--model",
        &p("model.json"),
        "--corrected",
        &p("corrected.csv"),
    ]);
    assert!(Path::new(&p("model.json")).is_file());
    assert_eq!(data_rows(Path::new(&p("model.loss.csv"))), 4);
    assert_eq!(data_rows(Path::new(&p("corrected.csv"))), 300 - 6);

    run(&[
        "taqr",
        "--data",
        &p("sim.csv"),
        "--taus",
        taus,
        "--n-init",
        "60",
        "--out",
        &p("q_hat.csv"),
        "--beta-dir",
        &p("beta"),
    ]);
    assert_eq!(data_rows(Path::new(&p("q_hat.csv"))), 240);
    assert!(Path::new(&p("beta/beta_tau_0.50.csv")).is_file());

    let o = run(&["score", "--data", &p("sim.csv"), "--forecast", &p("q_hat.csv")]);
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["n_effective"], 240);
    assert!(report["mae"].as_f64().unwrap() > 0.0);
    run(&[
        "score",
        "--data",
        &p("sim.csv"),
        "--forecast",
        &p("q_hat.csv"),
        "--ensemble",
        "data",
        "--out",
        &p("scores.json"),
    ]);
    assert!(Path::new(&p("scores.json")).is_file());

    run(&[
        "plot",
        "--data",
        &p("sim.csv"),
        "--forecast",
        &p("q_hat.csv"),
        "--out",
        &p("chart.svg"),
    ]);
    let svg = std::fs::read_to_string(p("chart.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    assert_eq!(data_rows(Path::new(&p("chart.csv"))), 240);
}

#[test]
fn pipeline_with_default_config_reproduces_golden_scores() {
    let dir = tempfile::tempdir().unwrap();
    let config = repo_root().join("default.toml");
    let o = nabqr(
        &["pipeline", "--config", config.to_str().unwrap(), "--seed", "42"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for name in [
        "corrected_ensembles.csv",
        "q_hat.csv",
        "scores.json",
        "fan_chart.svg",
        "stage_log.json",
    ] {
        assert!(dir.path().join(name).is_file(), "{name}");
    }
    let actual: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("scores.json")).unwrap()).unwrap();
    let golden = repo_root().join("crates/core/tests/golden/pipeline_seed42_scores.json");
    let expected: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(golden).unwrap()).unwrap();
    for key in ["mae", "qs", "crps", "vars"] {
        let (a, b) = (actual[key].as_f64().unwrap(), expected[key].as_f64().unwrap());
        assert!((a - b).abs() <= 1e-9 * b.abs(), "{key}: {a} vs {b}");
    }
    assert_eq!(actual["n_effective"], expected["n_effective"]);
}
