use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kairos::config::RunConfig;
use kairos::harness::Summary;
use kairos::simulator::parse_session_log;

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kairos")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn traces(root: &Path, count: usize) -> PathBuf {
    let out = root.join("traces");
    let spec = data_dir().join("suite_spec.toml");
    let o = run(&[
        "gen-traces",
        "--spec",
        spec.to_str().unwrap(),
        "--count",
        &count.to_string(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn help_lists_every_config_key() {
    let o = run(&["compare", "--help"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for key in RunConfig::default().leaf_keys() {
        assert!(text.contains(&key), "help lacks {key}");
    }
    assert!(text.contains("precedence"));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let out = out.to_str().unwrap();
    let dir = traces(tmp.path(), 2);
    let dir = dir.to_str().unwrap();

    // Usage errors.
    assert_eq!(code(&run(&["compare"])), 2);
    assert_eq!(code(&run(&["compare", "--traces", dir, "--out", out, "--set", "nope.key=1"])), 2);
    assert_eq!(code(&run(&["compare", "--traces", dir, "--out", out, "--set", "controller.alpha=x"])), 2);
    assert_eq!(code(&run(&["compare", "--traces", dir, "--out", out, "--workers", "0"])), 2);
    assert_eq!(code(&run(&["compare", "--traces", dir, "--out", out, "--controllers", "nope"])), 2);
    assert_eq!(code(&run(&["compare", "--traces", dir, "--out", out, "--controllers", "kairos"])), 2);
    // Data errors.
    let missing = tmp.path().join("missing");
    assert_eq!(code(&run(&["compare", "--traces", missing.to_str().unwrap(), "--out", out, "--controllers", "bola"])), 3);
    let bad = tmp.path().join("bad");
    std::fs::create_dir(&bad).unwrap();
    std::fs::write(bad.join("x.trace"), "0 1\nnot numbers\n").unwrap();
    assert_eq!(code(&run(&["compare", "--traces", bad.to_str().unwrap(), "--out", out, "--controllers", "bola"])), 3);
    let garbage = tmp.path().join("model.ckpt");
    std::fs::write(&garbage, "garbage").unwrap();
    let g = garbage.to_str().unwrap();
    assert_eq!(code(&run(&["compare", "--traces", dir, "--out", out, "--checkpoint", g])), 3);
    // Numerical failure: a step size this large drives the loss to overflow.
    let ds_out = tmp.path().join("ds");
    assert!(run(&["make-dataset", "--traces", dir, "--out", ds_out.to_str().unwrap()]).status.success());
    let ds = ds_out.join("dataset.json");
    let o = run(&[
        "train", "--dataset", ds.to_str().unwrap(), "--out", out, "--set", "train.lr=1e200", "--set", "train.epochs=2",
    ]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn config_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, "seed = 5\n[controller]\nalpha = 0.4\nbeta = 3.0\n").unwrap();
    let dir = traces(tmp.path(), 1);
    let out = tmp.path().join("o");
    let o = run(&[
        "compare", "--traces", dir.to_str().unwrap(), "--controllers", "bola", "--out", out.to_str().unwrap(),
        "--config", cfg.to_str().unwrap(), "--seed", "9", "--set", "controller.alpha=0.3",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("# resolved config\n"));
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("run_manifest.json")).unwrap()).unwrap();
    let resolved: RunConfig = serde_json::from_value(m["config"].clone()).unwrap();
    assert_eq!(resolved.seed, 9);
    assert_eq!(resolved.controller.alpha, 0.3);
    assert_eq!(resolved.controller.beta, 3.0);
    assert_eq!(resolved.controller.lookahead, RunConfig::default().controller.lookahead);
}

#[test]
fn report_is_recomputable_from_session_logs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = traces(tmp.path(), 3);
    let out = tmp.path().join("o");
    let o = run(&[
        "compare",
        "--traces",
        dir.to_str().unwrap(),
        "--controllers",
        "robust-hm-mpc,hm-mpc,bola,offline-optimal",
        "--out",
        out.to_str().unwrap(),
        "--set",
        "controller.mu=2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: Summary = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.mu, 2.0);
    for s in &summary.summaries {
        let mut totals = Vec::new();
        for t in &summary.traces {
            let p = out.join("sessions").join(&s.controller).join(format!("{t}.log"));
            let log = parse_session_log(&std::fs::read_to_string(&p).unwrap()).unwrap();
            assert_eq!((log.lambda, log.mu), (summary.lambda, summary.mu));
            totals.push(log.qoe());
        }
        let n = totals.len() as f64;
        let mean = |f: &dyn Fn(&kairos::harness::QoeBreakdown) -> f64| totals.iter().map(f).sum::<f64>() / n;
        assert!((mean(&|q| q.average) - s.mean_qoe).abs() < 1e-9, "{}", s.controller);
        assert!((mean(&|q| q.rebuffer_penalty) - s.rebuffer_penalty).abs() < 1e-9);
        assert!((mean(&|q| q.smoothness_penalty) - s.smoothness_penalty).abs() < 1e-9);
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("run_manifest.json")).unwrap()).unwrap();
    for a in manifest["artifacts"].as_array().unwrap() {
        let p = out.join(a["path"].as_str().unwrap());
        assert_eq!(std::fs::metadata(&p).unwrap().len(), a["bytes"].as_u64().unwrap());
    }
}
