//! End-to-end checks of the binary: reports, exit codes, and the
//! deterministic-output contract.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mpcs() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mpcs"))
}

fn run(args: &[&str]) -> Output {
    mpcs().args(args).output().expect("binary runs")
}

fn stdout_str(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("cfg.toml");
    fs::write(
        &path,
        "k = 2\nt = 10\nrelease_factor = 0.5\nrelease_list = [[0, 1]]\n",
    )
    .unwrap();
    path
}

/// The worked single-sample dump: y = 0, probs [0.7, 0.2, 0.1].
fn write_traced_dump(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("dump.csv");
    fs::write(
        &path,
        "#c=3,tag=demo,epoch=0\n0,0,7.0e-1,2.0e-1,1.0e-1\n",
    )
    .unwrap();
    path
}

#[test]
fn evaluate_reports_the_traced_score() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let dump = write_traced_dump(dir.path());

    let out = run(&[
        "evaluate",
        dump.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_str(&stdout_str(&out)).unwrap();
    let mpcs_value = report["mpcs"].as_f64().unwrap();
    assert!((mpcs_value - 0.251314).abs() < 1e-6, "{mpcs_value}");
    assert_eq!(report["accuracy"].as_f64().unwrap(), 1.0);
    assert_eq!(report["dangerous_count"].as_u64().unwrap(), 0);

    // csv mirror, one metric per row
    let out = run(&[
        "evaluate",
        dump.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--format",
        "csv",
    ]);
    assert!(out.status.success());
    let text = stdout_str(&out);
    assert!(text.starts_with("metric,value\n"));
    assert!(text.lines().any(|l| l.starts_with("mpcs,0.2513144")));
}

#[test]
fn evaluate_of_perfect_dump_is_clean() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let dump = dir.path().join("perfect.csv");
    fs::write(
        &dump,
        "#c=3,tag=p,epoch=0\n0,0,1.0,0.0,0.0\n1,2,0.0,0.0,1.0\n",
    )
    .unwrap();
    let out = run(&[
        "evaluate",
        dump.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_str(&stdout_str(&out)).unwrap();
    assert_eq!(report["mpcs"].as_f64().unwrap(), 0.0);
    assert_eq!(report["accuracy"].as_f64().unwrap(), 1.0);
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());

    // unreadable file: io
    let out = run(&[
        "evaluate",
        dir.path().join("nope.csv").to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));

    // config rules name labels beyond the dump's class count: validation
    let wide_cfg = dir.path().join("wide.toml");
    fs::write(
        &wide_cfg,
        "k = 2\nt = 10\nrelease_factor = 0.5\nrelease_list = [[0, 7]]\n",
    )
    .unwrap();
    let dump = write_traced_dump(dir.path());
    let out = run(&[
        "evaluate",
        dump.to_str().unwrap(),
        "--config",
        wide_cfg.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));

    // malformed dump row: validation, with the line named
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "#c=3,tag=x,epoch=0\n0,0,0.5,0.5\n").unwrap();
    let out = run(&[
        "evaluate",
        bad.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(":2"));

    // divergent training: numeric exit, with completed checkpoints retained
    let diverge_dir = dir.path().join("diverge");
    let out = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        diverge_dir.to_str().unwrap(),
        "--synthetic",
        "--per-class",
        "30",
        "--epochs",
        "40",
        "--lr",
        "1e12",
        "--optimizer",
        "sgd",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(diverge_dir.join("epoch_000.csv").exists());
    assert!(diverge_dir.join("train_log.csv").exists());

    // zero epochs: usage/validation
    let out = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("zero").to_str().unwrap(),
        "--synthetic",
        "--epochs",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

fn train_small(dir: &Path, out_name: &str, extra: &[&str]) -> std::path::PathBuf {
    let cfg = write_config(dir);
    let out_dir = dir.join(out_name);
    let mut args = vec![
        "train".to_string(),
        "--config".into(),
        cfg.to_str().unwrap().into(),
        "--out".into(),
        out_dir.to_str().unwrap().into(),
        "--synthetic".into(),
        "--per-class".into(),
        "40".into(),
        "--noise".into(),
        "1.2".into(),
        "--confusable".into(),
        "0:1,1:0".into(),
        "--epochs".into(),
        "6".into(),
        "--seed".into(),
        "5".into(),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    let out = mpcs().args(&args).output().unwrap();
    assert!(
        out.status.success(),
        "train failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out_dir
}

#[test]
fn train_writes_dumps_log_and_similarity() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = train_small(dir.path(), "run", &[]);

    for epoch in 0..6 {
        assert!(out_dir.join(format!("epoch_{epoch:03}.csv")).exists());
    }
    let log = fs::read_to_string(out_dir.join("train_log.csv")).unwrap();
    assert!(log.starts_with("epoch,lr,ce,mpcs,accuracy,dangerous_count\n"));
    assert_eq!(log.lines().count(), 7);

    let similarity: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("similarity.json")).unwrap())
            .unwrap();
    for metric in ["accuracy", "f1", "mcc", "ms", "ce"] {
        assert!(similarity.get(metric).is_some(), "{metric} missing");
    }
}

#[test]
fn training_outputs_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let a = train_small(dir.path(), "a", &[]);
    let b = train_small(dir.path(), "b", &[]);
    for name in ["epoch_000.csv", "epoch_005.csv", "train_log.csv", "similarity.json"] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name} differs"
        );
    }
}

#[test]
fn modulated_lr_never_exceeds_the_base_rate() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = train_small(dir.path(), "mod", &["--modulate", "on", "--lr", "0.01"]);
    let log = fs::read_to_string(out_dir.join("train_log.csv")).unwrap();
    for line in log.lines().skip(1) {
        let lr: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(lr <= 0.01 + 1e-15, "lr {lr} above base");
        assert!(lr >= 0.001 - 1e-15, "lr {lr} below floor");
    }
}

#[test]
fn compare_selects_and_reports_tradeoffs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let dumps = dir.path().join("dumps");
    fs::create_dir(&dumps).unwrap();
    // epoch 0: higher accuracy but a dangerous error (0 -> 2);
    // epoch 1: an extra, released error (0 -> 1) instead
    fs::write(
        dumps.join("epoch_000.csv"),
        "#c=3,tag=a,epoch=0\n\
         0,0,0.8,0.1,0.1\n\
         1,0,0.1,0.1,0.8\n\
         2,1,0.1,0.8,0.1\n\
         3,2,0.1,0.1,0.8\n",
    )
    .unwrap();
    fs::write(
        dumps.join("epoch_001.csv"),
        "#c=3,tag=b,epoch=1\n\
         0,0,0.8,0.1,0.1\n\
         1,0,0.2,0.7,0.1\n\
         2,1,0.2,0.7,0.1\n\
         3,2,0.2,0.1,0.7\n",
    )
    .unwrap();

    let out = run(&[
        "compare",
        dumps.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--select-by",
        "accuracy",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value = serde_json::from_str(&stdout_str(&out)).unwrap();
    assert_eq!(report["selection"]["accuracy"].as_u64(), Some(0));
    assert_eq!(report["selection"]["mpcs"].as_u64(), Some(1));
    let tradeoff = &report["tradeoff_vs_mpcs"]["accuracy"];
    assert_eq!(tradeoff["dangerous_a"].as_u64(), Some(1));
    assert_eq!(tradeoff["dangerous_b"].as_u64(), Some(0));
    assert_eq!(tradeoff["dangerous_delta"].as_i64(), Some(-1));

    // identical dumps: every metric picks epoch 0, all deltas zero
    let same = dir.path().join("same");
    fs::create_dir(&same).unwrap();
    let row = "#c=3,tag=s,epoch=0\n0,0,0.8,0.1,0.1\n";
    fs::write(same.join("epoch_000.csv"), row).unwrap();
    fs::write(same.join("epoch_001.csv"), row.replace("epoch=0", "epoch=1")).unwrap();
    let out = run(&[
        "compare",
        same.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_str(&stdout_str(&out)).unwrap();
    for metric in ["accuracy", "f1", "mcc", "ms", "ce", "mpcs"] {
        assert_eq!(report["selection"][metric].as_u64(), Some(0), "{metric}");
    }
    assert_eq!(
        report["tradeoff_vs_mpcs"]["accuracy"]["accuracy_delta"].as_f64(),
        Some(0.0)
    );

    // unknown metric and too few dumps are usage errors
    let out = run(&[
        "compare",
        dumps.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--select-by",
        "sharpe",
    ]);
    assert_eq!(out.status.code(), Some(2));

    let lonely = dir.path().join("lonely");
    fs::create_dir(&lonely).unwrap();
    fs::write(lonely.join("epoch_000.csv"), row).unwrap();
    let out = run(&[
        "compare",
        lonely.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn csv_training_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let data = dir.path().join("data.csv");
    // tiny separable two-feature set
    let mut rows = String::new();
    for i in 0..30 {
        let wiggle = (i % 5) as f64 * 0.1;
        rows.push_str(&format!("{},{},0\n", -2.0 - wiggle, -2.0 + wiggle));
        rows.push_str(&format!("{},{},1\n", 2.0 + wiggle, 2.0 - wiggle));
    }
    fs::write(&data, rows).unwrap();
    let out_dir = dir.path().join("csvrun");
    let out = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--normalize",
        "--epochs",
        "5",
        "--batch",
        "8",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(out_dir.join("epoch_004.csv").exists());
}
