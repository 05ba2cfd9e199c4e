use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn fbftl(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fbftl"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("FBFTL_OUT")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn payload_tables_with_discrepancy_notes() {
    let dir = tempfile::tempdir().unwrap();
    let o = fbftl(
        &["payload", "--config", fixture("payload_beans.toml").to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = read(dir.path(), "payload.txt");
    assert!(text.starts_with("# config_sha256: "));
    assert!(text.contains("390.5 Kb"));
    assert!(text.contains("336.1 Kb"));
    assert!(text.contains("published 15.2 Gb, formula gives 13.0 Gb"));
    assert!(text.contains("published 336 Kb"));
    let csv = read(dir.path(), "payload.csv");
    assert!(csv.contains("FTL_c,38808,10504,336128,13044455424,1894451328"));

    let o = fbftl(
        &["payload", "--config", fixture("payload_vgg16.toml").to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    let csv = read(dir.path(), "payload.csv");
    assert!(csv.contains("FbFTL,50000,4096,131072,6553600000,"));
}

#[test]
fn payload_without_cut_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = fbftl(
        &["payload", "--config", fixture("payload_no_cut.toml").to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("cut"));
    let o = fbftl(&["payload"], dir.path());
    assert_eq!(code(&o), 1);
}

#[test]
fn simulate_fbftl_reports_metering_equality_and_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = fixture("tiny_synthetic.toml");
    let args = ["simulate", "--config", cfg.to_str().unwrap(), "--retrain-lr", "0.1"];
    let oa = fbftl(&args, a.path());
    assert_eq!(code(&oa), 0, "{}", String::from_utf8_lossy(&oa.stderr));
    assert_eq!(code(&fbftl(&args, b.path())), 0);
    for f in ["summary.json", "metrics.csv"] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f}");
    }
    let summary: serde_json::Value = serde_json::from_str(&read(a.path(), "summary.json")).unwrap();
    assert_eq!(summary["metering_matches"], true);
    assert_eq!(summary["method"], "fbftl");
    assert_eq!(summary["uplink_events"], 120);
    assert_eq!(summary["retrain"]["added_uplink_bits"], "0");
    assert_eq!(summary["header"]["seed"], 5);
    let metrics = read(a.path(), "metrics.csv");
    let mut lines = metrics.lines();
    assert!(lines.next().unwrap().starts_with("# config_sha256: "));
    assert_eq!(lines.next().unwrap(), "# seed: 5");
    assert_eq!(
        lines.next().unwrap(),
        "round,train_loss,val_acc,cum_uplink_bits,cum_downlink_bits"
    );
}

#[test]
fn seed_flag_changes_output_and_header() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = fixture("tiny_synthetic.toml");
    let base = ["simulate", "--config", cfg.to_str().unwrap(), "--method", "fl"];
    assert_eq!(code(&fbftl(&base, a.path())), 0);
    let mut seeded = base.to_vec();
    seeded.extend(["--seed", "99"]);
    assert_eq!(code(&fbftl(&seeded, b.path())), 0);
    let mb = read(b.path(), "metrics.csv");
    assert!(mb.contains("# seed: 99"));
    assert_ne!(read(a.path(), "metrics.csv"), mb);
}

#[test]
fn simulate_equivalence_mode() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture("tiny_synthetic.toml");
    let o = fbftl(
        &["simulate", "--config", cfg.to_str().unwrap(), "--equivalence"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&read(dir.path(), "equivalence.json")).unwrap();
    assert!(v["max_deviation"].as_f64().unwrap() <= 1e-6);
    assert_eq!(v["accuracies_identical"], true);
    assert!(v["control_max_deviation"].as_f64().unwrap() > 0.0);
}

#[test]
fn invalid_method_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture("tiny_synthetic.toml");
    let o = fbftl(
        &["simulate", "--config", cfg.to_str().unwrap(), "--method", "sgd"],
        dir.path(),
    );
    assert_eq!(code(&o), 1);
    let o = fbftl(&["frobnicate"], dir.path());
    assert_eq!(code(&o), 1);
}

#[test]
fn privacy_rows_and_edge_cases() {
    let dir = tempfile::tempdir().unwrap();
    let o = fbftl(
        &[
            "privacy",
            "--classes",
            "10",
            "--batch",
            "8",
            "--clients",
            "1,10",
            "--reps",
            "20",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    let csv = read(dir.path(), "leakage.csv");
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "U,mean_bits,stderr_bits");
    assert!(rows[1].starts_with("1,13.86"), "{}", rows[1]);

    let o = fbftl(
        &[
            "privacy",
            "--classes",
            "1",
            "--batch",
            "5",
            "--clients",
            "1,7,30",
            "--reps",
            "4",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    let csv = read(dir.path(), "leakage.csv");
    for row in csv.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let mean: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(mean, 0.0, "{row}");
    }

    let o = fbftl(&["privacy", "--reps", "0"], dir.path());
    assert_eq!(code(&o), 1);
    let o = fbftl(&["privacy", "--classes", "3", "--labels", "0.5,0.5"], dir.path());
    assert_eq!(code(&o), 1);
}

#[test]
fn privacy_output_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = [
        "privacy",
        "--classes",
        "4",
        "--batch",
        "4",
        "--clients",
        "1,50",
        "--reps",
        "10",
        "--seed",
        "3",
    ];
    assert_eq!(code(&fbftl(&args, a.path())), 0);
    assert_eq!(code(&fbftl(&args, b.path())), 0);
    assert_eq!(read(a.path(), "leakage.csv"), read(b.path(), "leakage.csv"));
}

#[test]
fn gradcheck_pass_fail_and_empty() {
    let dir = tempfile::tempdir().unwrap();
    let arch = fixture("beans_arch.toml");
    let o = fbftl(
        &["gradcheck", "--arch", arch.to_str().unwrap(), "--samples", "2"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&read(dir.path(), "gradcheck.json")).unwrap();
    assert_eq!(v["passed"], true);

    let o = fbftl(
        &[
            "gradcheck",
            "--arch",
            arch.to_str().unwrap(),
            "--samples",
            "2",
            "--corrupt-backward",
            "1.01",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 3);

    let o = fbftl(
        &["gradcheck", "--arch", fixture("empty_arch.toml").to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(code(&o), 1);
}

#[test]
fn out_dir_env_override() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_fbftl"))
        .args([
            "privacy",
            "--classes",
            "2",
            "--batch",
            "2",
            "--clients",
            "1",
            "--reps",
            "2",
        ])
        .env("FBFTL_OUT", dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(dir.path().join("leakage.csv").exists());
}

#[test]
fn diverging_run_exits_with_numeric_code() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(fixture("tiny_synthetic.toml"))
        .unwrap()
        .replace("learning_rate = 0.02", "learning_rate = 1e300");
    let cfg = dir.path().join("diverge.toml");
    let text = text
        .replace("\"tiny_arch.toml\"", &format!("{:?}", fixture("tiny_arch.toml")))
        .replace(
            "\"tiny_source_arch.toml\"",
            &format!("{:?}", fixture("tiny_source_arch.toml")),
        );
    std::fs::write(&cfg, text).unwrap();
    let o = fbftl(
        &["simulate", "--config", cfg.to_str().unwrap(), "--method", "fl"],
        &dir.path().join("out"),
    );
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}
