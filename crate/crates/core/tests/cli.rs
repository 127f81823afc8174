use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn models() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparsefold"))
        .args(args)
        .env_remove("SPARSEFOLD_COEFFS")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn estimate_marks_conv2_bottleneck() {
    let lenet = models().join("lenet5.json");
    let o = run(&["estimate", p(&lenet), "--config", "ones"]);
    assert!(o.status.success());
    let out = stdout(&o);
    let line = out.lines().find(|l| l.contains("<-- bottleneck")).unwrap();
    assert!(line.starts_with("conv2") && line.contains("240000"), "{line}");
}

#[test]
fn dse_writes_outputs_and_replays_identically() {
    let lenet = models().join("lenet5.json");
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = run(&["dse", p(&lenet), "--budget-luts", "6000", "--out", p(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in [
        "folding_config.json",
        "profile.json",
        "dse_report.json",
        "pareto.csv",
        "sparse_maps/sparse_summary.json",
    ] {
        let x = std::fs::read(a.join(f)).unwrap();
        assert_eq!(x, std::fs::read(b.join(f)).unwrap(), "{f} differs between runs");
    }

    let cfg = a.join("folding_config.json");
    let o = run(&[
        "estimate",
        p(&lenet),
        "--config",
        p(&cfg),
        "--profile",
        p(&a.join("profile.json")),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let maps = dir.path().join("maps");
    let o = run(&[
        "export-sparse-map",
        p(&lenet),
        "--profile",
        p(&a.join("profile.json")),
        "--config",
        p(&cfg),
        "--out",
        p(&maps),
        "--verify",
        "20",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("verified against inference on 20 random inputs"));

    let o = run(&[
        "simulate",
        p(&lenet),
        "--testset",
        p(&models().join("lenet5_testset.json")),
        "--profile",
        p(&a.join("profile.json")),
        "--config",
        p(&cfg),
    ]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("accuracy: "));
}

#[test]
fn dense_model_is_self_consistent_on_its_testset() {
    let o = run(&[
        "simulate",
        p(&models().join("lenet5.json")),
        "--testset",
        p(&models().join("lenet5_testset.json")),
    ]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("accuracy: 1.0000"));
}

#[test]
fn prune_prints_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p.json");
    let o = run(&[
        "prune",
        p(&models().join("lenet5.json")),
        "--sparsity",
        "0.5",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("global") && text.contains("61470"));
    assert!(out.exists() && dir.path().join("p.fc1.mask.bin").exists());
}

#[test]
fn exit_codes() {
    let toy = models().join("toy2.json");
    let lenet = models().join("lenet5.json");
    assert_eq!(
        run(&["oracle", p(&toy), "--sparsity", "0.5", "--budget-luts", "10"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(run(&["oracle", p(&lenet)]).status.code(), Some(3));
    assert_eq!(
        run(&["estimate", p(&toy), "--config", "no-such-file.json"])
            .status
            .code(),
        Some(1)
    );
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        run(&["dse", p(&lenet), "--budget-luts", "100", "--out", p(dir.path())])
            .status
            .code(),
        Some(2)
    );
    let o = run(&["oracle", p(&toy), "--sparsity", "0.5", "--budget-luts", "3000"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("ii gap"));
}

#[test]
fn invalid_config_lists_violations() {
    let dir = tempfile::tempdir().unwrap();
    let toy = models().join("toy2.json");
    let cfg = dir.path().join("bad.json");
    std::fs::write(
        &cfg,
        r#"{"fc1": {"mode": "Folded", "PE": 3, "SIMD": 1}, "fc2": {"mode": "Folded", "PE": 1, "SIMD": 5}}"#,
    )
    .unwrap();
    let o = run(&["estimate", p(&toy), "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("fc1") && err.contains("fc2"), "{err}");
}

#[test]
fn compare_prints_ratio() {
    let lenet = models().join("lenet5.json");
    let o = run(&["estimate", p(&lenet), "--config", "unrolled-dense", "--compare", "ones"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("throughput ratio: 306.122x"), "{}", stdout(&o));
}
