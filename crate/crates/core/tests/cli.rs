use std::path::Path;
use std::process::{Command, Output};

use denise::harness::{CompareConfig, DataSpec, MethodSpec};
use denise::datagen::{FactorDistribution, GenConfig};
use denise::linalg::Matrix;

fn denise(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_denise"))
        .args(args)
        .current_dir(dir)
        .env("DENISE_THREADS", "2")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn gen_train_decompose_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = denise(&["gen", "--n", "5", "--k0", "2", "--s0", "0.8", "--count", "64", "--out", "train.ds"], d);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = denise(
        &["train", "--data", "train.ds", "--k", "2", "--arch", "6,6,3", "--epochs", "2", "--step", "const:1e-3", "--out", "model.json", "--report", "report.csv"],
        d,
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(d.join("report.csv").exists());

    let m = Matrix::from_fn(5, 5, |i, j| if i == j { 1.0 } else { 0.2 });
    m.write_csv(d.join("m.csv")).unwrap();
    let out = denise(&["decompose", "--model", "model.json", "--in", "m.csv", "--out", "d_"], d);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let l = Matrix::read_csv(d.join("d_L.csv")).unwrap();
    let s = Matrix::read_csv(d.join("d_S.csv")).unwrap();
    for i in 0..5 {
        for j in 0..5 {
            assert!((l[(i, j)] + s[(i, j)] - m[(i, j)]).abs() < 1e-12);
        }
    }

    let out = denise(&["finetune", "--model", "model.json", "--data", "train.ds", "--step", "const:1e-4", "--out", "ft.json"], d);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(d.join("ft.json").exists());
}

#[test]
fn baseline_command_and_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let m = Matrix::from_fn(4, 4, |i, j| if i == j { 2.0 } else { 1.0 });
    m.write_csv(d.join("m.csv")).unwrap();
    let out = denise(&["baseline", "--algo", "pcp", "--in", "m.csv", "--out", "pcp_"], d);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stats: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("pcp_stats.json")).unwrap()).unwrap();
    assert_eq!(stats["converged"], true);

    // FPCP without a rank is a configuration error
    let out = denise(&["baseline", "--algo", "fpcp", "--in", "m.csv", "--out", "f_"], d);
    assert_eq!(code(&out), 2);
    // unreadable input
    let out = denise(&["baseline", "--algo", "pcp", "--in", "missing.csv", "--out", "x_"], d);
    assert_eq!(code(&out), 2);
    // unknown algorithm rejected by the parser
    let out = denise(&["baseline", "--algo", "rpca", "--in", "m.csv", "--out", "x_"], d);
    assert_eq!(code(&out), 2);
}

#[test]
fn compare_assertions_and_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = CompareConfig {
        title: "cli".into(),
        data: DataSpec::Synthetic {
            config: GenConfig {
                n: 5,
                k0: 2,
                s0: 0.8,
                distribution: FactorDistribution::Normal,
                seed: 4,
                count: 6,
            },
        },
        methods: vec![MethodSpec::Oracle, MethodSpec::Zero],
        eval: Default::default(),
        baseline_limit: None,
        timing_reference: None,
        assertions: vec![],
        max_failure_rate: 0.1,
    };
    std::fs::write(d.join("cfg.json"), serde_json::to_string_pretty(&cfg).unwrap()).unwrap();

    let out = denise(&["compare", "--config", "cfg.json", "--out", "run", "--assert", "Oracle:rel_err_l<=0"], d);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS"));

    let out = denise(&["compare", "--config", "cfg.json", "--out", "run2", "--assert", "Zero:r_l>=1"], d);
    assert_eq!(code(&out), 4);

    let out = denise(&["compare", "--rerun", "run/manifest.json", "--out", "again"], d);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    // tampered recorded hash
    let manifest = std::fs::read_to_string(d.join("run/manifest.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&manifest).unwrap();
    let h = v["outputs"]["results.csv"].as_str().unwrap().to_string();
    let flipped = if h.starts_with('0') { format!("1{}", &h[1..]) } else { format!("0{}", &h[1..]) };
    std::fs::write(d.join("bad.json"), manifest.replace(&h, &flipped)).unwrap();
    let out = denise(&["compare", "--rerun", "bad.json", "--out", "again2"], d);
    assert_eq!(code(&out), 4);

    std::fs::write(d.join("broken.json"), "{ not json").unwrap();
    let out = denise(&["compare", "--config", "broken.json", "--out", "x"], d);
    assert_eq!(code(&out), 2);
}

#[test]
fn ingest_writes_datasets() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/prices_fixture.csv");
    let out = denise(&["ingest", "--prices", fixture.to_str().unwrap(), "--window", "60", "--shift", "20", "--out-dir", "win"], d);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["train.ds", "test.ds", "windows.csv"] {
        assert!(d.join("win").join(f).exists(), "{f}");
    }
}
