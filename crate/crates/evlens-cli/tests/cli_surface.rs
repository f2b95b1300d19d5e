//! Binary-level contract: flags, defaults, exit codes, artifacts.

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::process::{Command, Output};

fn evlens() -> Command {
    Command::new(env!("CARGO_BIN_EXE_evlens"))
}

fn run(args: &[&str]) -> Output {
    evlens().args(args).output().unwrap()
}

fn write_idx_pair(dir: &Path, n: usize, seed: u64) -> (std::path::PathBuf, std::path::PathBuf) {
    use rand::Rng as _;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let img_path = dir.join("imgs.idx3");
    let lbl_path = dir.join("lbls.idx1");
    let mut img = fs::File::create(&img_path).unwrap();
    img.write_all(&0x0000_0803u32.to_be_bytes()).unwrap();
    img.write_all(&(n as u32).to_be_bytes()).unwrap();
    img.write_all(&28u32.to_be_bytes()).unwrap();
    img.write_all(&28u32.to_be_bytes()).unwrap();
    let mut pixels = vec![0u8; n * 28 * 28];
    for p in &mut pixels {
        *p = rng.gen_range(0..=255);
    }
    img.write_all(&pixels).unwrap();
    let mut lbl = fs::File::create(&lbl_path).unwrap();
    lbl.write_all(&0x0000_0801u32.to_be_bytes()).unwrap();
    lbl.write_all(&(n as u32).to_be_bytes()).unwrap();
    let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
    lbl.write_all(&labels).unwrap();
    (img_path, lbl_path)
}

#[test]
fn help_lists_subcommands_and_defaults() {
    let out = run(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for sub in ["train", "fit", "explain", "bench", "lab"] {
        assert!(text.contains(sub), "missing subcommand {sub} in help");
    }
    let explain_help = String::from_utf8(run(&["explain", "--help"]).stdout).unwrap();
    assert!(explain_help.contains("default: efficient"));
    assert!(explain_help.contains("default: 160"));
    let bench_help = String::from_utf8(run(&["bench", "--help"]).stdout).unwrap();
    assert!(bench_help.contains("default: 10"));
    let lab_help = String::from_utf8(run(&["lab", "am-vs-ngm", "--help"]).stdout).unwrap();
    assert!(lab_help.contains("default: 500"));
    assert!(lab_help.contains("default: 200"));
}

#[test]
fn missing_input_fails_with_single_line_error() {
    let out = run(&[
        "explain",
        "--weights",
        "/nonexistent/net.evln",
        "--model",
        "/nonexistent/model.evgm",
        "--image",
        "/nonexistent/img.ppm",
        "--out-dir",
        "/tmp/evlens-surface-null",
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.starts_with("error: "), "stderr: {stderr}");
    assert_eq!(stderr.trim_end().lines().count(), 1, "stderr: {stderr}");
}

#[test]
fn fit_rejects_window_not_smaller_than_outer() {
    let dir = tempfile::tempdir().unwrap();
    let (img, lbl) = write_idx_pair(dir.path(), 4, 1);
    let out = run(&[
        "fit",
        "--images",
        img.to_str().unwrap(),
        "--labels",
        lbl.to_str().unwrap(),
        "--kind",
        "conditional",
        "--window",
        "4",
        "--outer",
        "4",
        "--out",
        dir.path().join("m.evgm").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("window"), "stderr: {stderr}");
}

#[test]
fn env_seed_fallback_lands_in_csv_headers() {
    let dir = tempfile::tempdir().unwrap();
    let out = evlens()
        .args([
            "lab",
            "relu-bound",
            "--n",
            "10000",
            "--out-dir",
            dir.path().to_str().unwrap(),
        ])
        .env("EVLENS_SEED", "31337")
        .output()
        .unwrap();
    assert!(out.status.success());
    let csv = fs::read_to_string(dir.path().join("relu_bound.csv")).unwrap();
    assert!(csv.starts_with("# seed=31337\n"), "{csv}");
    // explicit flag wins over the environment
    let out = evlens()
        .args([
            "lab",
            "relu-bound",
            "--n",
            "10000",
            "--seed",
            "5",
            "--out-dir",
            dir.path().to_str().unwrap(),
        ])
        .env("EVLENS_SEED", "31337")
        .output()
        .unwrap();
    assert!(out.status.success());
    let csv = fs::read_to_string(dir.path().join("relu_bound.csv")).unwrap();
    assert!(csv.starts_with("# seed=5\n"), "{csv}");
}

/// End-to-end on synthetic data: train a tiny run, fit, explain with and
/// without a flip, check artifact determinism.
#[test]
fn synthetic_pipeline_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let (img, lbl) = write_idx_pair(dir.path(), 24, 9);
    let weights = dir.path().join("net.evln");
    let out = run(&[
        "train",
        "--images",
        img.to_str().unwrap(),
        "--labels",
        lbl.to_str().unwrap(),
        "--epochs",
        "1",
        "--batch",
        "8",
        "--seed",
        "3",
        "--out",
        weights.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "train failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("epoch 0"), "{stdout}");

    let model = dir.path().join("model.evgm");
    let out = run(&[
        "fit",
        "--images",
        img.to_str().unwrap(),
        "--labels",
        lbl.to_str().unwrap(),
        "--kind",
        "marginal",
        "--window",
        "4",
        "--out",
        model.to_str().unwrap(),
    ]);
    assert!(out.status.success());

    let explain = |out_dir: &Path, extra: &[&str]| -> Output {
        let mut args = vec![
            "explain".to_string(),
            "--weights".into(),
            weights.to_str().unwrap().into(),
            "--model".into(),
            model.to_str().unwrap().into(),
            "--dataset".into(),
            img.to_str().unwrap().into(),
            "--index".into(),
            "2".into(),
            "--seed".into(),
            "11".into(),
            "--out-dir".into(),
            out_dir.to_str().unwrap().into(),
        ];
        args.extend(extra.iter().map(|s| s.to_string()));
        evlens().args(&args).output().unwrap()
    };
    let d1 = dir.path().join("run1");
    let d2 = dir.path().join("run2");
    let d3 = dir.path().join("flipped");
    assert!(explain(&d1, &[]).status.success());
    assert!(explain(&d2, &[]).status.success());
    assert!(explain(&d3, &["--transform", "fliph"]).status.success());
    for f in ["evidence.txt", "heatmap.ppm", "overlay.ppm"] {
        assert!(d1.join(f).exists(), "missing {f}");
        assert_eq!(
            fs::read(d1.join(f)).unwrap(),
            fs::read(d2.join(f)).unwrap(),
            "artifact {f} not deterministic"
        );
    }
    // the flip changes the input, so the evidence must change
    assert_ne!(
        fs::read(d1.join("evidence.txt")).unwrap(),
        fs::read(d3.join("evidence.txt")).unwrap()
    );
    // original vs efficient pass counts show up in the report at ratio S
    let bench = run(&[
        "bench",
        "--weights",
        weights.to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
        "--dataset",
        img.to_str().unwrap(),
        "--index",
        "0",
        "--samples",
        "10",
    ]);
    assert!(bench.status.success());
    let table = String::from_utf8(bench.stdout).unwrap();
    assert!(table.contains("original"), "{table}");
    assert!(table.contains("6250"), "{table}"); // 10 x 625 windows
    assert!(table.contains("625"), "{table}");
}
