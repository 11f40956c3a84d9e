//! End-to-end runs of the `irae` command through its library entry point.

use std::fs;
use std::path::Path;

use irae_cli::run_with;

fn run(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let code = run_with(std::iter::once("irae").chain(args.iter().copied()), &mut out);
    (code, String::from_utf8(out).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn mean_psnr(table: &str) -> f64 {
    let row = table.lines().find(|l| l.starts_with("mean\t")).expect("mean row");
    row.split('\t').nth(1).unwrap().parse().unwrap()
}

#[test]
fn verify_fresh_models_in_both_precisions() {
    for precision in ["f32", "f64"] {
        let (code, out) = run(&[
            "verify", "--k", "2", "--levels", "2", "--hidden", "8", "--trials", "10",
            "--precision", precision,
        ]);
        assert_eq!(code, 0, "{out}");
        assert!(out.contains("max round-trip error:") && out.contains("PASS"), "{out}");
    }
}

#[test]
fn mi_demo_passes() {
    let (code, out) = run(&["mi-demo"]);
    assert_eq!(code, 0);
    assert!(out.contains("256 maps, 24 injective"), "{out}");
    assert!(out.trim_end().ends_with("PASS"));
}

#[test]
fn eval_of_identical_sets_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(run(&["gen-data", "--output", p(&data), "--count", "3", "--size", "16"]).0, 0);
    let (code, out) = run(&["eval", "--restored", p(&data), "--truth", p(&data)]);
    assert_eq!(code, 0, "{out}");
    assert_eq!(out.lines().next(), Some("image\tpsnr_db\tssim"));
    assert_eq!(out.lines().count(), 5);
    for row in out.lines().skip(1) {
        let cols: Vec<&str> = row.split('\t').collect();
        assert_eq!(cols[1], "100.0000", "{row}");
        assert_eq!(cols[2], "1.000000", "{row}");
    }
}

#[test]
fn bad_inputs_give_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad");
    fs::create_dir(&bad).unwrap();
    fs::write(bad.join("x.pgm"), b"\x89PNG\r\n\x1a\n").unwrap();
    let mut err = Vec::new();
    let code = run_with(
        ["irae", "eval", "--restored", p(&bad), "--truth", p(&bad)],
        &mut err,
    );
    assert_ne!(code, 0);
    assert_ne!(run(&["restore", "--checkpoint", p(&bad.join("x.pgm")), "--input", p(&bad), "--output", p(&bad)]).0, 0);
    assert_ne!(run(&["verify", "--checkpoint", p(&dir.path().join("missing.irae"))]).0, 0);
    assert_ne!(run(&["train", "--set", "hidden=0", "--dataset", p(&bad), "--output-dir", p(&bad)]).0, 0);
    assert_ne!(run(&["train", "--set", "colour=red"]).0, 0);
    assert_ne!(run(&["verify", "--trials", "0"]).0, 0);
    assert_ne!(run(&["no-such-command"]).0, 0);
}

#[test]
fn config_file_and_overrides_reach_run_cfg() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    run(&["gen-data", "--output", p(&data), "--count", "12", "--size", "8"]);
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# tiny\nk = 1\nlevels = 1\nhidden = 4\nbatch_size = 4\nsigma = 10\n").unwrap();
    let out_dir = dir.path().join("out");
    let (code, out) = run(&[
        "train", "--config", p(&cfg), "--set", "hidden=3", "--seed", "9", "--dataset", p(&data),
        "--output-dir", p(&out_dir), "--epochs", "2",
    ]);
    assert_eq!(code, 0, "{out}");
    let written = fs::read_to_string(out_dir.join("run.cfg")).unwrap();
    for line in ["k = 1", "hidden = 3", "seed = 9", "sigma = 10", "epochs_max = 2", "batch_size = 4"] {
        assert!(written.lines().any(|l| l == line), "missing {line:?} in\n{written}");
    }
    let history = fs::read_to_string(out_dir.join("history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 2);
    let (code, out) = run(&["verify", "--checkpoint", p(&out_dir.join("model.irae"))]);
    assert_eq!(code, 0, "{out}");
    assert!(out.contains("K=1 L=1 hidden=3"), "{out}");
}

#[test]
fn train_degrade_restore_eval_improves_psnr() {
    let dir = tempfile::tempdir().unwrap();
    let (train, clean, noisy, restored, out_dir) = (
        dir.path().join("train"),
        dir.path().join("clean"),
        dir.path().join("noisy"),
        dir.path().join("restored"),
        dir.path().join("out"),
    );
    run(&["gen-data", "--output", p(&train), "--count", "60", "--size", "16", "--seed", "1"]);
    run(&["gen-data", "--output", p(&clean), "--count", "8", "--size", "16", "--seed", "2"]);
    let (code, out) = run(&[
        "train", "--set", "k=2", "--set", "levels=2", "--set", "hidden=16", "--set", "batch_size=8",
        "--dataset", p(&train), "--output-dir", p(&out_dir), "--epochs", "15",
    ]);
    assert_eq!(code, 0, "{out}");
    assert_eq!(run(&["degrade", "--input", p(&clean), "--output", p(&noisy), "--seed", "3"]).0, 0);
    let ckpt = out_dir.join("model.irae");
    let (code, out) = run(&[
        "restore", "--checkpoint", p(&ckpt), "--input", p(&noisy), "--output", p(&restored), "--jobs", "2",
    ]);
    assert_eq!(code, 0, "{out}");
    let (_, noisy_table) = run(&["eval", "--restored", p(&noisy), "--truth", p(&clean)]);
    let (_, restored_table) = run(&["eval", "--restored", p(&restored), "--truth", p(&clean)]);
    let (before, after) = (mean_psnr(&noisy_table), mean_psnr(&restored_table));
    assert!(after > before, "restored {after} dB vs noisy {before} dB");
}
