use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn ttwopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ttwopt"))
        .args(args)
        .env("TT_THREADS", "1")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = ttwopt(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

fn setup(dir: &Path) -> (String, String) {
    let (x, w) = (path(dir, "x.dten"), path(dir, "w.dten"));
    ok(&[
        "generate",
        "--dims",
        "5,4,3",
        "--cp-rank",
        "2",
        "--seed",
        "1",
        "-o",
        &x,
    ]);
    ok(&[
        "mask", "--like", &x, "--rate", "0.5", "--seed", "2", "-o", &w,
    ]);
    (x, w)
}

#[test]
fn eval_of_truth_against_itself() {
    let dir = tempfile::tempdir().unwrap();
    let (x, w) = setup(dir.path());
    let v: Value = serde_json::from_str(&ok(&[
        "eval", "--truth", &x, "--est", &x, "--mask", &w, "--psnr",
    ]))
    .unwrap();
    assert_eq!(v["rse"].as_f64(), Some(0.0));
    assert_eq!(v["psnr"], "inf");
    assert_eq!(v["n_observed"].as_u64(), Some(30));
    assert_eq!(v["n_missing"].as_u64(), Some(30));
    let pretty = ok(&["eval", "--truth", &x, "--est", &x, "--pretty"]);
    assert!(pretty.contains("rse"));
}

#[test]
fn gradcheck_reports_small_error() {
    let out = ok(&[
        "gradcheck",
        "--dims",
        "3,4,2",
        "--ranks",
        "1,2,2,1",
        "--rate",
        "0.5",
        "--seed",
        "4",
    ]);
    let err: f64 = out.trim().parse().unwrap();
    assert!(err < 1e-5, "{err}");
    let strict = ttwopt(&[
        "gradcheck",
        "--dims",
        "3,4,2",
        "--ranks",
        "1,2,2,1",
        "--threshold",
        "0",
    ]);
    assert_eq!(strict.status.code(), Some(1));
}

#[test]
fn completion_writes_outputs_and_monotone_gd_trace() {
    let dir = tempfile::tempdir().unwrap();
    let (x, w) = setup(dir.path());
    let (c, r, t) = (
        path(dir.path(), "c.dten"),
        path(dir.path(), "r.dten"),
        path(dir.path(), "t.csv"),
    );
    ok(&[
        "complete",
        "-x",
        &x,
        "-w",
        &w,
        "--ranks",
        "1,2,2,1",
        "--method",
        "gd",
        "--max-iters",
        "50",
        "-o",
        &c,
        "--reconstruction",
        &r,
        "--trace",
        &t,
    ]);
    let trace = fs::read_to_string(&t).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next(), Some("iter,f,gnorm,step"));
    let fs_: Vec<f64> = lines
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(!fs_.is_empty());
    assert!(fs_.windows(2).all(|p| p[1] <= p[0]));

    // Observed entries pass through unchanged.
    let truth = ttwopt::io::read_tensor(&x).unwrap();
    let mask = ttwopt::io::read_tensor(&w).unwrap();
    let done = ttwopt::io::read_tensor(&c).unwrap();
    for ((a, b), m) in truth.data().iter().zip(done.data()).zip(mask.data()) {
        if *m == 1.0 {
            assert_eq!(a, b);
        }
    }
}

#[test]
fn identical_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (x, w) = setup(dir.path());
    let mut outs = Vec::new();
    for k in 0..2 {
        let (c, t) = (
            path(dir.path(), &format!("c{k}")),
            path(dir.path(), &format!("t{k}")),
        );
        ok(&[
            "complete",
            "-x",
            &x,
            "-w",
            &w,
            "--ranks",
            "2",
            "--seed",
            "9",
            "--max-iters",
            "40",
            "-o",
            &c,
            "--trace",
            &t,
        ]);
        outs.push((fs::read(&c).unwrap(), fs::read(&t).unwrap()));
    }
    assert_eq!(outs[0], outs[1]);
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let (x, w) = setup(dir.path());
    let cfg = path(dir.path(), "run.cfg");
    fs::write(
        &cfg,
        "# run settings\nranks = 1,2,2,1\nmethod = gd\nmax_iters = 7\nseed = 3\n",
    )
    .unwrap();
    let (c, t) = (path(dir.path(), "c"), path(dir.path(), "t.csv"));
    ok(&[
        "complete", "-x", &x, "-w", &w, "--config", &cfg, "-o", &c, "--trace", &t,
    ]);
    assert_eq!(fs::read_to_string(&t).unwrap().lines().count(), 1 + 7);
    ok(&[
        "complete",
        "-x",
        &x,
        "-w",
        &w,
        "--config",
        &cfg,
        "--max-iters",
        "3",
        "-o",
        &c,
        "--trace",
        &t,
    ]);
    assert_eq!(fs::read_to_string(&t).unwrap().lines().count(), 1 + 3);

    fs::write(&cfg, "ranks = 2\nbogus line\n").unwrap();
    let out = ttwopt(&["complete", "-x", &x, "-w", &w, "--config", &cfg, "-o", &c]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn bad_input_fails_with_exit_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let bogus = path(dir.path(), "bogus.dten");
    fs::write(&bogus, b"NOTATENSOR").unwrap();
    let out = ttwopt(&["eval", "--truth", &bogus, "--est", &bogus]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());

    let out = ttwopt(&["tensorize", "-i", &bogus, "-o", &path(dir.path(), "t")]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(ttwopt(&["complete"]).status.code(), Some(1));
    assert_eq!(
        ttwopt(&["mask", "--dims", "3,3", "--rate", "1.5", "-o", &bogus])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn failed_run_leaves_no_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (x, w) = setup(dir.path());
    let c = path(dir.path(), "c.dten");
    // The reconstruction target is a directory, so writing it fails after the
    // completed tensor has already been written.
    let blocked = path(dir.path(), "blocked");
    fs::create_dir(&blocked).unwrap();
    let out = ttwopt(&[
        "complete",
        "-x",
        &x,
        "-w",
        &w,
        "--ranks",
        "2",
        "--max-iters",
        "5",
        "-o",
        &c,
        "--reconstruction",
        &blocked,
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!Path::new(&c).exists());

    // Rank chain of the wrong order: nothing is written at all.
    let out = ttwopt(&["complete", "-x", &x, "-w", &w, "--ranks", "1,2,1", "-o", &c]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!Path::new(&c).exists());
}

#[test]
fn image_round_trip_through_block_tensor() {
    let dir = tempfile::tempdir().unwrap();
    let img = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/astronaut256.ppm");
    let (t, back) = (path(dir.path(), "img.dten"), path(dir.path(), "back.ppm"));
    ok(&["tensorize", "-i", img.to_str().unwrap(), "-o", &t]);
    let tensor = ttwopt::io::read_tensor(&t).unwrap();
    assert_eq!(tensor.dims(), &[4, 4, 4, 4, 4, 4, 4, 4, 3]);
    ok(&["detensorize", "-i", &t, "-o", &back]);
    assert_eq!(fs::read(&img).unwrap(), fs::read(&back).unwrap());
}

#[test]
fn help_and_version_succeed() {
    assert!(ttwopt(&["--help"]).status.success());
    assert!(ttwopt(&["--version"]).status.success());
}
