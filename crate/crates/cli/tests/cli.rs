use std::path::Path;
use std::process::{Command, Output};

use gridtd::io::load_tensor;

fn gridtd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridtd"))
        .args(args)
        .env("GRIDTD_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn small_inpaint(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "run",
        "inpaint",
        "--sr",
        "0.1",
        "--dims",
        "16,16,4",
        "--mode",
        "decomposed",
        "--seed",
        "7",
        "--outer-iters",
        "3",
        "--inner-steps",
        "5",
        "--levels",
        "4",
        "--hidden",
        "8",
        "--out-dir",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    gridtd(&args)
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn inpaint_smoke_run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = small_inpaint(&out, &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let log = std::fs::read_to_string(out.join("log.csv")).unwrap();
    let header: Vec<&str> = log.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "psnr").unwrap();
    assert_eq!(log.lines().count(), 4);
    for line in log.lines().skip(1) {
        let p: f64 = line.split(',').nth(col).unwrap().parse().unwrap();
        assert!(p.is_finite());
    }
    assert_eq!(load_tensor(out.join("recon.gtd")).unwrap().shape(), &[16, 16, 4]);
    for f in ["manifest.txt", "mask.gtd", "truth.gtd", "params.bin", "params.manifest", "recon_t00.png"] {
        assert!(out.join(f).is_file(), "{f}");
    }
}

#[test]
fn same_seed_gives_identical_bytes_and_manifest_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert_eq!(code(&small_inpaint(&a, &[])), 0);
    assert_eq!(code(&small_inpaint(&b, &[])), 0);
    let recon = |d: &Path| std::fs::read(d.join("recon.gtd")).unwrap();
    assert_eq!(recon(&a), recon(&b));

    let o = gridtd(&[
        "run",
        "--config",
        a.join("manifest.txt").to_str().unwrap(),
        "--out-dir",
        c.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(recon(&a), recon(&c));
}

#[test]
fn missing_input_exits_2_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = small_inpaint(&out, &["--input", dir.path().join("nope.gtd").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("input"));
    assert!(!out.exists());
}

#[test]
fn invalid_values_exit_2_with_the_field_name() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    for (flag, value, field) in [
        ("--kappa", "1.0", "solver"),
        ("--sr", "1.5", "sr"),
        ("--mode", "sparse", "mode"),
        ("--affine", "maybe", "affine"),
        ("--levels", "0", "encoder"),
    ] {
        let o = small_inpaint(&out, &[flag, value]);
        assert_eq!(code(&o), 2, "{flag} {value}");
        assert!(String::from_utf8_lossy(&o.stderr).contains(field), "{flag}");
    }
    assert!(!out.exists());
    assert_eq!(code(&small_inpaint(&out, &["--dims", "16,16"])), 2);
    assert_eq!(code(&gridtd(&["run", "no-such-task"])), 2);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "task = inpaint\nseed = 7\n[encoder]\nmode = dense\nlevels = 4\nhidden = 8\n[solver]\nouter_iters = 2\ninner_steps = 2\n[problem]\ndims = 8,8,2\nsr = 0.3\n").unwrap();
    let out = dir.path().join("run");
    let o = gridtd(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--mode",
        "decomposed",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("mode = decomposed"));
    assert!(manifest.contains("outer_iters = 2"));

    std::fs::write(&cfg, "[solver]\nmode = dense\n").unwrap();
    let o = gridtd(&["run", "inpaint", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn non_finite_loss_exits_3_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = small_inpaint(&out, &["--rho0", "1e308"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.exists());
}

#[test]
fn synth_moving_square_and_masks() {
    let dir = tempfile::tempdir().unwrap();
    let video = dir.path().join("square.gtd");
    let o = gridtd(&["synth", "moving-square", "--dims", "32,32,8", "--velocity", "1,1", "--out", video.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = load_tensor(&video).unwrap();
    for t in 0..8 {
        assert_eq!(v.get(&[t, t, t]), 0.9);
        assert_eq!(v.get(&[t + 7, t + 7, t]), 0.9);
        assert_ne!(v.get(&[t + 8, t + 8, t]), 0.9);
        if t > 0 {
            assert_ne!(v.get(&[t - 1, t - 1, t]), 0.9);
        }
    }
    assert!(dir.path().join("square_t07.png").is_file());

    let mask = dir.path().join("mask.gtd");
    let run = |seed: &str| {
        gridtd(&["synth", "sr-mask", "--dims", "10,10", "--sr", "0.25", "--seed", seed, "--out", mask.to_str().unwrap()])
    };
    assert_eq!(code(&run("3")), 0);
    let m = load_tensor(&mask).unwrap();
    assert_eq!(m.data().iter().filter(|&&x| x == 1.0).count(), 25);
    let first = std::fs::read(&mask).unwrap();
    assert_eq!(code(&run("3")), 0);
    assert_eq!(std::fs::read(&mask).unwrap(), first);

    let bad = gridtd(&["synth", "spectral", "--dims", "8,8", "--out", mask.to_str().unwrap()]);
    assert_eq!(code(&bad), 2);
    let bad = gridtd(&["synth", "moving-square", "--velocity", "1", "--out", mask.to_str().unwrap()]);
    assert_eq!(code(&bad), 2);
}

#[test]
fn lipschitz_and_benchmark_tasks() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("lip");
    let o = gridtd(&["run", "lipschitz-check", "--trials", "50", "--levels", "3", "--hidden", "8", "--out-dir", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("bound_ratio_d3=4"));
    assert_eq!(std::fs::read_to_string(out.join("lipschitz.csv")).unwrap().lines().count(), 7);

    let out = dir.path().join("eff");
    let o = gridtd(&["run", "--task", "bench-efficiency", "--dims", "8,8,8", "--iters", "3", "--levels", "3", "--out-dir", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 3);
    let dense: Vec<&str> = report.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(dense[0], "dense");
    assert_eq!(dense[9], (8 * 8 * 8 * 3 * 8).to_string());
}
