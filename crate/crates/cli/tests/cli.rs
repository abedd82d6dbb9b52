//! End-to-end checks of the binary: exit codes, artifact layout, and the
//! byte-determinism contract.

use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rough-delay"))
}

fn out_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("rough-delay-test-{}-{tag}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

#[test]
fn verify_chen_suite_passes() {
    let dir = out_dir("verify");
    let out = run(&[
        "verify", "--suite", "chen", "--hurst", "0.4", "--mesh", "1/128", "--seed", "42", "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("PASS"));
    assert!(dir.join("config.json").exists());
}

#[test]
fn usage_errors_exit_two() {
    let out = run(&["verify", "--suite", "nosuch"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["solve", "--frobnicate", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rough-delay <command>"));
    let out = run(&[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn solve_is_byte_deterministic() {
    let (d1, d2) = (out_dir("solve1"), out_dir("solve2"));
    for d in [&d1, &d2] {
        let out = run(&[
            "solve", "--mesh", "1/64", "--hurst", "0.45", "--seed", "7", "--out",
            d.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = std::fs::read(d1.join("solution.csv")).unwrap();
    let b = std::fs::read(d2.join("solution.csv")).unwrap();
    assert_eq!(a, b, "solution bytes differ between identical runs");
    assert!(d1.join("windows.json").exists());
    let header = String::from_utf8_lossy(&a);
    assert!(header.starts_with("t,y_1,y_2,zeta_11,zeta_12,zeta_21,zeta_22\n"));
}

#[test]
fn solve_modes_agree() {
    let dir = out_dir("both");
    let out = run(&[
        "solve", "--mesh", "1/64", "--mode", "both", "--seed", "3", "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("max column difference"));
    assert!(dir.join("solution_onestep.csv").exists());
    assert!(dir.join("solution_picard.csv").exists());
}

#[test]
fn convergence_smooth_driver_order_at_least_one() {
    let dir = out_dir("conv");
    let out = run(&[
        "convergence", "--driver", "sincos", "--mesh", "1/128", "--out", dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.join("convergence.csv")).unwrap();
    assert!(csv.starts_with("level,intervals,value_sup,diff,ratio,order\n"));
}

#[test]
fn convergence_single_level_has_no_order_column() {
    let dir = out_dir("conv0");
    let out = run(&[
        "convergence", "--driver", "sincos", "--mesh", "1/128", "--levels", "0", "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.join("convergence.csv")).unwrap();
    assert!(csv.starts_with("level,intervals,value_sup\n"));
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn itomap_bounded_spread() {
    let dir = out_dir("ito");
    let out = run(&[
        "itomap", "--driver", "sincos", "--mesh", "1/64", "--out", dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.join("itomap.csv")).unwrap();
    assert!(csv.starts_with("eps,response,rhs,ratio\n"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn simulate_emits_sidecars_and_is_deterministic() {
    let (d1, d2) = (out_dir("sim1"), out_dir("sim2"));
    for d in [&d1, &d2] {
        let out = run(&["simulate", "--mesh", "1/64", "--seed", "11", "--out", d.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    // data artifacts are byte-identical; the config echo differs only in
    // its out_dir field, so it is checked for existence instead
    for name in ["path.csv", "path.json", "areas.csv", "areas.json"] {
        let a = std::fs::read(d1.join(name)).unwrap();
        let b = std::fs::read(d2.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
    assert!(d1.join("config.json").exists());
    let sidecar = std::fs::read_to_string(d1.join("areas.json")).unwrap();
    assert!(sidecar.contains("inner-first"));
}

#[test]
fn config_file_layering() {
    let dir = out_dir("cfg");
    std::fs::create_dir_all(&dir).unwrap();
    let cfg_path = dir.join("run.conf");
    std::fs::write(&cfg_path, "hurst = 0.5\nmesh = 1/64\nseed = 5\n# comment\n").unwrap();
    let out = run(&[
        "simulate", "--config", cfg_path.to_str().unwrap(), "--seed", "6", "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let echo = std::fs::read_to_string(dir.join("config.json")).unwrap();
    // flag overrides file, file overrides default
    assert!(echo.contains("\"seed\": 6"));
    assert!(echo.contains("\"hurst\": 0.5"));
}

#[test]
fn verify_all_suite_passes() {
    let dir = out_dir("verify-all");
    let out = run(&[
        "verify", "--suite", "all", "--hurst", "0.45", "--trials", "256", "--mesh", "1/64",
        "--out", dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("OK:"));
    assert!(!text.contains("FAIL "));
}

#[test]
fn convergence_threshold_breach_exits_one() {
    let dir = out_dir("conv-breach");
    let out = run(&[
        "convergence", "--driver", "sincos", "--mesh", "1/128", "--min-order", "3.5", "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("below threshold"), "{err}");
}

#[test]
fn output_root_env_var() {
    let dir = out_dir("envroot");
    let out = bin()
        .args(["simulate", "--mesh", "1/64", "--seed", "2"])
        .env("ROUGH_DELAY_OUT", &dir)
        .output()
        .expect("binary runs");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("path.csv").exists());
}

#[test]
fn solve_constant_sigma_csv_closed_form() {
    // With constant σ the solution columns must satisfy, row by row,
    // y(t) − y(0) = Z (x(t) − x(0)) where Z is the (constant) zeta block —
    // checked entirely from the emitted CSV artifacts.
    let dir = out_dir("const-csv");
    let common = ["--mesh", "1/64", "--hurst", "0.5", "--seed", "13", "--delays", "1/4"];
    let out = run(&[&["simulate"], &common[..], &["--out", dir.to_str().unwrap()]].concat());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = run(&[
        &["solve", "--sigma", "constant"],
        &common[..],
        &["--out", dir.to_str().unwrap()],
    ]
    .concat());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let parse = |name: &str| -> Vec<Vec<f64>> {
        std::fs::read_to_string(dir.join(name))
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
            .collect()
    };
    let path = parse("path.csv"); // t, x_1, x_2
    let sol = parse("solution.csv"); // t, y_1, y_2, zeta_11, zeta_12, zeta_21, zeta_22
    // align path rows to solution times (path starts at −r)
    let offset = path.len() - sol.len();
    let (x0, y0) = (&path[offset], &sol[0]);
    assert_eq!(x0[0], y0[0], "time alignment");
    let z = [[sol[0][3], sol[0][4]], [sol[0][5], sol[0][6]]];
    for (pr, sr) in path[offset..].iter().zip(&sol) {
        assert_eq!(pr[0], sr[0], "time alignment");
        for l in 0..2 {
            let want = sr[1 + l] - y0[1 + l];
            let got = z[l][0] * (pr[1] - x0[1]) + z[l][1] * (pr[2] - x0[2]);
            assert!(
                (got - want).abs() <= 1e-12 * (1.0 + want.abs()),
                "row t = {}: {got} vs {want}",
                pr[0]
            );
        }
    }
}
