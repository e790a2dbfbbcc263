//! Behaviour of the `qcal` binary: flags, exit codes and output files.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn ci_conf() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/ci.conf")
}

fn qcal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qcal"))
        .args(args)
        .env_remove("QCAL_SEED")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_ok(args: &[&str]) -> Output {
    let o = qcal(args);
    assert_eq!(
        code(&o),
        0,
        "qcal {args:?}\nstdout:\n{}\nstderr:\n{}",
        stdout(&o),
        stderr(&o)
    );
    o
}

fn ci_run(cmd: &str, out: &Path, extra: &[&str]) -> Output {
    let conf = ci_conf();
    let mut args = vec![cmd, "--config", conf.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    run_ok(&args)
}

fn summary(dir: &Path) -> serde_json::Value {
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    v["data"]["metrics"].clone()
}

#[test]
fn help_lists_every_command_and_flag() {
    let o = run_ok(&["--help"]);
    let text = stdout(&o);
    for cmd in [
        "simulate",
        "estimate",
        "calibrate",
        "sweep-energy",
        "sweep-env",
        "accounting",
        "oracle-check",
    ] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
    for flag in [
        "--config",
        "--out",
        "--seed",
        "--force",
        "--workers",
        "--verbose",
        "--assert",
        "--alpha-s",
        "--phi",
        "--wall-time",
        "--resume",
        "--help",
        "--version",
    ] {
        assert!(text.contains(flag), "{flag} missing from help");
    }
    assert!(text.contains("QCAL_SEED"));
}

#[test]
fn version_exits_zero() {
    let o = run_ok(&["--version"]);
    assert!(stdout(&o).contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn usage_errors_exit_one_with_a_hint() {
    let o = qcal(&["simulate", "--no-such-flag"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("qcal --help"), "{}", stderr(&o));
    assert_eq!(code(&qcal(&["frobnicate"])), 1);
    assert_eq!(code(&qcal(&[])), 1);
}

#[test]
fn missing_config_points_at_the_example() {
    let dir = tempfile::tempdir().unwrap();
    let o = qcal(&["simulate", "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("example.conf"), "{}", stderr(&o));
    let o = qcal(&["simulate", "--config", "/nonexistent/qcal.conf"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn malformed_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.conf");
    fs::write(&bad, "[pulse]\nsigma = \"wide\"\n").unwrap();
    let o = qcal(&[
        "simulate",
        "--config",
        bad.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).starts_with("error:"), "{}", stderr(&o));
}

#[test]
fn occupied_output_needs_force() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    fs::create_dir(&out).unwrap();
    fs::write(out.join("keep.txt"), "x").unwrap();
    let conf = ci_conf();
    let args = [
        "simulate",
        "--config",
        conf.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    let o = qcal(&args);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--force"), "{}", stderr(&o));
    let mut forced = args.to_vec();
    forced.push("--force");
    run_ok(&forced);
    assert!(out.join("summary.json").exists());
}

#[test]
fn assertions_gate_the_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = ci_run(
        "simulate",
        &dir.path().join("pass"),
        &["--assert", "n_traj==8", "--assert", "mean_final_z<=1"],
    );
    assert!(stdout(&o).contains("assert n_traj==8 PASS"), "{}", stdout(&o));

    let conf = ci_conf();
    let out = dir.path().join("fail");
    let o = qcal(&[
        "simulate",
        "--config",
        conf.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--assert",
        "n_traj>8",
    ]);
    assert_eq!(code(&o), 3);
    assert!(stdout(&o).contains("assert n_traj>8 FAIL"), "{}", stdout(&o));

    let out = dir.path().join("unknown");
    let o = qcal(&[
        "simulate",
        "--config",
        conf.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--assert",
        "fidelity>=0.9",
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("mean_final_z"), "{}", stderr(&o));
    assert!(!out.exists(), "a rejected assert must not start the run");
}

#[test]
fn seed_precedence_is_flag_then_env_then_file() {
    let dir = tempfile::tempdir().unwrap();
    let conf = ci_conf();
    let seed_of = |out: &Path| -> u64 {
        let v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join("config_resolved.json")).unwrap()).unwrap();
        v["data"]["seed"].as_u64().unwrap()
    };
    let a = dir.path().join("a");
    ci_run("simulate", &a, &[]);
    assert_eq!(seed_of(&a), 7);

    let b = dir.path().join("b");
    let o = Command::new(env!("CARGO_BIN_EXE_qcal"))
        .args([
            "simulate",
            "--config",
            conf.to_str().unwrap(),
            "--out",
            b.to_str().unwrap(),
        ])
        .env("QCAL_SEED", "11")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(seed_of(&b), 11);

    let c = dir.path().join("c");
    let o = Command::new(env!("CARGO_BIN_EXE_qcal"))
        .args([
            "simulate",
            "--config",
            conf.to_str().unwrap(),
            "--out",
            c.to_str().unwrap(),
            "--seed",
            "12",
        ])
        .env("QCAL_SEED", "11")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(seed_of(&c), 12);
    assert_ne!(
        fs::read(a.join("final_states.csv")).unwrap(),
        fs::read(c.join("final_states.csv")).unwrap()
    );
}

#[test]
fn pulse_overrides_reach_the_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    ci_run("simulate", &out, &["--alpha-s", "-0.4", "--phi", "-5"]);
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("config_resolved.json")).unwrap()).unwrap();
    assert_eq!(v["data"]["pulse"]["alpha_s"], -0.4);
    assert_eq!(v["data"]["pulse"]["phi_mhz"], -5.0);
    assert_eq!(v["data"]["pulse"]["optimal_phase"], false);
}

#[test]
fn simulate_writes_matching_text_and_binary_records() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    ci_run("simulate", &out, &[]);
    let bin = qcal::io::read_record_binary(&out.join("trajectory_0000.bin")).unwrap();
    let text = fs::read_to_string(out.join("trajectory_0000.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), bin.header_line);
    let cols: Vec<&str> = lines.next().unwrap().split(',').collect();
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').take(4).map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), bin.times.len());
    let ix = |name: &str| cols.iter().position(|c| *c == name).unwrap();
    for (k, r) in rows.iter().enumerate() {
        assert_eq!(r[ix("t")], bin.times[k]);
        assert_eq!(r[ix("x")], bin.states[k].x);
        assert_eq!(r[ix("z")], bin.states[k].z);
    }
    let finals = fs::read_to_string(out.join("final_states.csv")).unwrap();
    assert_eq!(finals.lines().count(), 2 + 8);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["estimate", "calibrate"] {
        let a = dir.path().join(format!("{cmd}_a"));
        let b = dir.path().join(format!("{cmd}_b"));
        ci_run(cmd, &a, &[]);
        ci_run(cmd, &b, &[]);
        let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        assert!(names.len() > 5);
        for n in names {
            assert_eq!(
                fs::read(a.join(&n)).unwrap(),
                fs::read(b.join(&n)).unwrap(),
                "{cmd}: {n:?} differs"
            );
        }
    }
}

#[test]
fn resumed_calibration_matches_a_straight_run() {
    let dir = tempfile::tempdir().unwrap();
    let straight = dir.path().join("straight");
    ci_run("calibrate", &straight, &[]);
    let trace = fs::read_to_string(straight.join("trace.jsonl")).unwrap();
    // Header plus the three initial tries.
    let partial: String = trace.lines().take(4).map(|l| format!("{l}\n")).collect();
    let partial_path = dir.path().join("partial.jsonl");
    fs::write(&partial_path, partial).unwrap();

    let resumed = dir.path().join("resumed");
    ci_run("calibrate", &resumed, &["--resume", partial_path.to_str().unwrap()]);
    assert_eq!(fs::read_to_string(resumed.join("trace.jsonl")).unwrap(), trace);
    assert_eq!(summary(&resumed), summary(&straight));
}

#[test]
fn sweep_energy_covers_the_full_detuning_range() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("sweep.conf");
    fs::write(
        &conf,
        "seed = 1\n[simulation]\nn_traj = 1\ndt = 0.05\n[pulse]\nt_g = 4.0\nsigma = 1.0\n",
    )
    .unwrap();
    let out = dir.path().join("o");
    run_ok(&[
        "sweep-energy",
        "--config",
        conf.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let text = fs::read_to_string(out.join("sweep_energy.csv")).unwrap();
    let mut lines = text.lines().skip(1);
    let cols: Vec<&str> = lines.next().unwrap().split(',').collect();
    let (di, dr) = (
        cols.iter().position(|c| *c == "detuning_mhz").unwrap(),
        cols.iter().position(|c| *c == "drive").unwrap(),
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2 * 301);
    for drive in ["1", "2"] {
        let d: Vec<f64> = rows
            .iter()
            .filter(|r| r[dr] == drive)
            .map(|r| r[di].parse().unwrap())
            .collect();
        assert_eq!(d.len(), 301);
        assert_eq!((d[0], d[300]), (0.0, -30.0));
    }
    let fig6 = fs::read_to_string(out.join("fig6.csv")).unwrap();
    assert_eq!(fig6.lines().count(), 2 + 301);
    assert_eq!(summary(&out)["n_points"], 301.0);
}

#[test]
fn oracle_check_reports_each_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = qcal(&["oracle-check", "--out", out.to_str().unwrap(), "--seed", "1"]);
    let s = summary(&out);
    let failed = s["checks_failed"].as_f64().unwrap();
    assert_eq!(code(&o), if failed > 0.0 { 3 } else { 0 });
    let text = stdout(&o);
    assert_eq!(
        text.lines()
            .filter(|l| l.starts_with("PASS ") || l.starts_with("FAIL "))
            .count() as f64,
        failed + s["checks_passed"].as_f64().unwrap()
    );
}
