use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hybrid_sl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hybrid-sl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap()
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&read(dir, "summary.json")).unwrap()
}

#[test]
fn policy_iteration_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = hybrid_sl(&[
        "run",
        "--benchmark",
        "weak_strong",
        "--solver",
        "pi",
        "--eps",
        "1e-12",
        "--out",
        out,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 1);
    assert!(stdout.starts_with("weak_strong pi: "));
    for f in [
        "value.csv",
        "policy.csv",
        "trajectory.csv",
        "switches.csv",
        "convergence.csv",
        "summary.json",
    ] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let s = summary(dir.path());
    let improvements = s["solver"]["policy_improvements"].as_u64().unwrap();
    assert!((9..=15).contains(&improvements));
    // the summary and the convergence history agree on the count
    let rows = read(dir.path(), "convergence.csv").lines().count() - 1;
    assert_eq!(rows as u64, s["solver"]["iterations"].as_u64().unwrap());
    assert_eq!(read(dir.path(), "value.csv").lines().count(), 1 + 200);
    assert_eq!(
        read(dir.path(), "trajectory.csv").lines().next().unwrap(),
        "t,x1,q,alpha"
    );
}

#[test]
fn huge_tolerance_stops_after_one_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = hybrid_sl(&[
        "run",
        "--benchmark",
        "weak_strong",
        "--solver",
        "vi",
        "--eps",
        "1e30",
        "--out",
        out,
    ]);
    assert!(o.status.success());
    assert_eq!(summary(dir.path())["solver"]["iterations"], 1);
}

#[test]
fn non_convergence_exits_nonzero_after_writing_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = hybrid_sl(&[
        "run",
        "--benchmark",
        "weak_strong",
        "--eps",
        "1e-9",
        "--max-iters",
        "3",
        "--out",
        out,
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no convergence"));
    assert_eq!(summary(dir.path())["solver"]["converged"], false);
}

#[test]
fn unknown_flags_and_names_are_errors() {
    assert!(!hybrid_sl(&["run", "--benchmark", "weak_strong", "--colour", "red"])
        .status
        .success());
    let o = hybrid_sl(&["run", "--benchmark", "pendulum"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown benchmark"));
    assert!(!hybrid_sl(&["run", "--benchmark", "weak_strong", "--solver", "newton"])
        .status
        .success());
}

#[test]
fn identical_runs_reproduce_every_file() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = dir.path().to_str().unwrap();
        let o = hybrid_sl(&[
            "run",
            "--benchmark",
            "chemotherapy",
            "--solver",
            "mpi",
            "--eps",
            "1e-2",
            "--nodes",
            "30",
            "--tf",
            "10",
            "--out",
            out,
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in [
        "value.csv",
        "policy.csv",
        "trajectory.csv",
        "switches.csv",
        "convergence.csv",
    ] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f}");
    }
    // wall time is the only field allowed to differ
    let (mut sa, mut sb) = (summary(a.path()), summary(b.path()));
    sa["solver"]["wall_time"] = 0.into();
    sb["solver"]["wall_time"] = 0.into();
    assert_eq!(sa, sb);
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    let out = dir.path().join("out");
    fs::write(
        &cfg,
        format!(
            "# small weak-strong run\nbenchmark = weak_strong\nsolver = vi\neps = 1e-2\nnodes = 41\nout = {}\n",
            out.display()
        ),
    )
    .unwrap();
    let o = hybrid_sl(&["run", "--benchmark", cfg.to_str().unwrap(), "--nodes", "31"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(&out);
    assert_eq!(s["grid"]["nodes"][0], 31);
    assert_eq!(s["solver"]["method"], "vi");
    assert_eq!(s["solver"]["tolerance"], 1e-2);

    fs::write(&cfg, "benchmark = weak_strong\nspeed = 3\n").unwrap();
    assert!(!hybrid_sl(&["run", "--benchmark", cfg.to_str().unwrap()])
        .status
        .success());
}

#[test]
fn compare_tabulates_methods_per_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = hybrid_sl(&[
        "compare",
        "--benchmark",
        "weak_strong",
        "--methods",
        "vi,pi",
        "--eps",
        "1e-3,1e-6,1e-12",
        "--out",
        out,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = read(dir.path(), "comparison.csv");
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(
        rows[0],
        "eps,method,iterations,policy_improvements,final_residual,wall_time,converged"
    );
    assert_eq!(rows.len(), 7);
    let diffs = read(dir.path(), "cross_difference.csv");
    assert_eq!(diffs.lines().next().unwrap(), "eps,method,vi,pi");
    assert_eq!(diffs.lines().count(), 7);
}

#[test]
fn mpi_with_single_sweep_matches_vi() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = hybrid_sl(&[
        "compare",
        "--benchmark",
        "three_gear",
        "--methods",
        "vi,mpi",
        "--nit",
        "1",
        "--eps",
        "1e-4",
        "--out",
        out,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = read(dir.path(), "comparison.csv");
    let counts: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').nth(2).unwrap()).collect();
    assert_eq!(counts[0], counts[1]);
    let diffs = read(dir.path(), "cross_difference.csv");
    for line in diffs.lines().skip(1) {
        for v in line.split(',').skip(2) {
            assert_eq!(v.parse::<f64>().unwrap(), 0.0);
        }
    }
}

#[test]
fn compare_needs_two_methods() {
    let o = hybrid_sl(&["compare", "--benchmark", "weak_strong", "--methods", "vi"]);
    assert!(!o.status.success());
}
