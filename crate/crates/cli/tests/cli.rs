use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mtclf"))
}

fn shipped(name: &str) -> Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Writes `config` into `dir` with its outputs redirected to `dir/out`.
fn place(dir: &Path, name: &str, mut config: Value) -> PathBuf {
    config["output_dir"] = json!(dir.join("out"));
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

fn run(args: &[&str], config: &Path) -> Output {
    let mut cmd = bin();
    cmd.arg(args[0]).arg(config).args(&args[1..]);
    cmd.output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Value of `key=` in key=value output.
fn field<'a>(text: &'a str, key: &str) -> &'a str {
    let prefix = format!("{key}=");
    text.split_whitespace()
        .find_map(|tok| tok.strip_prefix(prefix.as_str()))
        .unwrap_or_else(|| panic!("no {key} in {text}"))
}

fn single_task(backend: Value, cost: Value) -> Value {
    json!({
        "model": {"kind": "single_integrator", "dim": 2},
        "tasks": [{"label": "T", "backend": backend, "cost": cost}],
        "region": {"lower": [-2, -2], "upper": [2, 2]},
        "grid_resolution": 21,
        "hjb": {"nodes_per_axis": 81},
        "verify": {"samples": 60}
    })
}

#[test]
fn analyze_example_one_finds_a_band_and_no_common_goal() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = place(dir.path(), "e1.cfg", shipped("example1.cfg"));
    let o = run(&["analyze"], &cfg);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(field(&text, "cells"), "40401");
    assert_eq!(field(&text, "common_goals"), "0");
    assert!(field(&text, "non_executable_components").parse::<usize>().unwrap() >= 1);
    let out = dir.path().join("out");
    let csv = std::fs::read_to_string(out.join("grid.csv")).unwrap();
    assert!(csv.starts_with("x1,x2,independent,orthogonal,controllable,executable,angle_0_1\n"));
    assert_eq!(csv.lines().count(), 40402);
    let ppm = std::fs::read(out.join("angle_0_1.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6\n201 201\n255\n"));
    assert!(out.join("angle_0_1.csv").exists());
}

#[test]
fn analyze_example_two_reports_the_shared_goal() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = place(dir.path(), "e2.cfg", shipped("example2.cfg"));
    let o = run(&["analyze"], &cfg);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(field(&text, "common_goals"), "1");
    assert_eq!(field(&text, "common_goal_0"), "(1.500000,-1.500000)");
    assert!(field(&text, "controllable_radius").parse::<f64>().unwrap() > 0.2);
}

#[test]
fn single_task_heatmap_is_a_green_placeholder() {
    let dir = tempfile::tempdir().unwrap();
    let config = single_task(
        json!({"kind": "analytic_goal", "goal": [0, 0], "cost_scale": 1}),
        json!({"kind": "distance", "goals": [[0, 0]], "scale": 1}),
    );
    let cfg = place(dir.path(), "one.cfg", config);
    let o = run(&["analyze"], &cfg);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let ppm = std::fs::read(dir.path().join("out/angle_none.ppm")).unwrap();
    let header = b"P6\n21 21\n255\n";
    assert!(ppm.starts_with(header));
    assert!(ppm[header.len()..].chunks(3).all(|px| px == [0, 255, 0]));
}

#[test]
fn simulate_reproduces_the_example_outcomes() {
    let dir = tempfile::tempdir().unwrap();
    let e1 = place(dir.path(), "e1.cfg", shipped("example1.cfg"));
    let e2 = place(dir.path(), "e2.cfg", shipped("example2.cfg"));
    for (cfg, x0, term) in [
        (&e1, ["0.5", "0.5"], "stalled"),
        (&e2, ["1.0", "-1.0"], "converged"),
        (&e2, ["-1.2", "1.2"], "stalled"),
    ] {
        let o = run(&["simulate", "--x0", x0[0], x0[1]], cfg);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let text = stdout(&o);
        let first = text.lines().next().unwrap();
        assert!(first.starts_with(&format!("term={term} final=(")), "{first}");
        assert!(field(first, "Jmax").parse::<f64>().is_ok());
        let csv = std::fs::read_to_string(dir.path().join("out/trajectory.csv")).unwrap();
        assert!(csv.starts_with("t,x1,x2,u1,u2,J1,J2,delta1,delta2,term\n"));
        assert!(csv.trim_end().ends_with(term));
    }
}

#[test]
fn simulate_sigma_flag_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = place(dir.path(), "e2.cfg", shipped("example2.cfg"));
    let o = run(&["simulate", "--x0", "1.0", "-1.0", "--sigma", "discounted"], &cfg);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("term=converged"));
}

#[test]
fn infeasible_box_constraint_exits_with_qp_failure() {
    let dir = tempfile::tempdir().unwrap();
    let config = json!({
        "model": {"kind": "linear", "a": [[1, 0], [0, 1]], "b": [[1, 0], [0, 1]]},
        "tasks": [{"backend": {"kind": "analytic_goal", "goal": [0, 0], "cost_scale": 1}}],
        "controller": {"box_invariance": true, "input_limit": 1.0},
        "region": {"lower": [-2, -2], "upper": [2, 2]}
    });
    let cfg = place(dir.path(), "lin.cfg", config);
    let o = run(&["simulate", "--x0", "2", "0"], &cfg);
    assert_eq!(o.status.code(), Some(4), "{}", stdout(&o));
    assert!(stderr(&o).contains("step 0"), "{}", stderr(&o));
}

#[test]
fn zero_cost_solves_to_an_all_zero_grid() {
    let dir = tempfile::tempdir().unwrap();
    let config = single_task(
        json!({"kind": "analytic_goal", "goal": [0, 0], "cost_scale": 1}),
        json!({"kind": "zero"}),
    );
    let cfg = place(dir.path(), "zero.cfg", config);
    let o = run(&["solve-hjb", "--task", "0"], &cfg);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("out/task0.vfgrid")).unwrap();
    let values = text.lines().rfind(|l| !l.trim().is_empty()).unwrap();
    assert_eq!(values.split_whitespace().count(), 81 * 81);
    assert!(values.split_whitespace().all(|v| v.parse::<f64>().unwrap() == 0.0));
    assert_eq!(field(&stdout(&o), "sweeps"), "1");
}

#[test]
fn sweep_budget_exhaustion_exits_with_non_convergence() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = shipped("example1.cfg");
    config["hjb"] = json!({"nodes_per_axis": 41, "max_sweeps": 2});
    let cfg = place(dir.path(), "e1.cfg", config);
    let o = run(&["solve-hjb", "--task", "0"], &cfg);
    assert_eq!(o.status.code(), Some(5));
    assert!(stderr(&o).contains("residual"), "{}", stderr(&o));
}

#[test]
fn discounted_grid_round_trips_through_every_command() {
    let dir = tempfile::tempdir().unwrap();
    // Default 161 nodes: coarser tables miss the 5% recovery bound near the goal.
    let src = place(dir.path(), "src.cfg", shipped("example2.cfg"));
    let grid = dir.path().join("j2.vfgrid");
    let o = run(&["solve-hjb", "--task", "0", "--discount", "0.5", "--out", grid.to_str().unwrap()], &src);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(field(&stdout(&o), "discount"), "0.5");

    let mut config = shipped("example2_discounted.cfg");
    config["tasks"][0]["backend"]["path"] = json!("j2.vfgrid");
    config["grid_resolution"] = json!(41);
    let cfg = place(dir.path(), "disc.cfg", config);

    let o = run(&["verify"], &cfg);
    assert_eq!(o.status.code(), Some(0), "{}\n{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("check=recovery_discounted task=J2 backend=tabulated"));
    for args in [&["analyze"][..], &["simulate", "--x0", "1.0", "-1.0"][..]] {
        let o = run(args, &cfg);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        assert!(o.stderr.is_empty(), "{}", stderr(&o));
    }

    // Tripled values no longer solve the HJB equation.
    let text = std::fs::read_to_string(&grid).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
    let last = lines.len() - 1;
    lines[last] = lines[last]
        .split_whitespace()
        .map(|v| (3.0 * v.parse::<f64>().unwrap()).to_string())
        .collect::<Vec<_>>()
        .join(" ");
    std::fs::write(&grid, lines.join("\n")).unwrap();
    let o = run(&["verify"], &cfg);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("verify=fail failing=recovery_discounted[J2]"), "{}", stdout(&o));
    assert!(stderr(&o).contains("recovery_discounted[J2]"));
}

#[test]
fn corrupted_weight_file_fails_recovery() {
    let dir = tempfile::tempdir().unwrap();
    let weights = json!({"layers": [
        {"weights": [[0.8, -0.3], [0.1, 0.9], [-0.5, 0.4]], "bias": [0.1, -0.2, 0.0], "activation": "tanh"},
        {"weights": [[1.2, -0.7, 0.5]], "bias": [0.3], "activation": "softplus"}
    ]});
    std::fs::write(dir.path().join("net.json"), weights.to_string()).unwrap();
    let config = single_task(
        json!({"kind": "neural", "path": "net.json"}),
        json!({"kind": "distance", "goals": [[0, 0]], "scale": 1}),
    );
    let cfg = place(dir.path(), "net.cfg", config);
    let o = run(&["verify"], &cfg);
    assert_eq!(o.status.code(), Some(1));
    let text = stdout(&o);
    assert!(text.contains("check=gradient_fd task=T backend=neural samples=60"));
    assert!(text.contains("result=pass"), "{text}");
    assert!(field(&text, "failing").contains("recovery_undiscounted[T]"), "{text}");
}

#[test]
fn shipped_analytic_configs_verify() {
    for name in ["example1.cfg", "example2.cfg"] {
        let dir = tempfile::tempdir().unwrap();
        let cfg = place(dir.path(), name, shipped(name));
        let o = run(&["verify"], &cfg);
        assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
        assert!(stdout(&o).ends_with("verify=pass\n"));
    }
}

#[test]
fn config_and_io_errors_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "{ not json").unwrap();
    assert_eq!(run(&["analyze"], &bad).status.code(), Some(2));

    let missing = dir.path().join("missing.cfg");
    assert_eq!(run(&["analyze"], &missing).status.code(), Some(3));

    let mut config = shipped("example1.cfg");
    config["tasks"] = json!([]);
    let empty = place(dir.path(), "empty.cfg", config);
    assert_eq!(run(&["analyze"], &empty).status.code(), Some(2));

    let cfg = place(dir.path(), "e1.cfg", shipped("example1.cfg"));
    let o = run(&["simulate", "--x0", "0.5"], &cfg);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["simulate", "--x0", "3", "0"], &cfg);
    assert_eq!(o.status.code(), Some(2));

    // The output directory is blocked by a regular file.
    let mut config = shipped("example1.cfg");
    config["grid_resolution"] = json!(11);
    let cfg = place(dir.path(), "blocked.cfg", config);
    std::fs::write(dir.path().join("out"), "file").unwrap();
    assert_eq!(run(&["analyze"], &cfg).status.code(), Some(3));
}

#[test]
fn thread_cap_is_honoured_and_validated() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = shipped("example1.cfg");
    config["grid_resolution"] = json!(31);
    let cfg = place(dir.path(), "e1.cfg", config);
    let ok = bin().env("MTCLF_THREADS", "1").arg("analyze").arg(&cfg).output().unwrap();
    assert_eq!(ok.status.code(), Some(0), "{}", stderr(&ok));
    let bad = bin().env("MTCLF_THREADS", "zero").arg("analyze").arg(&cfg).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
}
