//! End-to-end checks of the rbsde-lab binary: verbs, exit codes, file
//! outputs, and byte-identical reports.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_rbsde-lab")
}

fn tmp_dir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    Command::new(binary()).args(args).output().expect("binary runs")
}

fn run_with_env(args: &[&str], key: &str, value: &str) -> Output {
    Command::new(binary()).args(args).env(key, value).output().expect("binary runs")
}

#[test]
fn solve_writes_solution_and_report() {
    let dir = tmp_dir("solve_ok");
    let csv = dir.join("solution.csv");
    let report = dir.join("report.json");
    let config = write_config(
        &dir,
        "constant.json",
        &format!(
            r#"{{
                "grid": {{"T": 1.0, "N": 2}},
                "driver": {{"kind": "zero"}},
                "obstacle": {{"kind": "constant", "value": 1.0}},
                "outputs": {{"solution_csv": {csv:?}, "report_json": {report:?}}}
            }}"#
        ),
    );
    let output = run(&["solve", config.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&output.stderr));

    let csv_text = std::fs::read_to_string(&csv).unwrap();
    assert!(csv_text.starts_with("level,path_word,t,xi,xi_plus,Y,Y_plus,Z,dA,dC\n"));
    assert_eq!(csv_text.lines().count(), 1 + 7); // header + 1 + 2 + 4 nodes

    let report_value: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(report_value["y0"], 1.0);
    assert_eq!(report_value["risk"], -1.0);
    assert_eq!(report_value["skorokhod"]["pass"], true);
    // Constant obstacle: stop immediately; the root's path word is empty.
    assert_eq!(report_value["stopping"]["tau_star"][0], "");
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let dir = tmp_dir("solve_repeat");
    let report_a = dir.join("a.json");
    let report_b = dir.join("b.json");
    for (name, report) in [("a", &report_a), ("b", &report_b)] {
        let config = write_config(
            &dir,
            &format!("{name}.config.json"),
            &format!(
                r#"{{
                    "grid": {{"T": 1.0, "N": 4}},
                    "driver": {{"kind": "abs_z"}},
                    "obstacle": {{"kind": "random", "seed": 11, "bounds": [-1.0, 1.0]}},
                    "outputs": {{"report_json": {report:?}}}
                }}"#
            ),
        );
        let output = run(&["solve", config.to_str().unwrap()]);
        assert_eq!(output.status.code(), Some(0));
    }
    assert_eq!(std::fs::read(&report_a).unwrap(), std::fs::read(&report_b).unwrap());
}

#[test]
fn invalid_obstacle_exits_2_and_lists_the_violation() {
    let dir = tmp_dir("solve_bad_obstacle");
    let config = write_config(
        &dir,
        "bad.json",
        r#"{
            "grid": {"T": 1.0, "N": 2},
            "driver": {"kind": "zero"},
            "obstacle": {"kind": "constant", "value": 0.0,
                         "right_jumps": [{"time_index": 1, "point": 0.0, "right_limit": 1.0}]}
        }"#,
    );
    let output = run(&["solve", config.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("right upper-semicontinuity"), "stderr: {stderr}");
}

#[test]
fn malformed_config_exits_2() {
    let dir = tmp_dir("solve_malformed");
    let config = write_config(&dir, "junk.json", "{not json");
    let output = run(&["solve", config.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn converge_emits_the_expected_table() {
    let dir = tmp_dir("converge");
    let config = write_config(
        &dir,
        "spike.json",
        r#"{
            "grid": {"T": 1.0, "N": 2},
            "driver": {"kind": "zero"},
            "obstacle": {"kind": "deterministic_table", "values": [0.0, 1.0, 0.0], "right_limits": [0.0, 0.0]}
        }"#,
    );
    let output = run(&["converge", config.to_str().unwrap(), "--grid", "10,20,40"]);
    assert_eq!(output.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&output.stdout);
    let mut lines = stdout.lines();
    assert_eq!(lines.next(), Some("N,Y0,abs_error"));
    for (line, n) in lines.zip([10, 20, 40]) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[0], n.to_string());
        // The pinned spike forces Y0 = 1 at every N.
        assert_eq!(fields[1].parse::<f64>().unwrap(), 1.0);
        assert_eq!(fields[2].parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn props_with_zero_instances_exits_0_with_an_empty_report() {
    let output = run(&["props", "--seed", "1", "--count", "0", "--depth", "3"]);
    assert_eq!(output.status.code(), Some(0));
    let report: serde_json::Value =
        serde_json::from_slice(&output.stdout).expect("stdout is the JSON report");
    assert_eq!(report["total_checks"], 0);
    assert_eq!(report["total_failures"], 0);
    assert_eq!(report["properties"].as_array().unwrap().len(), 0);
}

#[test]
fn props_exits_0_on_a_clean_run_and_is_thread_count_invariant() {
    let dir = tmp_dir("props_identical");
    let out_a = dir.join("a.json");
    let out_b = dir.join("b.json");
    let base = ["props", "--seed", "9", "--count", "12", "--depth", "3"];
    let output = run(&[&base[..], &["--output", out_a.to_str().unwrap(), "--threads", "1"]].concat());
    assert_eq!(output.status.code(), Some(0));
    let output = run_with_env(
        &[&base[..], &["--output", out_b.to_str().unwrap()]].concat(),
        "RBSDE_LAB_THREADS",
        "5",
    );
    assert_eq!(output.status.code(), Some(0));
    assert_eq!(std::fs::read(&out_a).unwrap(), std::fs::read(&out_b).unwrap());
}

#[test]
fn props_mutation_hook_reports_failures() {
    for mutation in ["bias_root", "drop_right_jumps"] {
        let output = run(&[
            "props", "--seed", "3", "--count", "6", "--depth", "3", "--mutate", mutation,
        ]);
        assert_eq!(output.status.code(), Some(1), "mutation {mutation} went unnoticed");
        let report: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
        assert!(report["total_failures"].as_u64().unwrap() > 0);
        assert_eq!(report["mutation"], mutation);
    }
    let output = run(&["props", "--count", "1", "--mutate", "no_such_hook"]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn props_depth_guard() {
    let output = run(&["props", "--seed", "1", "--count", "1", "--depth", "7"]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn jump_scenario_runs_end_to_end() {
    let dir = tmp_dir("solve_jump");
    let report = dir.join("report.json");
    let config = write_config(
        &dir,
        "jump.json",
        &format!(
            r#"{{
                "grid": {{"T": 1.0, "N": 3}},
                "mode": {{"jump": {{"lambda": 0.6, "mark": 1.0}}}},
                "driver": {{"kind": "custom:jump_linear", "params": {{"a": -0.3, "b": 0.2, "theta": 0.5}}}},
                "obstacle": {{"kind": "random", "seed": 4, "bounds": [-1.0, 1.0]}},
                "outputs": {{"report_json": {report:?}}}
            }}"#
        ),
    );
    let output = run(&["solve", config.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let report_value: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(report_value["skorokhod"]["pass"], true);
    assert!(report_value["budget_residual"].as_f64().unwrap() <= 1e-12);
}

#[test]
fn jump_probability_overflow_exits_2() {
    let dir = tmp_dir("solve_jump_overflow");
    let config = write_config(
        &dir,
        "overflow.json",
        r#"{
            "grid": {"T": 1.0, "N": 1},
            "mode": {"jump": {"lambda": 1.2, "mark": 1.0}},
            "driver": {"kind": "zero"},
            "obstacle": {"kind": "constant", "value": 1.0}
        }"#,
    );
    let output = run(&["solve", config.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("jump probability"));
}

#[test]
fn primary_acceptance_run_is_clean() {
    // The suite's headline configuration: seed 42, 100 instances, depth 3.
    let output = run(&["props", "--seed", "42", "--count", "100", "--depth", "3"]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let report: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(report["total_failures"], 0);
    assert!(report["total_checks"].as_u64().unwrap() > 1000);
}

#[test]
fn understated_lipschitz_constant_exits_2() {
    let dir = tmp_dir("solve_bad_k");
    let config = write_config(
        &dir,
        "bad_k.json",
        r#"{
            "grid": {"T": 1.0, "N": 4},
            "driver": {"kind": "abs_z", "K": 0.1},
            "obstacle": {"kind": "constant", "value": 0.0}
        }"#,
    );
    let output = run(&["solve", config.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("Lipschitz"));
}

#[test]
fn jump_mode_props_run_is_clean() {
    let output = run(&["props", "--seed", "42", "--count", "40", "--depth", "3", "--jump-mode"]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let report: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(report["total_failures"], 0);
    assert_eq!(report["jump_mode"], true);
}
