use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use vicopt_cli::{compare, comparison_csv, parse_modes};
use vicopt_core::runtime::ControllerMode;
use vicopt_core::Scenario;

fn scenario_path(name: &str) -> PathBuf {
    [env!("CARGO_MANIFEST_DIR"), "..", "..", "scenarios", name].iter().collect()
}

fn vicopt(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_vicopt")).args(args).output().unwrap()
}

fn data_rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().filter(|l| !l.starts_with('#')).map(str::to_string).collect()
}

#[test]
fn equilibrium_run_writes_zero_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out =
        vicopt(&["run", scenario_path("equilibrium.json").to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let rows = data_rows(&dir.path().join("trajectory.csv"));
    assert_eq!(rows.len(), 6 * 125 + 1);
    let header: Vec<&str> = rows[0].split(',').collect();
    assert_eq!(header.len(), 1 + 18 + 18 + 2);
    assert_eq!(header[1], "e1");
    assert_eq!(header[header.len() - 2], "h_min");
    for row in &rows[1..] {
        let cells: Vec<f64> = row.split(',').map(|c| c.parse().unwrap()).collect();
        assert!(cells[1..7].iter().all(|v| *v == 0.0));
    }
    // Nine significant digits.
    assert_eq!(rows[2].split(',').next().unwrap(), "8.00000000e-3");

    let text = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert!(text.starts_with("# scenario: equilibrium\n# seed: 0\n"));
    assert!(text.contains("#     \"tick_rate\": 125.0"));
    assert!(dir.path().join("updates.csv").exists());
    let metrics = fs::read_to_string(dir.path().join("metrics.txt")).unwrap();
    assert!(metrics.contains("approaching_time_s: N/A"));
}

#[test]
fn header_replays_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a");
    let out = vicopt(&[
        "run",
        scenario_path("exp2_board_soft.json").to_str().unwrap(),
        "--seed",
        "99",
        "--out",
        first.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = fs::read_to_string(first.join("trajectory.csv")).unwrap();
    assert!(text.contains("# seed: 99\n"));

    // The embedded scenario alone reproduces the file.
    let json: String = text
        .lines()
        .skip(3)
        .take_while(|l| l.starts_with('#'))
        .map(|l| l.strip_prefix("# ").unwrap_or(""))
        .collect::<Vec<_>>()
        .join("\n");
    let replay = dir.path().join("replay.json");
    fs::write(&replay, json).unwrap();
    let second = dir.path().join("b");
    assert!(vicopt(&["run", replay.to_str().unwrap(), "--out", second.to_str().unwrap()]).status.success());
    assert_eq!(text, fs::read_to_string(second.join("trajectory.csv")).unwrap());
}

#[test]
fn compare_needs_two_modes() {
    assert!(parse_modes(&["constant_gain".into()]).is_err());
    assert!(parse_modes(&["constant_gain".into(), "nonsense".into()]).is_err());
    let out = vicopt(&["compare", scenario_path("exp2_board_soft.json").to_str().unwrap(), "--modes", "safe_ongo_vic"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("at least two modes"));
}

#[test]
fn board_table_is_complete_and_stable() {
    let boards: Vec<Scenario> = ["soft", "medium", "stiff"]
        .iter()
        .map(|b| Scenario::load(&scenario_path(&format!("exp2_board_{b}.json"))).unwrap())
        .collect();
    let modes = [ControllerMode::ConstantGain, ControllerMode::SafeOnGoVic];
    let table = comparison_csv(&compare(&boards, &modes).unwrap());
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 1 + 6);
    for l in &lines[1..] {
        assert!(l.split(',').all(|c| !c.is_empty()), "{l}");
    }
    // No safe set on the boards, so the barrier column is N/A.
    assert!(lines[1].contains(",N/A,"));
    assert_eq!(table, comparison_csv(&compare(&boards, &modes).unwrap()));
}

#[test]
fn compare_writes_table_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = vicopt(&[
        "compare",
        scenario_path("exp2_board_stiff.json").to_str().unwrap(),
        "--modes",
        "constant_gain,safe_ongo_vic",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let txt = fs::read_to_string(dir.path().join("comparison.txt")).unwrap();
    assert!(txt.starts_with("scenario"));
    assert_eq!(fs::read_to_string(dir.path().join("comparison.csv")).unwrap().lines().count(), 3);
}

#[test]
fn fig2_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let d = dir.path().join(run);
        let out = vicopt(&["fig2", "--out", d.to_str().unwrap()]);
        assert!(out.status.success());
        outputs.push((fs::read(d.join("fig2.csv")).unwrap(), fs::read(d.join("fig2_summary.txt")).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
    let rows = data_rows(&dir.path().join("a").join("fig2.csv"));
    assert_eq!(rows[0], "t,e_fitave,edot_fitave,F_fitave,e_itae,edot_itae,F_itae,e_manual,edot_manual,F_manual");
    // All three start from the same state.
    let first: Vec<&str> = rows[1].split(',').collect();
    assert_eq!(first[1], first[4]);
    assert_eq!(first[1], first[7]);
}

#[test]
fn validate_reports_the_failing_field() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(
        &bad,
        r#"{"name": "x", "safe_set": {"d_lb": 0.1, "d_ub": 0.1, "active": [true, false, false, false, false, false]}}"#,
    )
    .unwrap();
    let out = vicopt(&["validate", bad.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("invalid safe_set"));

    let ok = vicopt(&["validate", scenario_path("fig2.json").to_str().unwrap()]);
    assert!(ok.status.success());
    assert!(String::from_utf8_lossy(&ok.stdout).contains("\"substeps\": 8"));
}

#[test]
fn latency_flag_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let path = scenario_path("equilibrium.json");
    let out = vicopt(&["run", path.to_str().unwrap(), "--latency", "5", "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    let out = vicopt(&["run", path.to_str().unwrap(), "--latency", "0.6", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    assert!(fs::read_to_string(dir.path().join("trajectory.csv")).unwrap().contains("\"solve_latency\": 0.6"));
}
