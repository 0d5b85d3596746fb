//! File writers. Column order is fixed; floats use nine significant digits.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use vicopt_core::dynamics::{AXES, INPUT_DIM};
use vicopt_core::runtime::{MetricsConfig, MetricsReport, TrajectoryLog};
use vicopt_core::Scenario;

pub fn num(v: f64) -> String {
    format!("{v:.8e}")
}

/// `#` comment lines carrying everything needed to replay the run.
pub fn header(scenario: &Scenario, mode: &str) -> String {
    let mut s = String::new();
    writeln!(s, "# scenario: {}", scenario.name).unwrap();
    writeln!(s, "# seed: {}", scenario.seed).unwrap();
    writeln!(s, "# mode: {mode}").unwrap();
    for line in scenario.resolved_json().lines() {
        writeln!(s, "# {line}").unwrap();
    }
    s
}

pub fn trajectory_columns() -> Vec<String> {
    let mut cols = vec!["t".to_string()];
    for prefix in ["e", "edot", "F"] {
        cols.extend((1..=AXES).map(|i| format!("{prefix}{i}")));
    }
    cols.extend((1..=INPUT_DIM).map(|i| format!("u{i}")));
    cols.push("h_min".into());
    cols.push("events".into());
    cols
}

pub fn trajectory_csv(scenario: &Scenario, log: &TrajectoryLog) -> String {
    let mut s = header(scenario, log.mode.as_str());
    s.push_str(&trajectory_columns().join(","));
    s.push('\n');
    for r in &log.ticks {
        let mut fields = Vec::with_capacity(3 + 3 * AXES + INPUT_DIM);
        fields.push(num(r.t));
        fields.extend(r.e.iter().map(|v| num(*v)));
        fields.extend(r.e_dot.iter().map(|v| num(*v)));
        fields.extend(r.force.iter().map(|v| num(*v)));
        fields.extend(r.u.iter().map(|v| num(*v)));
        fields.push(num(r.h_min));
        fields.push(r.events.to_string());
        s.push_str(&fields.join(","));
        s.push('\n');
    }
    s
}

/// Solver wall time is left out so the file replays byte for byte.
pub fn updates_csv(scenario: &Scenario, log: &TrajectoryLog) -> String {
    let mut s = header(scenario, log.mode.as_str());
    let mut cols = vec![
        "launch_t".to_string(),
        "apply_t".into(),
        "cost_before".into(),
        "cost_after".into(),
        "status".into(),
        "iterations".into(),
        "evaluations".into(),
        "kkt_residual".into(),
    ];
    cols.extend((1..=INPUT_DIM).map(|i| format!("u{i}")));
    s.push_str(&cols.join(","));
    s.push('\n');
    for u in &log.updates {
        let mut fields = vec![
            num(u.launch_tick as f64 * log.dt),
            num(u.apply_tick as f64 * log.dt),
            num(u.cost_before),
            num(u.cost_after),
            u.status.to_string(),
            u.iterations.to_string(),
            u.evaluations.to_string(),
            num(u.kkt_residual),
        ];
        fields.extend(u.u_after.iter().map(|v| num(*v)));
        s.push_str(&fields.join(","));
        s.push('\n');
    }
    s
}

pub fn metrics_text(scenario: &Scenario, log: &TrajectoryLog, m: &MetricsReport, cfg: &MetricsConfig) -> String {
    let mut s = String::new();
    writeln!(s, "scenario: {}", scenario.name).unwrap();
    writeln!(s, "mode: {}", log.mode).unwrap();
    writeln!(s, "seed: {}", scenario.seed).unwrap();
    writeln!(s, "ticks: {}", log.ticks.len()).unwrap();
    writeln!(s, "updates: {}", log.updates.len()).unwrap();
    writeln!(s, "axis: {}", m.axis + 1).unwrap();
    writeln!(s, "approaching_time_s: {}", m.approaching_time).unwrap();
    writeln!(s, "settling_time_s: {}", m.settling_time).unwrap();
    writeln!(s, "steady_force_variance_N2: {}", m.steady_force_variance).unwrap();
    writeln!(s, "min_barrier_m: {}", m.min_barrier).unwrap();
    writeln!(s, "fitave_total: {:.6e}", m.fitave_total).unwrap();
    writeln!(s, "steady_error_m: {:.6e}", m.steady_error).unwrap();
    writeln!(
        s,
        "settling_band: max({} * |e0 - e_ss|, {}) = {:.3e} m, dwell {} s",
        cfg.band_fraction, cfg.band_floor, m.band, cfg.dwell
    )
    .unwrap();
    writeln!(s, "touch_threshold_N: {}", cfg.touch_threshold).unwrap();
    writeln!(s, "steady_window_s: {}", cfg.steady_window).unwrap();
    if let Some(t) = &log.terminal {
        writeln!(s, "terminal: {t}").unwrap();
    }
    s
}

pub fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))
}
