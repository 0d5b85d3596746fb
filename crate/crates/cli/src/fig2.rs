//! One-axis surface contact solved three ways: gains tuned for the
//! time-weighted velocity cost, gains tuned for the time-weighted position
//! cost, and a fixed manual set.

use anyhow::{anyhow, Result};
use vicopt_core::dynamics::{input_from_gains, GainInput};
use vicopt_core::objective::{
    fitave, itae, rollout, rollout_cost, CostKind, ForceSource, RolloutConfig, TrajectoryWindow,
};
use vicopt_core::runtime::optimize_axes;
use vicopt_core::Scenario;

pub const BUNDLED: &str = include_str!("../../../scenarios/fig2.json");

#[derive(Debug, Clone)]
pub struct Fig2Trajectory {
    pub label: &'static str,
    pub axis: usize,
    pub gains: GainInput,
    pub window: TrajectoryWindow,
    pub fitave: f64,
    pub itae: f64,
    /// Largest contact-axis speed from first touch on.
    pub contact_peak: f64,
    pub touch_time: Option<f64>,
}

pub fn bundled_scenario() -> Result<Scenario> {
    Ok(Scenario::from_json(BUNDLED)?)
}

pub fn run(scenario: &Scenario) -> Result<Vec<Fig2Trajectory>> {
    let surface = scenario.surfaces.first().ok_or_else(|| anyhow!("scenario '{}' has no surface", scenario.name))?;
    let axis = surface.normal_axis;
    let env = scenario.environment()?;
    let cfg = &scenario.loop_config;
    let rollout_cfg = |kind| RolloutConfig::new(scenario.episode_length, cfg.dt(), kind).with_substeps(cfg.substeps);
    let source = ForceSource::live(&env);
    let init = scenario.initial_state;
    let u0 = scenario.initial_input();

    let tuned = |kind: CostKind| -> Result<GainInput> {
        let rc = rollout_cfg(kind);
        let cost = |u: &GainInput| rollout_cost(u, &init, &source, &rc);
        let (u, rep) = optimize_axes(cost, u0.as_vector(), &[axis], &scenario.gain_bounds, &cfg.sqp)?;
        log::info!("{kind:?}-tuned gains: cost {:.6e}, {} iterations, {}", rep.objective, rep.iterations, rep.status);
        Ok(GainInput::new(u)?)
    };
    let candidates = [
        ("fitave", tuned(CostKind::Fitave)?),
        ("itae", tuned(CostKind::Itae)?),
        ("manual", input_from_gains(&scenario.baseline_gains)),
    ];

    let threshold = scenario.metrics.touch_threshold;
    candidates
        .into_iter()
        .map(|(label, gains)| {
            let window = rollout(&gains, &init, &source, &rollout_cfg(CostKind::Fitave))?;
            let s = window.samples();
            let touch = s.iter().position(|x| x.force[axis].abs() > threshold);
            let contact_peak = touch.map_or(0.0, |k| s[k..].iter().map(|x| x.e_dot[axis].abs()).fold(0.0, f64::max));
            Ok(Fig2Trajectory {
                label,
                axis,
                gains,
                fitave: fitave(&window),
                itae: itae(&window),
                contact_peak,
                touch_time: touch.map(|k| s[k].t),
                window,
            })
        })
        .collect()
}

pub fn csv(scenario: &Scenario, runs: &[Fig2Trajectory]) -> String {
    use crate::output::{header, num};
    let axis = scenario.surfaces.first().map_or(0, |s| s.normal_axis);
    let mut out = header(scenario, "fig2");
    let mut cols = vec!["t".to_string()];
    for r in runs {
        cols.extend([format!("e_{}", r.label), format!("edot_{}", r.label), format!("F_{}", r.label)]);
    }
    out.push_str(&cols.join(","));
    out.push('\n');
    let n = runs.iter().map(|r| r.window.len()).min().unwrap_or(0);
    for k in 0..n {
        let mut fields = vec![num(runs[0].window.samples()[k].t)];
        for r in runs {
            let x = &r.window.samples()[k];
            fields.extend([num(x.e[axis]), num(x.e_dot[axis]), num(x.force[axis])]);
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn summary(runs: &[Fig2Trajectory]) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    writeln!(
        s,
        "{:<8} {:>12} {:>12} {:>14} {:>10} {:>10} {:>10} {:>10}",
        "gains", "fitave", "itae", "contact_peak", "touch_s", "mass", "damping", "stiffness"
    )
    .unwrap();
    for r in runs {
        let axis = r.axis;
        let g = vicopt_core::dynamics::recover_gains(&r.gains);
        let touch = r.touch_time.map_or("N/A".to_string(), |t| format!("{t:.3}"));
        writeln!(
            s,
            "{:<8} {:>12.6e} {:>12.6e} {:>14.6e} {:>10} {:>10.4} {:>10.4} {:>10.4}",
            r.label, r.fitave, r.itae, r.contact_peak, touch, g.mass[axis], g.damping[axis], g.stiffness[axis]
        )
        .unwrap();
    }
    let best = runs.iter().min_by(|a, b| a.fitave.total_cmp(&b.fitave)).map(|r| r.label).unwrap_or("-");
    writeln!(s, "lowest fitave: {best}").unwrap();
    s
}
