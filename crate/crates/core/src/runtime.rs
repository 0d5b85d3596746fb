//! The two-rate executive.
//!
//! Every tick: shift the error for reference changes, evaluate the contact and
//! disturbance wrench, project the current optimal gains onto the barrier
//! constraints, log, and integrate. Every `T` seconds the buffered window is
//! handed to the FITAVE optimizer; its result replaces the optimal gains either
//! in the same tick or after a simulated solve latency.

use std::thread::JoinHandle;
use std::time::Duration;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::dynamics::{
    input_from_gains, recover_gains, GainBounds, GainInput, ImpedanceGains, InputVector, Integrator, Vec6, AXES,
    DAMPING_BLOCK, INPUT_DIM, INVERSE_MASS_BLOCK, STIFFNESS_BLOCK,
};
use crate::environment::{reference_at, Environment};
use crate::objective::{fitave, window_cost, CostKind, EvaluationMode, Sample, TrajectoryWindow};
use crate::optimizer::{
    safety_projection, sqp_solve, LinearConstraints, OptimizerError, QpOptions, SolveReport, SolveStatus, SqpOptions,
};
use crate::safety::{barrier_values, bound_rows, constraint_row, BarrierParams};
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ControllerMode {
    SafeOnGoVic,
    ConstantGain,
}

impl ControllerMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ControllerMode::SafeOnGoVic => "safe_ongo_vic",
            ControllerMode::ConstantGain => "constant_gain",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "safe_ongo_vic" | "ongo" | "proposed" => Some(ControllerMode::SafeOnGoVic),
            "constant_gain" | "constant" | "cgic" => Some(ControllerMode::ConstantGain),
            _ => None,
        }
    }
}

impl std::fmt::Display for ControllerMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopConfig {
    pub tick_rate: f64,
    pub buffer_period: f64,
    pub gamma: f64,
    pub substeps: usize,
    pub mode: ControllerMode,
    /// Simulated time between launching a gain update and applying it.
    pub solve_latency: f64,
    pub cost: CostKind,
    pub evaluation: EvaluationMode,
    pub sqp: SqpOptions,
    pub qp: QpOptions,
    pub relax_penalty: f64,
}

pub const DEFAULT_TICK_RATE: f64 = 125.0;
pub const DEFAULT_BUFFER_PERIOD: f64 = 3.0;
/// The solve time reported for the hardware setup.
pub const PAPER_SOLVE_LATENCY: f64 = 0.6;

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            tick_rate: DEFAULT_TICK_RATE,
            buffer_period: DEFAULT_BUFFER_PERIOD,
            gamma: crate::safety::DEFAULT_GAMMA,
            substeps: 1,
            mode: ControllerMode::SafeOnGoVic,
            solve_latency: 0.0,
            cost: CostKind::Fitave,
            evaluation: EvaluationMode::Resimulate,
            sqp: SqpOptions { tol: 1e-6, ..SqpOptions::default() },
            qp: QpOptions::default(),
            relax_penalty: crate::optimizer::DEFAULT_RELAX_PENALTY,
        }
    }
}

impl LoopConfig {
    pub fn dt(&self) -> f64 {
        1.0 / self.tick_rate
    }

    /// Ticks per low-frequency period.
    pub fn period_ticks(&self) -> usize {
        (self.buffer_period * self.tick_rate).round() as usize
    }

    pub fn latency_ticks(&self) -> usize {
        (self.solve_latency * self.tick_rate).round() as usize
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.tick_rate.is_finite() && self.tick_rate > 0.0) {
            return Err(format!("tick_rate must be > 0, got {}", self.tick_rate));
        }
        if !(self.buffer_period.is_finite() && self.buffer_period >= 1.0 / self.tick_rate) {
            return Err(format!("buffer_period must be at least one tick, got {}", self.buffer_period));
        }
        if self.period_ticks() < 2 {
            return Err("buffer_period must span at least two ticks".into());
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(format!("gamma must be > 0, got {}", self.gamma));
        }
        if self.substeps == 0 {
            return Err("substeps must be >= 1".into());
        }
        if !(self.solve_latency.is_finite() && self.solve_latency >= 0.0 && self.solve_latency < self.buffer_period) {
            return Err(format!("solve_latency must lie in [0, buffer_period), got {}", self.solve_latency));
        }
        if !(self.relax_penalty.is_finite() && self.relax_penalty > 0.0) {
            return Err("relax_penalty must be > 0".into());
        }
        if self.sqp.max_iter == 0 {
            return Err("sqp max_iter must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsConfig {
    /// Axis for contact force and settling; defaults to the first surface normal.
    pub axis: Option<usize>,
    pub touch_threshold: f64,
    pub band_fraction: f64,
    pub band_floor: f64,
    pub dwell: f64,
    pub steady_window: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { axis: None, touch_threshold: 0.5, band_fraction: 0.02, band_floor: 1e-3, dwell: 1.0, steady_window: 3.0 }
    }
}

/// Per-tick event bits written to the trajectory log.
pub mod events {
    pub const UPDATE_LAUNCHED: u32 = 1;
    pub const UPDATE_APPLIED: u32 = 1 << 1;
    /// The safety projection moved the gains away from the optimum.
    pub const FILTER_ACTIVE: u32 = 1 << 2;
    pub const FILTER_RELAXED: u32 = 1 << 3;
    pub const FILTER_FAILED: u32 = 1 << 4;
    pub const TERMINAL: u32 = 1 << 5;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TickRecord {
    pub t: f64,
    pub e: Vec6,
    pub e_dot: Vec6,
    pub force: Vec6,
    /// Gains applied during this tick.
    pub u: InputVector,
    /// Smallest barrier value, `+∞` without a safe set.
    pub h_min: f64,
    /// Smallest barrier-row residual at the applied gains, `+∞` without a safe set.
    pub residual_min: f64,
    pub events: u32,
}

impl TickRecord {
    pub fn gains(&self) -> ImpedanceGains {
        recover_gains(&GainInput::new(self.u).expect("logged gains are positive"))
    }

    fn sample(&self) -> Sample {
        Sample { t: self.t, e: self.e, e_dot: self.e_dot, force: self.force }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateRecord {
    pub launch_tick: usize,
    pub apply_tick: usize,
    pub u_before: InputVector,
    pub u_after: InputVector,
    /// Model cost of the previous gains over the buffered window.
    pub cost_before: f64,
    pub cost_after: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub evaluations: usize,
    pub kkt_residual: f64,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub scenario: String,
    pub mode: ControllerMode,
    pub seed: u64,
    pub dt: f64,
    pub ticks: Vec<TickRecord>,
    pub updates: Vec<UpdateRecord>,
    /// Set when the episode stopped early.
    pub terminal: Option<String>,
    pub contact_axis: Option<usize>,
}

impl TrajectoryLog {
    /// Samples `[start, start + len)` as an objective window.
    pub fn window(&self, start: usize, len: usize) -> Option<TrajectoryWindow> {
        let end = start.checked_add(len)?;
        if len == 0 || end > self.ticks.len() {
            return None;
        }
        TrajectoryWindow::new(self.ticks[start..end].iter().map(TickRecord::sample).collect(), self.dt).ok()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RuntimeError {
    #[error("invalid loop configuration: {0}")]
    Config(String),
    #[error("comparison needs at least two modes, got {0}")]
    TooFewModes(usize),
    #[error("scenario: {0}")]
    Scenario(String),
}

struct PendingUpdate {
    launch_tick: usize,
    apply_tick: usize,
    handle: JoinHandle<UpdateOutcome>,
}

struct UpdateOutcome {
    u: InputVector,
    cost_before: f64,
    cost_after: f64,
    status: SolveStatus,
    iterations: usize,
    evaluations: usize,
    kkt_residual: f64,
    wall_time: Duration,
}

/// Inputs of one low-frequency solve, owned so it can run on a worker.
struct UpdateJob {
    window: TrajectoryWindow,
    u_star: InputVector,
    bounds: GainBounds,
    cfg: LoopConfig,
}

impl UpdateJob {
    /// Optimize only the gains of axes that saw motion or force in the window;
    /// the others cannot change the cost.
    fn run(self) -> UpdateOutcome {
        let UpdateJob { window, u_star, bounds, cfg } = self;
        let excited: Vec<usize> = (0..AXES)
            .filter(|&i| window.samples().iter().any(|s| s.e[i] != 0.0 || s.e_dot[i] != 0.0 || s.force[i] != 0.0))
            .collect();
        let cost = |u: &GainInput| window_cost(u, &window, cfg.evaluation, cfg.cost, cfg.substeps);
        let cost_before =
            if excited.is_empty() { 0.0 } else { cost(&GainInput::new(u_star).expect("gains are positive")) };
        if excited.is_empty() {
            return UpdateOutcome {
                u: u_star,
                cost_before,
                cost_after: cost_before,
                status: SolveStatus::Optimal,
                iterations: 0,
                evaluations: 0,
                kkt_residual: 0.0,
                wall_time: Duration::ZERO,
            };
        }
        match optimize_axes(cost, &u_star, &excited, &bounds, &cfg.sqp) {
            Ok((u, rep)) => UpdateOutcome {
                u,
                cost_before,
                cost_after: rep.objective,
                status: rep.status,
                iterations: rep.iterations,
                evaluations: rep.evaluations,
                kkt_residual: rep.kkt_residual,
                wall_time: rep.wall_time,
            },
            Err(err) => {
                log::warn!("gain update failed: {err}; keeping previous gains");
                UpdateOutcome {
                    u: u_star,
                    cost_before,
                    cost_after: cost_before,
                    status: SolveStatus::MaxIter,
                    iterations: 0,
                    evaluations: 0,
                    kkt_residual: f64::INFINITY,
                    wall_time: Duration::ZERO,
                }
            }
        }
    }
}

/// Minimize `cost` over the damping, stiffness and inverse-mass entries of
/// `axes`, holding the other gains at `u0`. Returns the full gain vector.
pub fn optimize_axes<F>(
    cost: F,
    u0: &InputVector,
    axes: &[usize],
    bounds: &GainBounds,
    opts: &SqpOptions,
) -> Result<(InputVector, SolveReport), OptimizerError>
where
    F: Fn(&GainInput) -> f64 + Sync,
{
    let free: Vec<usize> =
        axes.iter().flat_map(|&i| [DAMPING_BLOCK + i, STIFFNESS_BLOCK + i, INVERSE_MASS_BLOCK + i]).collect();
    let expand = |v: &DVector<f64>| {
        let mut u = *u0;
        for (k, &j) in free.iter().enumerate() {
            u[j] = v[k];
        }
        u
    };
    let reduced = |v: &DVector<f64>| match GainInput::new(expand(v)) {
        Ok(u) => cost(&u),
        Err(_) => f64::INFINITY,
    };
    let mut a = DMatrix::zeros(2 * free.len(), free.len());
    let mut b = DVector::zeros(2 * free.len());
    for (k, &j) in free.iter().enumerate() {
        a[(2 * k, k)] = 1.0;
        b[2 * k] = -bounds.lower()[j];
        a[(2 * k + 1, k)] = -1.0;
        b[2 * k + 1] = bounds.upper()[j];
    }
    let v0 = DVector::from_iterator(free.len(), free.iter().map(|&j| u0[j]));
    let rep = sqp_solve(reduced, &v0, &LinearConstraints { a, b }, opts)?;
    Ok((bounds.clamp(&expand(&rep.solution)), rep))
}

/// Run one episode of the scenario in its configured mode.
pub fn run_episode(scenario: &Scenario) -> Result<TrajectoryLog, RuntimeError> {
    run_episode_with_mode(scenario, scenario.loop_config.mode)
}

pub fn run_episode_with_mode(scenario: &Scenario, mode: ControllerMode) -> Result<TrajectoryLog, RuntimeError> {
    let cfg = scenario.loop_config;
    cfg.validate().map_err(RuntimeError::Config)?;
    let env: Environment = scenario.environment().map_err(|e| RuntimeError::Scenario(e.to_string()))?;
    let params = BarrierParams::new(cfg.gamma).map_err(|e| RuntimeError::Config(e.to_string()))?;
    let bounds = scenario.gain_bounds;
    let hard_rows = bound_rows(&bounds);
    let integrator = Integrator { dt_max: cfg.dt(), substeps: cfg.substeps };

    let dt = cfg.dt();
    let n_ticks = (scenario.episode_length * cfg.tick_rate).round() as usize;
    let period = cfg.period_ticks();
    let latency = cfg.latency_ticks();

    let mut u_star = match mode {
        ControllerMode::SafeOnGoVic => *scenario.initial_input().as_vector(),
        ControllerMode::ConstantGain => *input_from_gains(&scenario.baseline_gains).as_vector(),
    };
    let mut state = scenario.initial_state;
    let p0 = reference_at(&scenario.reference, 0.0);
    let mut offset = Vec6::zeros();

    let mut log = TrajectoryLog {
        scenario: scenario.name.clone(),
        mode,
        seed: scenario.seed,
        dt,
        ticks: Vec::with_capacity(n_ticks),
        updates: Vec::new(),
        terminal: None,
        contact_axis: scenario.surfaces.first().map(|s| s.normal_axis),
    };
    let mut pending: Option<PendingUpdate> = None;

    for k in 0..n_ticks {
        let t = k as f64 * dt;
        state.t = t;
        let mut flags = 0;

        // Reference steps move the error by the opposite amount.
        let new_offset = reference_at(&scenario.reference, t) - p0;
        state.e -= new_offset - offset;
        offset = new_offset;

        if mode == ControllerMode::SafeOnGoVic {
            if k > 0 && k % period == 0 {
                let job = UpdateJob {
                    window: log.window(k - period, period).expect("buffer holds a full period"),
                    u_star,
                    bounds,
                    cfg,
                };
                flags |= events::UPDATE_LAUNCHED;
                if latency == 0 {
                    let out = job.run();
                    apply_update(&mut log, &mut u_star, k, k, out);
                    flags |= events::UPDATE_APPLIED;
                } else {
                    let handle = std::thread::spawn(move || job.run());
                    pending = Some(PendingUpdate { launch_tick: k, apply_tick: k + latency, handle });
                }
            }
            // Latency is shorter than the period, so a result always lands before the next launch.
            if pending.as_ref().is_some_and(|p| p.apply_tick == k) {
                let p = pending.take().expect("checked above");
                let out = p.handle.join().expect("gain update worker panicked");
                apply_update(&mut log, &mut u_star, p.launch_tick, k, out);
                flags |= events::UPDATE_APPLIED;
            }
        }

        let wrench = env.wrench_shifted(&state, &offset);

        let (u, h_min, residual_min) = match (&scenario.safe_set, mode) {
            (Some(set), ControllerMode::SafeOnGoVic) => {
                let barriers = barrier_values(&state, set);
                let soft: Vec<_> = barriers.iter().map(|b| constraint_row(&state, &wrench, b, &params)).collect();
                let proj = safety_projection(&u_star, &soft, &hard_rows, cfg.relax_penalty, &cfg.qp);
                let u = match proj.report.status {
                    SolveStatus::Optimal => proj.u,
                    SolveStatus::Relaxed => {
                        flags |= events::FILTER_RELAXED;
                        log::warn!("t = {t:.3}: safety constraints infeasible, relaxed by {:.3e}", proj.slack);
                        proj.u
                    }
                    SolveStatus::MaxIter | SolveStatus::Infeasible => {
                        flags |= events::FILTER_FAILED;
                        log::warn!("t = {t:.3}: safety projection {}", proj.report.status);
                        if proj.u.iter().all(|v| v.is_finite()) {
                            bounds.clamp(&proj.u)
                        } else {
                            u_star
                        }
                    }
                };
                let u = bounds.clamp(&u);
                if (u - u_star).amax() > 1e-9 * u_star.amax().max(1.0) {
                    flags |= events::FILTER_ACTIVE;
                }
                let h_min = barriers.iter().map(|b| b.h).fold(f64::INFINITY, f64::min);
                let r_min = soft.iter().map(|r| r.residual(&u)).fold(f64::INFINITY, f64::min);
                (u, h_min, r_min)
            }
            (Some(set), ControllerMode::ConstantGain) => {
                let h_min = barrier_values(&state, set).iter().map(|b| b.h).fold(f64::INFINITY, f64::min);
                (u_star, h_min, f64::INFINITY)
            }
            (None, _) => (u_star, f64::INFINITY, f64::INFINITY),
        };

        let gains = GainInput::new(u).expect("applied gains stay inside positive bounds");
        let mut record =
            TickRecord { t, e: state.e, e_dot: state.e_dot, force: wrench.0, u, h_min, residual_min, events: flags };

        match integrator.step(&state, &gains, |s| env.wrench_shifted(s, &offset), dt) {
            Ok(next) => {
                log.ticks.push(record);
                state = next;
            }
            Err(err) => {
                record.events |= events::TERMINAL;
                log.ticks.push(record);
                log::error!("episode '{}' stopped at t = {t:.3}: {err}", scenario.name);
                log.terminal = Some(err.to_string());
                break;
            }
        }
    }
    if let Some(p) = pending.take() {
        // The result would land after the episode ends; wait so the worker does not outlive us.
        let _ = p.handle.join();
    }
    Ok(log)
}

fn apply_update(
    log: &mut TrajectoryLog,
    u_star: &mut InputVector,
    launch_tick: usize,
    apply_tick: usize,
    out: UpdateOutcome,
) {
    log::info!(
        "update at tick {launch_tick}: cost {:.6e} -> {:.6e} ({}, {} iterations)",
        out.cost_before,
        out.cost_after,
        out.status,
        out.iterations
    );
    log.updates.push(UpdateRecord {
        launch_tick,
        apply_tick,
        u_before: *u_star,
        u_after: out.u,
        cost_before: out.cost_before,
        cost_after: out.cost_after,
        status: out.status,
        iterations: out.iterations,
        evaluations: out.evaluations,
        kkt_residual: out.kkt_residual,
        wall_time: out.wall_time,
    });
    *u_star = out.u;
}

/// A metric value or the marker for "never happened".
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Measure {
    Value(f64),
    NotConverged,
}

impl Measure {
    pub fn value(self) -> Option<f64> {
        match self {
            Measure::Value(v) => Some(v),
            Measure::NotConverged => None,
        }
    }
}

impl std::fmt::Display for Measure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Measure::Value(v) if *v == 0.0 || v.abs() >= 1e-3 => write!(f, "{v:.3}"),
            Measure::Value(v) => write!(f, "{v:.3e}"),
            Measure::NotConverged => f.write_str("N/A"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub approaching_time: Measure,
    pub settling_time: Measure,
    pub steady_force_variance: Measure,
    pub min_barrier: Measure,
    pub fitave_total: f64,
    pub axis: usize,
    pub steady_error: f64,
    pub band: f64,
}

/// Table-style summary of an episode.
pub fn compute_metrics(log: &TrajectoryLog, cfg: &MetricsConfig) -> MetricsReport {
    let ticks = &log.ticks;
    let axis = cfg.axis.or(log.contact_axis).unwrap_or_else(|| {
        let first = ticks.first().map(|r| r.e).unwrap_or_else(Vec6::zeros);
        first.iamax()
    });
    let force_axis = cfg.axis.or(log.contact_axis);
    let ticks_in = |seconds: f64| ((seconds / log.dt).round() as usize).max(1);

    let touch = force_axis.and_then(|a| ticks.iter().position(|r| r.force[a].abs() > cfg.touch_threshold));
    let approaching_time = touch.map_or(Measure::NotConverged, |k| Measure::Value(ticks[k].t));

    let tail = ticks.len().saturating_sub(ticks_in(cfg.steady_window));
    let steady = &ticks[tail..];
    let steady_error =
        if steady.is_empty() { 0.0 } else { steady.iter().map(|r| r.e[axis]).sum::<f64>() / steady.len() as f64 };

    let e0 = ticks.first().map_or(0.0, |r| r.e[axis]);
    let band = (cfg.band_fraction * (e0 - steady_error).abs()).max(cfg.band_floor);
    let dwell = ticks_in(cfg.dwell);
    let settling_time = settling_index(ticks, axis, steady_error, band, dwell, touch.unwrap_or(0))
        .map_or(Measure::NotConverged, |k| Measure::Value(ticks[k].t));

    let steady_force_variance = match force_axis {
        Some(a) if steady.len() >= 2 && touch.is_some() => {
            let n = steady.len() as f64;
            let mean = steady.iter().map(|r| r.force[a]).sum::<f64>() / n;
            let var = steady.iter().map(|r| (r.force[a] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            Measure::Value(var)
        }
        _ => Measure::NotConverged,
    };

    let h = ticks.iter().map(|r| r.h_min).fold(f64::INFINITY, f64::min);
    let min_barrier = if h.is_finite() { Measure::Value(h) } else { Measure::NotConverged };

    let fitave_total = log.window(0, ticks.len()).map_or(0.0, |w| fitave(&w));

    MetricsReport {
        approaching_time,
        settling_time,
        steady_force_variance,
        min_barrier,
        fitave_total,
        axis,
        steady_error,
        band,
    }
}

/// First tick at or after `from` from which the error stays in the band for
/// `dwell` ticks. The dwell must fit inside the log.
fn settling_index(
    ticks: &[TickRecord],
    axis: usize,
    target: f64,
    band: f64,
    dwell: usize,
    from: usize,
) -> Option<usize> {
    let inside: Vec<bool> = ticks.iter().map(|r| (r.e[axis] - target).abs() <= band).collect();
    // Length of the run of in-band ticks starting at each index.
    let mut run = vec![0usize; inside.len() + 1];
    for k in (0..inside.len()).rev() {
        run[k] = if inside[k] { run[k + 1] + 1 } else { 0 };
    }
    (from..inside.len()).find(|&k| run[k] > dwell)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeReport {
    pub mode: ControllerMode,
    pub metrics: MetricsReport,
    pub log: TrajectoryLog,
}

/// Run the scenario once per mode with shared seeds.
pub fn compare_baselines(scenario: &Scenario, modes: &[ControllerMode]) -> Result<Vec<ModeReport>, RuntimeError> {
    if modes.len() < 2 {
        return Err(RuntimeError::TooFewModes(modes.len()));
    }
    modes
        .par_iter()
        .map(|&mode| {
            let log = run_episode_with_mode(scenario, mode)?;
            let metrics = compute_metrics(&log, &scenario.metrics);
            Ok(ModeReport { mode, metrics, log })
        })
        .collect()
}

/// Gains of a log's final tick, for reports.
pub fn final_gains(log: &TrajectoryLog) -> Option<ImpedanceGains> {
    log.ticks.last().map(TickRecord::gains)
}

/// Check that every tick's applied gains sit inside the scenario bounds.
pub fn gains_within(log: &TrajectoryLog, bounds: &GainBounds) -> bool {
    log.ticks.iter().all(|r| (0..INPUT_DIM).all(|i| r.u[i] >= bounds.lower()[i] && r.u[i] <= bounds.upper()[i]))
}
