//! Time-weighted error integrals and rollout-based cost evaluation.
//!
//! Both costs use the trapezoidal rule on uniformly sampled windows, apply
//! `|.|` per axis and sum across axes, and measure time from the first sample.

use thiserror::Error;

use crate::dynamics::{GainInput, Integrator, PlantState, Vec6, Wrench};
use crate::environment::Environment;

/// Tolerance on the spacing of consecutive samples.
const SPACING_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WindowError {
    #[error("trajectory window is empty")]
    Empty,
    #[error("sample period must be positive and finite, got {0}")]
    BadPeriod(f64),
    #[error("sample {index} at t = {t} breaks the uniform spacing")]
    NonUniform { index: usize, t: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub e: Vec6,
    pub e_dot: Vec6,
    pub force: Vec6,
}

impl Sample {
    pub fn state(&self) -> PlantState {
        PlantState::new(self.e, self.e_dot, self.t)
    }
}

/// Uniformly sampled slice of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryWindow {
    samples: Vec<Sample>,
    dt: f64,
}

impl TrajectoryWindow {
    pub fn new(samples: Vec<Sample>, dt: f64) -> Result<Self, WindowError> {
        if samples.is_empty() {
            return Err(WindowError::Empty);
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(WindowError::BadPeriod(dt));
        }
        for (i, s) in samples.iter().enumerate().skip(1) {
            if (s.t - samples[i - 1].t - dt).abs() > SPACING_TOL {
                return Err(WindowError::NonUniform { index: i, t: s.t });
            }
        }
        Ok(Self { samples, dt })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn origin_time(&self) -> f64 {
        self.samples[0].t
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Time from the first to the last sample.
    pub fn duration(&self) -> f64 {
        (self.samples.len() - 1) as f64 * self.dt
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CostKind {
    #[default]
    Fitave,
    Itae,
}

fn time_weighted_integral(window: &TrajectoryWindow, value: impl Fn(&Sample) -> Vec6) -> f64 {
    let t0 = window.origin_time();
    let integrand = |s: &Sample| (s.t - t0) * value(s).abs().sum();
    let mut prev = integrand(&window.samples[0]);
    let mut total = 0.0;
    for s in &window.samples[1..] {
        let cur = integrand(s);
        total += 0.5 * window.dt * (prev + cur);
        prev = cur;
    }
    total
}

/// `∫ t |e| dt`.
pub fn itae(window: &TrajectoryWindow) -> f64 {
    time_weighted_integral(window, |s| s.e)
}

/// `∫ t |ė| dt`.
pub fn fitave(window: &TrajectoryWindow) -> f64 {
    time_weighted_integral(window, |s| s.e_dot)
}

pub fn cost_of(window: &TrajectoryWindow, kind: CostKind) -> f64 {
    match kind {
        CostKind::Fitave => fitave(window),
        CostKind::Itae => itae(window),
    }
}

/// Where the rollout gets its external wrench from.
#[derive(Debug, Clone, Copy)]
pub enum ForceSource<'a> {
    /// Recorded force samples, zero-order held over each step.
    Replay(&'a [Vec6]),
    /// A live environment, queried at every integrator stage. The shift moves
    /// surfaces the same way a displaced reference does.
    Live { env: &'a Environment, reference_shift: Vec6 },
}

impl<'a> ForceSource<'a> {
    pub fn live(env: &'a Environment) -> Self {
        ForceSource::Live { env, reference_shift: Vec6::zeros() }
    }
}

/// How a candidate gain vector is scored against a recorded window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvaluationMode {
    /// Re-simulate from the window's first state, replaying recorded force.
    #[default]
    Resimulate,
    /// Keep the recorded `(e, ė, F)` inside `g2` and only integrate `g2 u`.
    RecordedState,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutConfig {
    pub horizon: f64,
    pub dt: f64,
    pub kind: CostKind,
    pub integrator: Integrator,
}

impl RolloutConfig {
    pub fn new(horizon: f64, dt: f64, kind: CostKind) -> Self {
        Self { horizon, dt, kind, integrator: Integrator { dt_max: dt, substeps: 1 } }
    }

    pub fn with_substeps(mut self, substeps: usize) -> Self {
        self.integrator.substeps = substeps.max(1);
        self
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round().max(0.0) as usize
    }
}

/// Simulate under constant `u` and return every sample, the initial one included.
pub fn rollout(
    u: &GainInput,
    init: &PlantState,
    source: &ForceSource,
    cfg: &RolloutConfig,
) -> Result<TrajectoryWindow, crate::dynamics::DynamicsError> {
    let steps = cfg.steps();
    let mut samples = Vec::with_capacity(steps + 1);
    let mut state = *init;
    for k in 0..=steps {
        let force = match source {
            ForceSource::Replay(f) => replay_force(f, k),
            ForceSource::Live { env, reference_shift } => env.wrench_shifted(&state, reference_shift).0,
        };
        samples.push(Sample { t: state.t, e: state.e, e_dot: state.e_dot, force });
        if k == steps {
            break;
        }
        state = match source {
            ForceSource::Replay(_) => cfg.integrator.step(&state, u, |_| Wrench(force), cfg.dt)?,
            ForceSource::Live { env, reference_shift } => {
                cfg.integrator.step(&state, u, |s| env.wrench_shifted(s, reference_shift), cfg.dt)?
            }
        };
    }
    Ok(TrajectoryWindow { samples, dt: cfg.dt })
}

fn replay_force(recorded: &[Vec6], k: usize) -> Vec6 {
    match recorded.len() {
        0 => Vec6::zeros(),
        n => recorded[k.min(n - 1)],
    }
}

/// Cost of `u` over the horizon; `+∞` if the simulation diverges.
pub fn rollout_cost(u: &GainInput, init: &PlantState, source: &ForceSource, cfg: &RolloutConfig) -> f64 {
    match rollout(u, init, source, cfg) {
        Ok(w) => {
            let c = cost_of(&w, cfg.kind);
            if c.is_finite() {
                c
            } else {
                f64::INFINITY
            }
        }
        Err(_) => f64::INFINITY,
    }
}

/// Cost of `u` over a recorded window under the chosen evaluation mode.
pub fn window_cost(
    u: &GainInput,
    window: &TrajectoryWindow,
    mode: EvaluationMode,
    kind: CostKind,
    substeps: usize,
) -> f64 {
    match mode {
        EvaluationMode::Resimulate => {
            let forces: Vec<Vec6> = window.samples.iter().map(|s| s.force).collect();
            let cfg = RolloutConfig::new(window.duration(), window.dt, kind).with_substeps(substeps);
            rollout_cost(u, &window.samples[0].state(), &ForceSource::Replay(&forces), &cfg)
        }
        EvaluationMode::RecordedState => recorded_state_cost(u, window, kind),
    }
}

/// `ė_u(t) = ė(0) + ∫ g2(x_rec) u dτ` with the recorded states held fixed,
/// then `e_u` from integrating `ė_u`. Both integrals are trapezoidal.
fn recorded_state_cost(u: &GainInput, window: &TrajectoryWindow, kind: CostKind) -> f64 {
    let s = &window.samples;
    let accel = |x: &Sample| {
        Vec6::from_fn(|i, _| -u.damping(i) * x.e_dot[i] - u.stiffness(i) * x.e[i] + u.inverse_mass(i) * x.force[i])
    };
    let mut out = Vec::with_capacity(s.len());
    let mut e = s[0].e;
    let mut v = s[0].e_dot;
    let mut a_prev = accel(&s[0]);
    out.push(Sample { e, e_dot: v, ..s[0] });
    for x in &s[1..] {
        let a = accel(x);
        let v_next = v + (a_prev + a) * (0.5 * window.dt);
        e += (v + v_next) * (0.5 * window.dt);
        v = v_next;
        a_prev = a;
        out.push(Sample { e, e_dot: v, ..*x });
    }
    let c = cost_of(&TrajectoryWindow { samples: out, dt: window.dt }, kind);
    if c.is_finite() {
        c
    } else {
        f64::INFINITY
    }
}
