//! Simulated surroundings of the end effector: one-sided spring surfaces,
//! scripted or seeded disturbance wrenches, and reference schedules.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dynamics::{PlantState, Vec6, Wrench, AXES};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvironmentError {
    #[error("surface: {0}")]
    Surface(String),
    #[error("disturbance: {0}")]
    Disturbance(String),
    #[error("reference: {0}")]
    Reference(String),
}

/// Side of the surface plane on which penetration is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenetrationSign {
    /// Contact engages for `e > location`.
    Positive,
    /// Contact engages for `e < location`.
    Negative,
}

impl PenetrationSign {
    pub fn sign(self) -> f64 {
        match self {
            PenetrationSign::Positive => 1.0,
            PenetrationSign::Negative => -1.0,
        }
    }
}

/// A rigid board modelled as a stiff Kelvin-Voigt spring on one axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactSurface {
    pub normal_axis: usize,
    pub location: f64,
    pub stiffness: f64,
    pub damping: f64,
    pub penetration_sign: PenetrationSign,
}

impl ContactSurface {
    pub fn new(
        normal_axis: usize,
        location: f64,
        stiffness: f64,
        damping: f64,
        penetration_sign: PenetrationSign,
    ) -> Result<Self, EnvironmentError> {
        if normal_axis >= AXES {
            return Err(EnvironmentError::Surface(format!("normal_axis {normal_axis} out of range")));
        }
        if !location.is_finite() {
            return Err(EnvironmentError::Surface("location must be finite".into()));
        }
        if !(stiffness.is_finite() && stiffness > 0.0) {
            return Err(EnvironmentError::Surface(format!("stiffness must be > 0, got {stiffness}")));
        }
        if !(damping.is_finite() && damping >= 0.0) {
            return Err(EnvironmentError::Surface(format!("damping must be >= 0, got {damping}")));
        }
        Ok(Self { normal_axis, location, stiffness, damping, penetration_sign })
    }

    /// Same surface with its plane moved by `delta` along the normal.
    pub fn shifted(&self, delta: f64) -> Self {
        Self { location: self.location + delta, ..*self }
    }
}

/// Reaction wrench of `surface` on the end effector.
///
/// Zero unless the error has crossed strictly beyond the plane. The damping
/// term never pulls the end effector into the surface.
pub fn surface_force(state: &PlantState, surface: &ContactSurface) -> Wrench {
    let axis = surface.normal_axis;
    let s = surface.penetration_sign.sign();
    let penetration = s * (state.e[axis] - surface.location);
    if penetration <= 0.0 {
        return Wrench::zero();
    }
    let penetration_rate = s * state.e_dot[axis];
    let magnitude = (surface.stiffness * penetration + surface.damping * penetration_rate).max(0.0);
    Wrench::on_axis(axis, -s * magnitude)
}

/// Wrench carried by one disturbance segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SegmentWrench {
    Constant(Vec6),
    /// `peak * sin(pi * (t - t_start) / (t_end - t_start))`.
    HalfSine(Vec6),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisturbanceSegment {
    pub t_start: f64,
    pub t_end: f64,
    pub wrench: SegmentWrench,
}

impl DisturbanceSegment {
    /// Active on the half-open interval `[t_start, t_end)`.
    pub fn value_at(&self, t: f64) -> Option<Vec6> {
        if t < self.t_start || t >= self.t_end {
            return None;
        }
        Some(match self.wrench {
            SegmentWrench::Constant(w) => w,
            SegmentWrench::HalfSine(peak) => {
                let phase = (t - self.t_start) / (self.t_end - self.t_start);
                peak * (std::f64::consts::PI * phase).sin()
            }
        })
    }
}

/// Settings for seeded piecewise-constant push sequences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomDisturbance {
    /// Pushes are generated inside `[start, end]`.
    pub start: f64,
    pub end: f64,
    /// Quiet time before each push, drawn uniformly.
    pub gap: (f64, f64),
    pub duration: (f64, f64),
    pub magnitude: (f64, f64),
    /// Axes a push may act on; each push picks one of them and a random sign.
    pub axes: [bool; AXES],
    /// Segment boundaries are rounded to multiples of this (0 disables rounding).
    pub time_grid: f64,
}

impl RandomDisturbance {
    pub fn validate(&self) -> Result<(), EnvironmentError> {
        let err = |m: &str| Err(EnvironmentError::Disturbance(m.to_string()));
        let ordered = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        if !(self.start.is_finite() && self.end.is_finite() && self.start >= 0.0 && self.start <= self.end) {
            return err("random window must satisfy 0 <= start <= end");
        }
        if !ordered(self.gap) || self.gap.0 < 0.0 {
            return err("gap range must be ordered and non-negative");
        }
        if !ordered(self.duration) || self.duration.0 <= 0.0 {
            return err("duration range must be ordered and positive");
        }
        if !ordered(self.magnitude) || self.magnitude.0 < 0.0 {
            return err("magnitude range must be ordered and non-negative");
        }
        if !self.axes.iter().any(|a| *a) {
            return err("random disturbance needs at least one axis");
        }
        if !(self.time_grid.is_finite() && self.time_grid >= 0.0) {
            return err("time_grid must be >= 0");
        }
        Ok(())
    }
}

/// Ordered, non-overlapping wrench segments.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DisturbanceProfile {
    segments: Vec<DisturbanceSegment>,
    seed: u64,
}

impl DisturbanceProfile {
    pub fn new(segments: Vec<DisturbanceSegment>, seed: u64) -> Result<Self, EnvironmentError> {
        for (i, s) in segments.iter().enumerate() {
            if !(s.t_start.is_finite() && s.t_end.is_finite() && s.t_start < s.t_end) {
                return Err(EnvironmentError::Disturbance(format!("segment {i} needs t_start < t_end")));
            }
            let w = match s.wrench {
                SegmentWrench::Constant(w) | SegmentWrench::HalfSine(w) => w,
            };
            if !w.iter().all(|v| v.is_finite()) {
                return Err(EnvironmentError::Disturbance(format!("segment {i} has a non-finite wrench")));
            }
            if i > 0 && segments[i - 1].t_end > s.t_start {
                return Err(EnvironmentError::Disturbance(format!(
                    "segment {i} overlaps or precedes segment {}",
                    i - 1
                )));
            }
        }
        Ok(Self { segments, seed })
    }

    pub fn none() -> Self {
        Self::default()
    }

    /// Seeded push sequence; identical seeds give identical profiles.
    pub fn random(seed: u64, cfg: &RandomDisturbance) -> Result<Self, EnvironmentError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let axes: Vec<usize> = (0..AXES).filter(|&i| cfg.axes[i]).collect();
        let snap = |t: f64| {
            if cfg.time_grid > 0.0 {
                (t / cfg.time_grid).round() * cfg.time_grid
            } else {
                t
            }
        };
        let draw = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| if hi > lo { rng.random_range(lo..hi) } else { lo };

        let mut segments = Vec::new();
        let mut cursor = cfg.start;
        loop {
            let t_start = snap(cursor + draw(&mut rng, cfg.gap));
            let mut t_end = snap(t_start + draw(&mut rng, cfg.duration));
            if t_end <= t_start {
                t_end = t_start + cfg.time_grid.max(f64::EPSILON);
            }
            let axis = axes[rng.random_range(0..axes.len())];
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let magnitude = draw(&mut rng, cfg.magnitude);
            if t_end > cfg.end {
                break;
            }
            let mut w = Vec6::zeros();
            w[axis] = sign * magnitude;
            segments.push(DisturbanceSegment { t_start, t_end, wrench: SegmentWrench::Constant(w) });
            cursor = t_end;
        }
        Self::new(segments, seed)
    }

    pub fn segments(&self) -> &[DisturbanceSegment] {
        &self.segments
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Sum of the segments active at `t`; zero outside all of them.
pub fn disturbance_at(profile: &DisturbanceProfile, t: f64) -> Wrench {
    let segments = &profile.segments;
    // Segments are sorted and disjoint, so at most one can contain t.
    let idx = segments.partition_point(|s| s.t_end <= t);
    let mut w = Vec6::zeros();
    for s in &segments[idx..] {
        if s.t_start > t {
            break;
        }
        if let Some(v) = s.value_at(t) {
            w += v;
        }
    }
    Wrench(w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    Hold,
    Linear,
}

/// Time-indexed desired positions `p_d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSchedule {
    waypoints: Vec<(f64, Vec6)>,
    interpolation: Interpolation,
}

impl ReferenceSchedule {
    pub fn new(waypoints: Vec<(f64, Vec6)>, interpolation: Interpolation) -> Result<Self, EnvironmentError> {
        if waypoints.is_empty() {
            return Err(EnvironmentError::Reference("at least one waypoint is required".into()));
        }
        for (i, (t, p)) in waypoints.iter().enumerate() {
            if !t.is_finite() || !p.iter().all(|v| v.is_finite()) {
                return Err(EnvironmentError::Reference(format!("waypoint {i} is not finite")));
            }
            if i > 0 && waypoints[i - 1].0 >= *t {
                return Err(EnvironmentError::Reference(format!("waypoint times must strictly increase at {i}")));
            }
        }
        Ok(Self { waypoints, interpolation })
    }

    pub fn constant(p: Vec6) -> Self {
        Self { waypoints: vec![(0.0, p)], interpolation: Interpolation::Hold }
    }

    pub fn waypoints(&self) -> &[(f64, Vec6)] {
        &self.waypoints
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }
}

impl Default for ReferenceSchedule {
    fn default() -> Self {
        Self::constant(Vec6::zeros())
    }
}

pub fn reference_at(schedule: &ReferenceSchedule, t: f64) -> Vec6 {
    let wp = &schedule.waypoints;
    // Number of waypoints with time <= t.
    let n = wp.partition_point(|(tw, _)| *tw <= t);
    if n == 0 {
        return wp[0].1;
    }
    if n == wp.len() {
        return wp[n - 1].1;
    }
    match schedule.interpolation {
        Interpolation::Hold => wp[n - 1].1,
        Interpolation::Linear => {
            let (t0, p0) = wp[n - 1];
            let (t1, p1) = wp[n];
            let alpha = (t - t0) / (t1 - t0);
            p0 + (p1 - p0) * alpha
        }
    }
}

/// Everything outside the robot that produces a wrench.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Environment {
    pub surfaces: Vec<ContactSurface>,
    pub disturbance: DisturbanceProfile,
}

impl Environment {
    pub fn new(surfaces: Vec<ContactSurface>, disturbance: DisturbanceProfile) -> Self {
        Self { surfaces, disturbance }
    }

    /// Contact plus disturbance wrench.
    pub fn wrench(&self, state: &PlantState) -> Wrench {
        self.contact_wrench(state) + disturbance_at(&self.disturbance, state.t)
    }

    /// Like [`Environment::wrench`], with surfaces fixed in the frame of the
    /// initial reference while the error coordinates follow a reference that
    /// has moved by `reference_shift`.
    pub fn wrench_shifted(&self, state: &PlantState, reference_shift: &Vec6) -> Wrench {
        let mut w = disturbance_at(&self.disturbance, state.t);
        for s in &self.surfaces {
            w += surface_force(state, &s.shifted(-reference_shift[s.normal_axis]));
        }
        w
    }

    pub fn contact_wrench(&self, state: &PlantState) -> Wrench {
        self.surfaces.iter().fold(Wrench::zero(), |acc, s| acc + surface_force(state, s))
    }
}
