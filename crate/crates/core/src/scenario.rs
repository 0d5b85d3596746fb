//! Scenario files: a strict JSON schema, defaults, and validation.
//!
//! Unknown keys are rejected everywhere. Six-axis quantities accept either a
//! scalar (applied to every axis) or an array of six numbers.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    input_from_gains, GainBounds, GainInput, ImpedanceGains, InputVector, PlantState, Vec6, AXES, INPUT_DIM,
};
use crate::environment::{
    ContactSurface, DisturbanceProfile, DisturbanceSegment, Environment, Interpolation, PenetrationSign,
    RandomDisturbance, ReferenceSchedule, SegmentWrench,
};
use crate::objective::{CostKind, EvaluationMode};
use crate::optimizer::{QpOptions, SqpOptions};
use crate::runtime::{ControllerMode, LoopConfig, MetricsConfig};
use crate::safety::BoxSafeSet;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid {field}: {message}")]
    Validation { field: String, message: String },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation { field: field.to_string(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AxisValues {
    Uniform(f64),
    PerAxis([f64; AXES]),
}

impl AxisValues {
    pub fn to_vec6(self) -> Vec6 {
        match self {
            AxisValues::Uniform(v) => Vec6::repeat(v),
            AxisValues::PerAxis(a) => Vec6::from(a),
        }
    }
}

impl Default for AxisValues {
    fn default() -> Self {
        AxisValues::Uniform(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsFile {
    pub mass: AxisValues,
    pub damping: AxisValues,
    pub stiffness: AxisValues,
}

/// Ranges for the three blocks of the gain input vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockRanges {
    pub damping: [f64; 2],
    pub stiffness: [f64; 2],
    pub inverse_mass: [f64; 2],
}

impl BlockRanges {
    fn to_bounds(self, field: &str) -> Result<GainBounds, ScenarioError> {
        let pair = |r: [f64; 2]| (r[0], r[1]);
        GainBounds::from_blocks(pair(self.damping), pair(self.stiffness), pair(self.inverse_mass))
            .map_err(|e| invalid(field, e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialGainsFile {
    /// Fixed impedance gains.
    Fixed(GainsFile),
    /// Seeded draw from the given ranges of the gain input vector.
    Random(BlockRanges),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialStateFile {
    #[serde(default)]
    pub e: AxisValues,
    #[serde(default)]
    pub e_dot: AxisValues,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignFile {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceFile {
    pub normal_axis: usize,
    pub location: f64,
    pub stiffness: f64,
    #[serde(default)]
    pub damping: f64,
    #[serde(default = "default_sign")]
    pub penetration_sign: SignFile,
}

fn default_sign() -> SignFile {
    SignFile::Positive
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeFile {
    Constant,
    HalfSine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentFile {
    pub t_start: f64,
    pub t_end: f64,
    pub wrench: [f64; AXES],
    #[serde(default = "default_shape")]
    pub shape: ShapeFile,
}

fn default_shape() -> ShapeFile {
    ShapeFile::Constant
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomDisturbanceFile {
    pub start: f64,
    pub end: f64,
    pub gap: [f64; 2],
    pub duration: [f64; 2],
    pub magnitude: [f64; 2],
    pub axes: [bool; AXES],
    #[serde(default)]
    pub time_grid: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceFile {
    #[serde(default)]
    pub segments: Vec<SegmentFile>,
    #[serde(default)]
    pub random: Option<RandomDisturbanceFile>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaypointFile {
    pub t: f64,
    pub p: [f64; AXES],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterpolationFile {
    Hold,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceFile {
    pub waypoints: Vec<WaypointFile>,
    #[serde(default = "default_interpolation")]
    pub interpolation: InterpolationFile,
}

fn default_interpolation() -> InterpolationFile {
    InterpolationFile::Hold
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafeSetFile {
    pub d_lb: AxisValues,
    pub d_ub: AxisValues,
    pub active: [bool; AXES],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeFile {
    SafeOngoVic,
    ConstantGain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostFile {
    Fitave,
    Itae,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluationFile {
    Resimulate,
    RecordedState,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoopFile {
    pub tick_rate: f64,
    pub buffer_period: f64,
    pub gamma: f64,
    pub substeps: usize,
    pub mode: ModeFile,
    pub solve_latency: f64,
    pub cost: CostFile,
    pub evaluation: EvaluationFile,
    pub sqp_max_iter: usize,
    pub sqp_tol: f64,
    pub qp_tol: f64,
    pub qp_max_iter: usize,
    pub relax_penalty: f64,
}

impl Default for LoopFile {
    fn default() -> Self {
        let d = LoopConfig::default();
        Self {
            tick_rate: d.tick_rate,
            buffer_period: d.buffer_period,
            gamma: d.gamma,
            substeps: d.substeps,
            mode: ModeFile::SafeOngoVic,
            solve_latency: d.solve_latency,
            cost: CostFile::Fitave,
            evaluation: EvaluationFile::Resimulate,
            sqp_max_iter: d.sqp.max_iter,
            sqp_tol: d.sqp.tol,
            qp_tol: d.qp.tol,
            qp_max_iter: d.qp.max_iter,
            relax_penalty: d.relax_penalty,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsFile {
    pub axis: Option<usize>,
    pub touch_threshold: f64,
    pub band_fraction: f64,
    pub band_floor: f64,
    pub dwell: f64,
    pub steady_window: f64,
}

impl Default for MetricsFile {
    fn default() -> Self {
        let d = MetricsConfig::default();
        Self {
            axis: d.axis,
            touch_threshold: d.touch_threshold,
            band_fraction: d.band_fraction,
            band_floor: d.band_floor,
            dwell: d.dwell,
            steady_window: d.steady_window,
        }
    }
}

pub const DEFAULT_EPISODE_LENGTH: f64 = 15.0;

/// On-disk form of a scenario. After deserialization every default is filled
/// in, so serializing it again yields the effective scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default = "default_episode_length")]
    pub episode_length: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_initial_state")]
    pub initial_state: InitialStateFile,
    #[serde(default)]
    pub surfaces: Vec<SurfaceFile>,
    #[serde(default)]
    pub disturbance: DisturbanceFile,
    #[serde(default)]
    pub reference: Option<ReferenceFile>,
    #[serde(default)]
    pub safe_set: Option<SafeSetFile>,
    #[serde(default = "default_gain_bounds")]
    pub gain_bounds: BlockRanges,
    #[serde(default = "default_initial_gains")]
    pub initial_gains: InitialGainsFile,
    #[serde(default = "default_baseline_gains")]
    pub baseline_gains: GainsFile,
    #[serde(default, rename = "loop")]
    pub loop_config: LoopFile,
    #[serde(default)]
    pub metrics: MetricsFile,
    #[serde(default)]
    pub output_dir: Option<String>,
}

fn default_episode_length() -> f64 {
    DEFAULT_EPISODE_LENGTH
}

fn default_initial_state() -> InitialStateFile {
    InitialStateFile { e: AxisValues::Uniform(0.0), e_dot: AxisValues::Uniform(0.0) }
}

fn default_gain_bounds() -> BlockRanges {
    BlockRanges { damping: [1e-6, 1e6], stiffness: [1e-6, 1e6], inverse_mass: [1e-6, 1e6] }
}

fn default_initial_gains() -> InitialGainsFile {
    InitialGainsFile::Random(BlockRanges { damping: [1.0, 20.0], stiffness: [10.0, 200.0], inverse_mass: [0.5, 2.0] })
}

fn default_baseline_gains() -> GainsFile {
    GainsFile {
        mass: AxisValues::Uniform(1.0),
        damping: AxisValues::Uniform(20.0),
        stiffness: AxisValues::Uniform(100.0),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialGains {
    Fixed(GainInput),
    Random { lower: InputVector, upper: InputVector },
}

/// A validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub episode_length: f64,
    pub seed: u64,
    pub initial_state: PlantState,
    pub surfaces: Vec<ContactSurface>,
    pub segments: Vec<DisturbanceSegment>,
    pub random_disturbance: Option<RandomDisturbance>,
    pub reference: ReferenceSchedule,
    pub safe_set: Option<BoxSafeSet>,
    pub gain_bounds: GainBounds,
    pub initial_gains: InitialGains,
    pub baseline_gains: ImpedanceGains,
    pub loop_config: LoopConfig,
    pub metrics: MetricsConfig,
    pub output_dir: Option<String>,
    file: ScenarioFile,
}

/// Offset separating the gain-initialization stream from the disturbance stream.
const GAIN_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let file: ScenarioFile = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Self::from_file(file)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScenarioError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_json(&text)
    }

    pub fn from_file(file: ScenarioFile) -> Result<Self, ScenarioError> {
        if file.name.trim().is_empty() {
            return Err(invalid("name", "must not be empty"));
        }
        if !(file.episode_length.is_finite() && file.episode_length > 0.0) {
            return Err(invalid("episode_length", "must be positive"));
        }

        let e0 = file.initial_state.e.to_vec6();
        let v0 = file.initial_state.e_dot.to_vec6();
        let initial_state = PlantState::new(e0, v0, 0.0);
        if !initial_state.is_finite() {
            return Err(invalid("initial_state", "must be finite"));
        }

        let surfaces = file
            .surfaces
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let sign = match s.penetration_sign {
                    SignFile::Positive => PenetrationSign::Positive,
                    SignFile::Negative => PenetrationSign::Negative,
                };
                ContactSurface::new(s.normal_axis, s.location, s.stiffness, s.damping, sign)
                    .map_err(|e| invalid(&format!("surfaces[{i}]"), e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;

        let segments: Vec<DisturbanceSegment> = file
            .disturbance
            .segments
            .iter()
            .map(|s| DisturbanceSegment {
                t_start: s.t_start,
                t_end: s.t_end,
                wrench: match s.shape {
                    ShapeFile::Constant => SegmentWrench::Constant(Vec6::from(s.wrench)),
                    ShapeFile::HalfSine => SegmentWrench::HalfSine(Vec6::from(s.wrench)),
                },
            })
            .collect();
        DisturbanceProfile::new(segments.clone(), file.seed)
            .map_err(|e| invalid("disturbance.segments", e.to_string()))?;
        let random_disturbance = file.disturbance.random.map(|r| RandomDisturbance {
            start: r.start,
            end: r.end,
            gap: (r.gap[0], r.gap[1]),
            duration: (r.duration[0], r.duration[1]),
            magnitude: (r.magnitude[0], r.magnitude[1]),
            axes: r.axes,
            time_grid: r.time_grid,
        });
        if let Some(r) = &random_disturbance {
            r.validate().map_err(|e| invalid("disturbance.random", e.to_string()))?;
            if !segments.is_empty() {
                return Err(invalid("disturbance", "use either scripted segments or a random profile, not both"));
            }
        }

        let reference = match &file.reference {
            None => ReferenceSchedule::constant(Vec6::zeros()),
            Some(r) => {
                let interpolation = match r.interpolation {
                    InterpolationFile::Hold => Interpolation::Hold,
                    InterpolationFile::Linear => Interpolation::Linear,
                };
                let wps = r.waypoints.iter().map(|w| (w.t, Vec6::from(w.p))).collect();
                ReferenceSchedule::new(wps, interpolation).map_err(|e| invalid("reference", e.to_string()))?
            }
        };

        let safe_set = match &file.safe_set {
            None => None,
            Some(s) => Some(
                BoxSafeSet::new(s.d_lb.to_vec6(), s.d_ub.to_vec6(), s.active)
                    .map_err(|e| invalid("safe_set", e.to_string()))?,
            ),
        };

        let gain_bounds = file.gain_bounds.to_bounds("gain_bounds")?;
        let initial_gains = match &file.initial_gains {
            InitialGainsFile::Fixed(g) => {
                let gains = to_gains(g).map_err(|m| invalid("initial_gains.fixed", m))?;
                let u = input_from_gains(&gains);
                if !gain_bounds.contains(u.as_vector()) {
                    return Err(invalid("initial_gains.fixed", "outside gain_bounds"));
                }
                InitialGains::Fixed(u)
            }
            InitialGainsFile::Random(r) => {
                let b = r.to_bounds("initial_gains.random")?;
                for i in 0..INPUT_DIM {
                    if b.lower()[i] < gain_bounds.lower()[i] || b.upper()[i] > gain_bounds.upper()[i] {
                        return Err(invalid("initial_gains.random", "range must lie inside gain_bounds"));
                    }
                }
                InitialGains::Random { lower: *b.lower(), upper: *b.upper() }
            }
        };
        let baseline_gains = to_gains(&file.baseline_gains).map_err(|m| invalid("baseline_gains", m))?;

        let l = &file.loop_config;
        let loop_config = LoopConfig {
            tick_rate: l.tick_rate,
            buffer_period: l.buffer_period,
            gamma: l.gamma,
            substeps: l.substeps,
            mode: match l.mode {
                ModeFile::SafeOngoVic => ControllerMode::SafeOnGoVic,
                ModeFile::ConstantGain => ControllerMode::ConstantGain,
            },
            solve_latency: l.solve_latency,
            cost: match l.cost {
                CostFile::Fitave => CostKind::Fitave,
                CostFile::Itae => CostKind::Itae,
            },
            evaluation: match l.evaluation {
                EvaluationFile::Resimulate => EvaluationMode::Resimulate,
                EvaluationFile::RecordedState => EvaluationMode::RecordedState,
            },
            sqp: SqpOptions { max_iter: l.sqp_max_iter, tol: l.sqp_tol, seed: file.seed, ..SqpOptions::default() },
            qp: QpOptions { tol: l.qp_tol, max_iter: l.qp_max_iter },
            relax_penalty: l.relax_penalty,
        };
        loop_config.validate().map_err(|m| invalid("loop", m))?;
        if loop_config.dt() > crate::dynamics::DEFAULT_DT_MAX * (1.0 + 1e-12) && loop_config.substeps == 1 {
            log::warn!("tick period {} s exceeds the default integration step", loop_config.dt());
        }

        let m = &file.metrics;
        let metrics = MetricsConfig {
            axis: m.axis,
            touch_threshold: m.touch_threshold,
            band_fraction: m.band_fraction,
            band_floor: m.band_floor,
            dwell: m.dwell,
            steady_window: m.steady_window,
        };
        if let Some(a) = metrics.axis {
            if a >= AXES {
                return Err(invalid("metrics.axis", format!("{a} out of range")));
            }
        }
        let positive = [
            ("metrics.touch_threshold", metrics.touch_threshold),
            ("metrics.band_fraction", metrics.band_fraction),
            ("metrics.band_floor", metrics.band_floor),
            ("metrics.dwell", metrics.dwell),
            ("metrics.steady_window", metrics.steady_window),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(field, "must be positive"));
            }
        }

        Ok(Scenario {
            name: file.name.clone(),
            episode_length: file.episode_length,
            seed: file.seed,
            initial_state,
            surfaces,
            segments,
            random_disturbance,
            reference,
            safe_set,
            gain_bounds,
            initial_gains,
            baseline_gains,
            loop_config,
            metrics,
            output_dir: file.output_dir.clone(),
            file,
        })
    }

    /// Same scenario with a different seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut s = self.clone();
        s.seed = seed;
        s.file.seed = seed;
        s.loop_config.sqp.seed = seed;
        s
    }

    /// Same scenario with a different simulated solve latency.
    pub fn with_latency(&self, latency: f64) -> Result<Self, ScenarioError> {
        let mut s = self.clone();
        s.loop_config.solve_latency = latency;
        s.file.loop_config.solve_latency = latency;
        s.loop_config.validate().map_err(|m| invalid("loop.solve_latency", m))?;
        Ok(s)
    }

    pub fn with_mode(&self, mode: ControllerMode) -> Self {
        let mut s = self.clone();
        s.loop_config.mode = mode;
        s.file.loop_config.mode = match mode {
            ControllerMode::SafeOnGoVic => ModeFile::SafeOngoVic,
            ControllerMode::ConstantGain => ModeFile::ConstantGain,
        };
        s
    }

    pub fn disturbance(&self) -> Result<DisturbanceProfile, ScenarioError> {
        match &self.random_disturbance {
            Some(r) => {
                DisturbanceProfile::random(self.seed, r).map_err(|e| invalid("disturbance.random", e.to_string()))
            }
            None => DisturbanceProfile::new(self.segments.clone(), self.seed)
                .map_err(|e| invalid("disturbance.segments", e.to_string())),
        }
    }

    pub fn environment(&self) -> Result<Environment, ScenarioError> {
        Ok(Environment::new(self.surfaces.clone(), self.disturbance()?))
    }

    /// Starting gains for the optimizing controller; random draws are seeded.
    pub fn initial_input(&self) -> GainInput {
        match &self.initial_gains {
            InitialGains::Fixed(u) => *u,
            InitialGains::Random { lower, upper } => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ GAIN_STREAM);
                let u = InputVector::from_fn(|i, _| {
                    let (lo, hi) = (lower[i], upper[i]);
                    if hi > lo {
                        rng.random_range(lo..hi)
                    } else {
                        lo
                    }
                });
                GainInput::new(u).expect("validated ranges are positive")
            }
        }
    }

    /// The effective scenario, defaults included, as pretty JSON.
    pub fn resolved_json(&self) -> String {
        serde_json::to_string_pretty(&self.file).expect("scenario file serializes")
    }

    pub fn file(&self) -> &ScenarioFile {
        &self.file
    }
}

fn to_gains(g: &GainsFile) -> Result<ImpedanceGains, String> {
    ImpedanceGains::new(g.mass.to_vec6(), g.damping.to_vec6(), g.stiffness.to_vec6()).map_err(|e| e.to_string())
}
