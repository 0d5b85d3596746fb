//! Impedance error dynamics in control-affine form.
//!
//! With diagonal mass, damping and stiffness matrices the closed loop
//! `M ë + K_d ė + K_p e = F` can be divided through by `M` and rearranged so
//! that it is linear in the 18-dimensional gain vector
//!
//! ```text
//! u = [K_d1/M_1 .. K_d6/M_6, K_p1/M_1 .. K_p6/M_6, 1/M_1 .. 1/M_6]
//! ẋ = [ė; 0] + [0; g2(x)] u
//! ```
//!
//! Everything in this module is a pure function over value types.

use nalgebra::{SMatrix, SVector, Vector6};
use thiserror::Error;

/// Number of Cartesian error axes (3 translational, 3 rotational).
pub const AXES: usize = 6;
/// Length of the gain input vector.
pub const INPUT_DIM: usize = 3 * AXES;

pub const DEFAULT_U_MIN: f64 = 1e-6;
pub const DEFAULT_U_MAX: f64 = 1e6;
/// One control tick at 125 Hz.
pub const DEFAULT_DT_MAX: f64 = 1.0 / 125.0;

pub type Vec6 = Vector6<f64>;
pub type InputVector = SVector<f64, INPUT_DIM>;
pub type G2Matrix = SMatrix<f64, AXES, INPUT_DIM>;

/// Offsets of the three blocks inside the gain input vector.
pub const DAMPING_BLOCK: usize = 0;
pub const STIFFNESS_BLOCK: usize = AXES;
pub const INVERSE_MASS_BLOCK: usize = 2 * AXES;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("state became non-finite at t = {t}")]
    NonFinite { t: f64 },
    #[error("invalid step size {dt}: must satisfy 0 < dt <= {dt_max}")]
    InvalidStep { dt: f64, dt_max: f64 },
    #[error("gain component {index} = {value} must be finite and strictly positive")]
    NonPositiveGain { index: usize, value: f64 },
    #[error("invalid gain bounds at component {index}: [{lower}, {upper}]")]
    InvalidBounds { index: usize, lower: f64, upper: f64 },
}

/// Tracking error state `x = [e; ė]` at simulation time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantState {
    pub e: Vec6,
    pub e_dot: Vec6,
    pub t: f64,
}

impl PlantState {
    pub fn new(e: Vec6, e_dot: Vec6, t: f64) -> Self {
        Self { e, e_dot, t }
    }

    pub fn origin() -> Self {
        Self::new(Vec6::zeros(), Vec6::zeros(), 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.e.iter().all(|v| v.is_finite()) && self.e_dot.iter().all(|v| v.is_finite())
    }
}

/// External force/torque acting on the end effector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wrench(pub Vec6);

impl Wrench {
    pub fn zero() -> Self {
        Self(Vec6::zeros())
    }

    /// A wrench with a single nonzero component.
    pub fn on_axis(axis: usize, value: f64) -> Self {
        let mut w = Vec6::zeros();
        w[axis] = value;
        Self(w)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Add for Wrench {
    type Output = Wrench;

    fn add(self, rhs: Wrench) -> Wrench {
        Wrench(self.0 + rhs.0)
    }
}

impl std::ops::AddAssign for Wrench {
    fn add_assign(&mut self, rhs: Wrench) {
        self.0 += rhs.0;
    }
}

/// The 18-dimensional, strictly positive gain input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainInput(InputVector);

impl GainInput {
    pub fn new(u: InputVector) -> Result<Self, DynamicsError> {
        for (index, &value) in u.iter().enumerate() {
            if !(value.is_finite() && value > 0.0) {
                return Err(DynamicsError::NonPositiveGain { index, value });
            }
        }
        Ok(Self(u))
    }

    pub fn from_blocks(damping: Vec6, stiffness: Vec6, inverse_mass: Vec6) -> Result<Self, DynamicsError> {
        let mut u = InputVector::zeros();
        u.fixed_rows_mut::<AXES>(DAMPING_BLOCK).copy_from(&damping);
        u.fixed_rows_mut::<AXES>(STIFFNESS_BLOCK).copy_from(&stiffness);
        u.fixed_rows_mut::<AXES>(INVERSE_MASS_BLOCK).copy_from(&inverse_mass);
        Self::new(u)
    }

    /// Same transformed damping, stiffness and inverse mass on every axis.
    pub fn uniform(damping: f64, stiffness: f64, inverse_mass: f64) -> Result<Self, DynamicsError> {
        Self::from_blocks(Vec6::repeat(damping), Vec6::repeat(stiffness), Vec6::repeat(inverse_mass))
    }

    pub fn as_vector(&self) -> &InputVector {
        &self.0
    }

    pub fn into_vector(self) -> InputVector {
        self.0
    }

    /// `K'_d` on `axis` (1/s).
    pub fn damping(&self, axis: usize) -> f64 {
        self.0[DAMPING_BLOCK + axis]
    }

    /// `K'_p` on `axis` (1/s²).
    pub fn stiffness(&self, axis: usize) -> f64 {
        self.0[STIFFNESS_BLOCK + axis]
    }

    /// `1/M` on `axis`.
    pub fn inverse_mass(&self, axis: usize) -> f64 {
        self.0[INVERSE_MASS_BLOCK + axis]
    }
}

/// Componentwise box `lower <= u <= upper` on the gain input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainBounds {
    lower: InputVector,
    upper: InputVector,
}

impl GainBounds {
    pub fn new(lower: InputVector, upper: InputVector) -> Result<Self, DynamicsError> {
        for index in 0..INPUT_DIM {
            let (lo, hi) = (lower[index], upper[index]);
            if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
                return Err(DynamicsError::InvalidBounds { index, lower: lo, upper: hi });
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn uniform(u_min: f64, u_max: f64) -> Result<Self, DynamicsError> {
        Self::new(InputVector::repeat(u_min), InputVector::repeat(u_max))
    }

    /// Per-block ranges shared by all axes.
    pub fn from_blocks(
        damping: (f64, f64),
        stiffness: (f64, f64),
        inverse_mass: (f64, f64),
    ) -> Result<Self, DynamicsError> {
        let mut lower = InputVector::zeros();
        let mut upper = InputVector::zeros();
        for (offset, (lo, hi)) in
            [(DAMPING_BLOCK, damping), (STIFFNESS_BLOCK, stiffness), (INVERSE_MASS_BLOCK, inverse_mass)]
        {
            for axis in 0..AXES {
                lower[offset + axis] = lo;
                upper[offset + axis] = hi;
            }
        }
        Self::new(lower, upper)
    }

    pub fn lower(&self) -> &InputVector {
        &self.lower
    }

    pub fn upper(&self) -> &InputVector {
        &self.upper
    }

    pub fn contains(&self, u: &InputVector) -> bool {
        u.iter().zip(self.lower.iter().zip(self.upper.iter())).all(|(v, (lo, hi))| v >= lo && v <= hi)
    }

    pub fn clamp(&self, u: &InputVector) -> InputVector {
        InputVector::from_fn(|i, _| u[i].clamp(self.lower[i], self.upper[i]))
    }
}

impl Default for GainBounds {
    fn default() -> Self {
        Self::uniform(DEFAULT_U_MIN, DEFAULT_U_MAX).expect("default bounds are valid")
    }
}

/// Diagonal impedance matrices `M`, `K_d`, `K_p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImpedanceGains {
    pub mass: Vec6,
    pub damping: Vec6,
    pub stiffness: Vec6,
}

impl ImpedanceGains {
    pub fn new(mass: Vec6, damping: Vec6, stiffness: Vec6) -> Result<Self, DynamicsError> {
        let blocks = [(INVERSE_MASS_BLOCK, &mass), (DAMPING_BLOCK, &damping), (STIFFNESS_BLOCK, &stiffness)];
        for (offset, block) in blocks {
            for (axis, &value) in block.iter().enumerate() {
                if !(value.is_finite() && value > 0.0) {
                    return Err(DynamicsError::NonPositiveGain { index: offset + axis, value });
                }
            }
        }
        Ok(Self { mass, damping, stiffness })
    }

    pub fn uniform(mass: f64, damping: f64, stiffness: f64) -> Result<Self, DynamicsError> {
        Self::new(Vec6::repeat(mass), Vec6::repeat(damping), Vec6::repeat(stiffness))
    }
}

/// Recover `M`, `K_d`, `K_p` from the gain input.
pub fn recover_gains(u: &GainInput) -> ImpedanceGains {
    let mass = Vec6::from_fn(|i, _| 1.0 / u.inverse_mass(i));
    let damping = Vec6::from_fn(|i, _| mass[i] * u.damping(i));
    let stiffness = Vec6::from_fn(|i, _| mass[i] * u.stiffness(i));
    ImpedanceGains { mass, damping, stiffness }
}

/// Inverse of [`recover_gains`].
pub fn input_from_gains(g: &ImpedanceGains) -> GainInput {
    let mut u = InputVector::zeros();
    for i in 0..AXES {
        u[DAMPING_BLOCK + i] = g.damping[i] / g.mass[i];
        u[STIFFNESS_BLOCK + i] = g.stiffness[i] / g.mass[i];
        u[INVERSE_MASS_BLOCK + i] = 1.0 / g.mass[i];
    }
    GainInput(u)
}

/// Input matrix `g2(x) = [diag(-ė) | diag(-e) | diag(F)]`.
pub fn assemble_g2(state: &PlantState, wrench: &Wrench) -> G2Matrix {
    let mut g = G2Matrix::zeros();
    for i in 0..AXES {
        g[(i, DAMPING_BLOCK + i)] = -state.e_dot[i];
        g[(i, STIFFNESS_BLOCK + i)] = -state.e[i];
        g[(i, INVERSE_MASS_BLOCK + i)] = wrench.0[i];
    }
    g
}

/// `(ė, ë)` with `ë = g2(x) u`, evaluated axis by axis without forming `g2`.
pub fn state_derivative(state: &PlantState, u: &GainInput, wrench: &Wrench) -> (Vec6, Vec6) {
    let accel = Vec6::from_fn(|i, _| {
        -u.damping(i) * state.e_dot[i] - u.stiffness(i) * state.e[i] + u.inverse_mass(i) * wrench.0[i]
    });
    (state.e_dot, accel)
}

/// Fixed-step classical RK4 with optional sub-stepping of each step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integrator {
    pub dt_max: f64,
    pub substeps: usize,
}

impl Default for Integrator {
    fn default() -> Self {
        Self { dt_max: DEFAULT_DT_MAX, substeps: 1 }
    }
}

impl Integrator {
    pub fn with_substeps(substeps: usize) -> Self {
        Self { substeps: substeps.max(1), ..Self::default() }
    }

    /// Advance `state` by `dt` under constant `u`.
    ///
    /// `force` is queried at every RK4 stage with the stage state, so
    /// state-dependent contact forces are resolved inside the step.
    pub fn step<F>(&self, state: &PlantState, u: &GainInput, mut force: F, dt: f64) -> Result<PlantState, DynamicsError>
    where
        F: FnMut(&PlantState) -> Wrench,
    {
        if !(dt > 0.0 && dt <= self.dt_max * (1.0 + 1e-12)) {
            return Err(DynamicsError::InvalidStep { dt, dt_max: self.dt_max });
        }
        let n = self.substeps.max(1);
        let h = dt / n as f64;
        let t0 = state.t;
        let mut x = *state;
        for k in 0..n {
            x = rk4(&x, u, &mut force, h);
            x.t = if k + 1 == n { t0 + dt } else { t0 + (k + 1) as f64 * h };
        }
        if !x.is_finite() {
            return Err(DynamicsError::NonFinite { t: x.t });
        }
        Ok(x)
    }
}

/// One RK4 step with the default integrator (no sub-stepping, 1/125 s cap).
pub fn integrate_step<F>(state: &PlantState, u: &GainInput, force: F, dt: f64) -> Result<PlantState, DynamicsError>
where
    F: FnMut(&PlantState) -> Wrench,
{
    Integrator::default().step(state, u, force, dt)
}

fn rk4<F>(x: &PlantState, u: &GainInput, force: &mut F, h: f64) -> PlantState
where
    F: FnMut(&PlantState) -> Wrench,
{
    let deriv = |s: &PlantState, force: &mut F| state_derivative(s, u, &force(s));
    let shifted =
        |dx: &(Vec6, Vec6), scale: f64, dt: f64| PlantState::new(x.e + dx.0 * scale, x.e_dot + dx.1 * scale, x.t + dt);

    let k1 = deriv(x, force);
    let k2 = deriv(&shifted(&k1, 0.5 * h, 0.5 * h), force);
    let k3 = deriv(&shifted(&k2, 0.5 * h, 0.5 * h), force);
    let k4 = deriv(&shifted(&k3, h, h), force);

    PlantState::new(
        x.e + (k1.0 + (k2.0 + k3.0) * 2.0 + k4.0) * (h / 6.0),
        x.e_dot + (k1.1 + (k2.1 + k3.1) * 2.0 + k4.1) * (h / 6.0),
        x.t + h,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_axis_input(damping: f64, stiffness: f64, inverse_mass: f64) -> GainInput {
        GainInput::uniform(damping, stiffness, inverse_mass).unwrap()
    }

    #[test]
    fn g2_single_axis_entries() {
        let mut state = PlantState::origin();
        state.e[0] = 0.5;
        state.e_dot[0] = 0.2;
        let g = assemble_g2(&state, &Wrench::on_axis(0, 1.0));
        assert_eq!(g[(0, 0)], -0.2);
        assert_eq!(g[(0, 6)], -0.5);
        assert_eq!(g[(0, 12)], 1.0);
        assert_eq!(g.row(0).iter().filter(|v| **v != 0.0).count(), 3);
    }

    #[test]
    fn g2_vanishes_at_rest_without_force() {
        let g = assemble_g2(&PlantState::origin(), &Wrench::zero());
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn derivative_single_axis() {
        let u = one_axis_input(2.0, 1.0, 1.0);
        let mut state = PlantState::origin();
        state.e[0] = 1.0;
        let (_, acc) = state_derivative(&state, &u, &Wrench::zero());
        assert_eq!(acc[0], -1.0);
    }

    #[test]
    fn origin_is_a_fixed_point() {
        let u = one_axis_input(3.0, 7.0, 0.4);
        let (vel, acc) = state_derivative(&PlantState::origin(), &u, &Wrench::zero());
        assert_eq!(vel, Vec6::zeros());
        assert_eq!(acc, Vec6::zeros());
        let next = integrate_step(&PlantState::origin(), &u, |_| Wrench::zero(), DEFAULT_DT_MAX).unwrap();
        assert_eq!(next.e, Vec6::zeros());
        assert_eq!(next.e_dot, Vec6::zeros());
        assert!((next.t - DEFAULT_DT_MAX).abs() < 1e-15);
    }

    #[test]
    fn undamped_oscillator_quarter_period() {
        let u = one_axis_input(DEFAULT_U_MIN, 1.0, 1.0);
        let mut state = PlantState::origin();
        state.e[0] = 1.0;
        let dt = 1e-3;
        let target = std::f64::consts::FRAC_PI_2;
        let steps = (target / dt).floor() as usize;
        for _ in 0..steps {
            state = integrate_step(&state, &u, |_| Wrench::zero(), dt).unwrap();
        }
        let rest = target - state.t;
        if rest > 1e-12 {
            state = integrate_step(&state, &u, |_| Wrench::zero(), rest).unwrap();
        }
        assert!(state.e[0].abs() < 1e-5, "e(pi/2) = {}", state.e[0]);
    }

    #[test]
    fn rejects_bad_steps() {
        let u = one_axis_input(1.0, 1.0, 1.0);
        let s = PlantState::origin();
        assert!(matches!(integrate_step(&s, &u, |_| Wrench::zero(), 0.0), Err(DynamicsError::InvalidStep { .. })));
        assert!(matches!(integrate_step(&s, &u, |_| Wrench::zero(), 0.1), Err(DynamicsError::InvalidStep { .. })));
    }

    #[test]
    fn non_finite_state_is_reported() {
        let u = one_axis_input(1.0, 1.0, 1.0);
        let s = PlantState::origin();
        let err = integrate_step(&s, &u, |_| Wrench::on_axis(0, f64::INFINITY), 1e-3).unwrap_err();
        assert!(matches!(err, DynamicsError::NonFinite { .. }));
    }

    #[test]
    fn substeps_advance_time_exactly() {
        let u = one_axis_input(4.0, 9.0, 1.0);
        let mut s = PlantState::origin();
        s.e[1] = 0.3;
        let next = Integrator::with_substeps(7).step(&s, &u, |_| Wrench::zero(), DEFAULT_DT_MAX).unwrap();
        assert_eq!(next.t, DEFAULT_DT_MAX);
    }

    #[test]
    fn recover_gains_examples() {
        let mut u = InputVector::repeat(1.0);
        for i in 0..AXES {
            u[INVERSE_MASS_BLOCK + i] = 0.5;
        }
        u[0] = 4.0;
        let g = recover_gains(&GainInput::new(u).unwrap());
        assert_eq!(g.mass[0], 2.0);
        assert_eq!(g.damping[0], 8.0);

        let id = recover_gains(&GainInput::new(InputVector::repeat(1.0)).unwrap());
        assert_eq!(id, ImpedanceGains::uniform(1.0, 1.0, 1.0).unwrap());
    }

    #[test]
    fn input_from_gains_examples() {
        let u = input_from_gains(&ImpedanceGains::uniform(1.0, 20.0, 100.0).unwrap());
        for i in 0..AXES {
            assert_eq!(u.damping(i), 20.0);
            assert_eq!(u.stiffness(i), 100.0);
            assert_eq!(u.inverse_mass(i), 1.0);
        }
        let u = input_from_gains(&ImpedanceGains::uniform(2.0, 8.0, 1.0).unwrap());
        assert_eq!(u.damping(0), 4.0);
    }

    #[test]
    fn invalid_gains_and_bounds_are_rejected() {
        assert!(GainInput::uniform(1.0, 0.0, 1.0).is_err());
        assert!(GainInput::uniform(1.0, f64::NAN, 1.0).is_err());
        assert!(ImpedanceGains::uniform(-1.0, 1.0, 1.0).is_err());
        assert!(GainBounds::uniform(2.0, 1.0).is_err());
        assert!(GainBounds::uniform(0.0, 1.0).is_err());
        let b = GainBounds::default();
        assert!(b.contains(&InputVector::repeat(1.0)));
        assert!(!b.contains(&InputVector::repeat(2e6)));
    }

    /// Global error at `t_end` of the damped oscillator against its closed form.
    fn oscillator_error(dt: f64) -> f64 {
        let (zeta_w, w0) = (0.5, 3.0);
        let u = one_axis_input(2.0 * zeta_w, w0 * w0, 1.0);
        let wd = (w0 * w0 - zeta_w * zeta_w).sqrt();
        let exact = |t: f64| (-zeta_w * t).exp() * ((wd * t).cos() + zeta_w / wd * (wd * t).sin());
        let mut s = PlantState::origin();
        s.e[0] = 1.0;
        let steps = (2.0 / dt).round() as usize;
        for _ in 0..steps {
            s = integrate_step(&s, &u, |_| Wrench::zero(), dt).unwrap();
        }
        (s.e[0] - exact(s.t)).abs()
    }

    #[test]
    fn rk4_is_fourth_order() {
        let errs: Vec<f64> = [4e-3, 2e-3, 1e-3].iter().map(|&dt| oscillator_error(dt)).collect();
        for pair in errs.windows(2) {
            let ratio = pair[0] / pair[1];
            assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
        }
    }

    fn vec6() -> impl Strategy<Value = Vec6> {
        prop::array::uniform6(-2.0..2.0f64).prop_map(Vec6::from)
    }

    fn gain_vector() -> impl Strategy<Value = InputVector> {
        prop::collection::vec(0.01..50.0f64, INPUT_DIM).prop_map(|v| InputVector::from_column_slice(&v))
    }

    proptest! {
        #[test]
        fn derivative_matches_g2_product(e in vec6(), ed in vec6(), f in vec6(), u in gain_vector()) {
            let s = PlantState::new(e, ed, 0.0);
            let w = Wrench(f);
            let u = GainInput::new(u).unwrap();
            let (_, acc) = state_derivative(&s, &u, &w);
            let expected = assemble_g2(&s, &w) * u.as_vector();
            prop_assert!((acc - expected).amax() <= 1e-12 * (1.0 + expected.amax()));
            let g = assemble_g2(&s, &w);
            prop_assert!(g.iter().filter(|v| **v != 0.0).count() <= INPUT_DIM);
            for r in 0..AXES {
                for c in 0..INPUT_DIM {
                    if c % AXES != r {
                        prop_assert_eq!(g[(r, c)], 0.0);
                    }
                }
            }
        }

        #[test]
        fn acceleration_is_linear_in_u(e in vec6(), ed in vec6(), f in vec6(), u1 in gain_vector(), u2 in gain_vector(),
                                       alpha in -3.0..3.0f64, beta in -3.0..3.0f64) {
            let s = PlantState::new(e, ed, 0.0);
            let w = Wrench(f);
            let g = assemble_g2(&s, &w);
            let combo = u1 * alpha + u2 * beta;
            let lhs = g * combo;
            let rhs = (g * u1) * alpha + (g * u2) * beta;
            prop_assert!((lhs - rhs).amax() <= 1e-11 * (1.0 + rhs.amax()));
            // The componentwise path agrees wherever the combination is a valid input.
            if combo.iter().all(|v| *v > 0.0) {
                let (_, acc) = state_derivative(&s, &GainInput::new(combo).unwrap(), &w);
                prop_assert!((acc - rhs).amax() <= 1e-11 * (1.0 + rhs.amax()));
            }
        }

        #[test]
        fn axes_are_decoupled(e in vec6(), ed in vec6(), f in vec6(), u in gain_vector(), j in 0..AXES, d in -1.0..1.0f64) {
            let u = GainInput::new(u).unwrap();
            let base = state_derivative(&PlantState::new(e, ed, 0.0), &u, &Wrench(f)).1;
            let (mut e2, mut ed2, mut f2) = (e, ed, f);
            e2[j] += d;
            ed2[j] -= d;
            f2[j] += 2.0 * d;
            let moved = state_derivative(&PlantState::new(e2, ed2, 0.0), &u, &Wrench(f2)).1;
            for i in (0..AXES).filter(|&i| i != j) {
                prop_assert_eq!(base[i], moved[i]);
            }
        }

        #[test]
        fn gain_round_trip(u in gain_vector()) {
            let u = GainInput::new(u).unwrap();
            let back = input_from_gains(&recover_gains(&u));
            for i in 0..INPUT_DIM {
                let (a, b) = (back.as_vector()[i], u.as_vector()[i]);
                prop_assert!((a - b).abs() <= 1e-12 * b.abs());
            }
        }

        #[test]
        fn origin_is_asymptotically_stable(modes in prop::array::uniform6((0.3..2.0f64, 1.0..10.0f64)), m in 0.1..10.0f64, e in vec6(), ed in vec6()) {
            // Per-axis damping ratio and natural frequency keep every axis well inside the stable region.
            let damping = Vec6::from_fn(|i, _| 2.0 * modes[i].0 * modes[i].1);
            let stiffness = Vec6::from_fn(|i, _| modes[i].1 * modes[i].1);
            let u = GainInput::from_blocks(damping, stiffness, Vec6::repeat(m)).unwrap();
            // Slowest decay rate and fastest eigenvalue magnitude over all axes.
            let mut slowest = f64::INFINITY;
            let mut fastest: f64 = 0.0;
            for i in 0..AXES {
                let (c, k) = (u.damping(i), u.stiffness(i));
                let disc = c * c / 4.0 - k;
                let (rate, mag) = if disc >= 0.0 {
                    (c / 2.0 - disc.sqrt(), c / 2.0 + disc.sqrt())
                } else {
                    (c / 2.0, k.sqrt())
                };
                slowest = slowest.min(rate);
                fastest = fastest.max(mag);
            }
            let dt = (0.2 / fastest).min(DEFAULT_DT_MAX);
            let norm = |s: &PlantState| s.e.norm() + s.e_dot.norm();
            let mut s = PlantState::new(e, ed, 0.0);
            let initial = norm(&s);
            prop_assume!(initial > 1e-3);
            // Repeated eigenvalues add a polynomial factor; allow for it in the horizon.
            let horizon = (1e3f64.ln() + 6.0) / slowest * 1.5;
            let steps = (horizon / dt).ceil() as usize;
            for _ in 0..steps {
                s = integrate_step(&s, &u, |_| Wrench::zero(), dt).unwrap();
            }
            prop_assert!(norm(&s) < 1e-3 * initial, "final {} initial {}", norm(&s), initial);
        }
    }
}
