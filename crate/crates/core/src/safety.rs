//! Position-box barriers and the gain-linear constraints they induce.
//!
//! A position barrier `h_p(e)` has relative degree two with respect to the
//! gains, so it is extended twice with the same rate `γ`:
//!
//! ```text
//! h'  = ∂h/∂e · ė + γ h
//! ḣ' + γ h' = ∂²h/∂e² ė² + ∂h/∂e (g2 u + 2γ ė) + γ² h  >= 0
//! ```
//!
//! The last line is affine in `u` and becomes one [`ConstraintRow`].

use thiserror::Error;

use crate::dynamics::{assemble_g2, GainBounds, InputVector, PlantState, Vec6, Wrench, AXES, INPUT_DIM};

pub const DEFAULT_GAMMA: f64 = 5.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SafetyError {
    #[error("safe set axis {axis}: lower bound {lower} must be below upper bound {upper}")]
    EmptyBox { axis: usize, lower: f64, upper: f64 },
    #[error("barrier rate gamma must be positive and finite, got {0}")]
    BadGamma(f64),
}

/// Componentwise box `d_lb <= e <= d_ub` on the active axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxSafeSet {
    d_lb: Vec6,
    d_ub: Vec6,
    active: [bool; AXES],
}

impl BoxSafeSet {
    pub fn new(d_lb: Vec6, d_ub: Vec6, active: [bool; AXES]) -> Result<Self, SafetyError> {
        for i in (0..AXES).filter(|&i| active[i]) {
            if !(d_lb[i].is_finite() && d_ub[i].is_finite() && d_lb[i] < d_ub[i]) {
                return Err(SafetyError::EmptyBox { axis: i, lower: d_lb[i], upper: d_ub[i] });
            }
        }
        Ok(Self { d_lb, d_ub, active })
    }

    pub fn lower(&self) -> &Vec6 {
        &self.d_lb
    }

    pub fn upper(&self) -> &Vec6 {
        &self.d_ub
    }

    pub fn active(&self) -> &[bool; AXES] {
        &self.active
    }

    pub fn active_axes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..AXES).filter(|&i| self.active[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierParams {
    gamma: f64,
}

impl BarrierParams {
    pub fn new(gamma: f64) -> Result<Self, SafetyError> {
        if gamma.is_finite() && gamma > 0.0 {
            Ok(Self { gamma })
        } else {
            Err(SafetyError::BadGamma(gamma))
        }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

impl Default for BarrierParams {
    fn default() -> Self {
        Self { gamma: DEFAULT_GAMMA }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundSide {
    Upper,
    Lower,
}

/// A scalar barrier on one axis with its first and second derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Barrier {
    pub axis: usize,
    pub side: BoundSide,
    pub h: f64,
    pub grad: f64,
    pub hess: f64,
}

/// Linear inequality `a · u + b >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintRow {
    pub a: InputVector,
    pub b: f64,
}

impl ConstraintRow {
    pub fn new(a: InputVector, b: f64) -> Self {
        Self { a, b }
    }

    /// `a · u + b`; negative means violated.
    pub fn residual(&self, u: &InputVector) -> f64 {
        self.a.dot(u) + self.b
    }

    pub fn is_finite(&self) -> bool {
        self.b.is_finite() && self.a.iter().all(|v| v.is_finite())
    }
}

/// Two barriers per active axis: `d_ub - e` then `e - d_lb`.
pub fn barrier_values(state: &PlantState, set: &BoxSafeSet) -> Vec<Barrier> {
    let mut out = Vec::with_capacity(2 * AXES);
    for i in set.active_axes() {
        let e = state.e[i];
        out.push(Barrier { axis: i, side: BoundSide::Upper, h: set.d_ub[i] - e, grad: -1.0, hess: 0.0 });
        out.push(Barrier { axis: i, side: BoundSide::Lower, h: e - set.d_lb[i], grad: 1.0, hess: 0.0 });
    }
    out
}

/// Smallest barrier value, `+∞` when nothing is active.
pub fn min_barrier(state: &PlantState, set: &BoxSafeSet) -> f64 {
    barrier_values(state, set).iter().map(|b| b.h).fold(f64::INFINITY, f64::min)
}

pub fn extended_barrier(state: &PlantState, barrier: &Barrier, params: &BarrierParams) -> f64 {
    barrier.grad * state.e_dot[barrier.axis] + params.gamma * barrier.h
}

pub fn constraint_row(state: &PlantState, wrench: &Wrench, barrier: &Barrier, params: &BarrierParams) -> ConstraintRow {
    let i = barrier.axis;
    let g = params.gamma;
    let v = state.e_dot[i];
    let a = assemble_g2(state, wrench).row(i).transpose() * barrier.grad;
    let b = barrier.hess * v * v + barrier.grad * 2.0 * g * v + g * g * barrier.h;
    ConstraintRow { a, b }
}

/// `u_i - lower_i >= 0` and `upper_i - u_i >= 0` for every component.
pub fn bound_rows(bounds: &GainBounds) -> Vec<ConstraintRow> {
    let mut rows = Vec::with_capacity(2 * INPUT_DIM);
    for i in 0..INPUT_DIM {
        let mut a = InputVector::zeros();
        a[i] = 1.0;
        rows.push(ConstraintRow { a, b: -bounds.lower()[i] });
        rows.push(ConstraintRow { a: -a, b: bounds.upper()[i] });
    }
    rows
}

/// Barrier rows for every active axis followed by the gain bound rows.
pub fn assemble_constraints(
    state: &PlantState,
    wrench: &Wrench,
    set: &BoxSafeSet,
    params: &BarrierParams,
    bounds: &GainBounds,
) -> Vec<ConstraintRow> {
    let mut rows: Vec<ConstraintRow> =
        barrier_values(state, set).iter().map(|b| constraint_row(state, wrench, b, params)).collect();
    rows.extend(bound_rows(bounds));
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::GainInput;
    use proptest::prelude::*;

    fn unit_box(active: [bool; AXES]) -> BoxSafeSet {
        BoxSafeSet::new(Vec6::repeat(-1.0), Vec6::repeat(1.0), active).unwrap()
    }

    fn state_1d(e: f64, v: f64) -> PlantState {
        let mut s = PlantState::origin();
        s.e[0] = e;
        s.e_dot[0] = v;
        s
    }

    const FIRST: [bool; AXES] = [true, false, false, false, false, false];

    #[test]
    fn upper_barrier_value() {
        let b = barrier_values(&state_1d(0.3, 0.0), &unit_box(FIRST));
        assert_eq!(b.len(), 2);
        assert!((b[0].h - 0.7).abs() < 1e-15);
        assert_eq!(b[0].side, BoundSide::Upper);
    }

    #[test]
    fn boundary_and_violation_signs() {
        let b = barrier_values(&state_1d(-1.0, 0.0), &unit_box(FIRST));
        assert_eq!(b[1].h, 0.0);
        let b = barrier_values(&state_1d(1.2, 0.0), &unit_box(FIRST));
        assert!(b[0].h < 0.0);
    }

    #[test]
    fn extended_barrier_example() {
        let p = BarrierParams::new(2.0).unwrap();
        let s = state_1d(0.5, 0.1);
        let b = barrier_values(&s, &unit_box(FIRST))[0];
        assert!((extended_barrier(&s, &b, &p) - 0.9).abs() < 1e-12);
        let zero = Barrier { h: 0.0, ..b };
        assert_eq!(extended_barrier(&state_1d(1.0, 0.0), &zero, &p), 0.0);
        let faster = BarrierParams::new(3.0).unwrap();
        assert!(extended_barrier(&s, &b, &faster) > extended_barrier(&s, &b, &p));
    }

    #[test]
    fn constraint_row_hand_expansion() {
        let p = BarrierParams::new(2.0).unwrap();
        let s = state_1d(0.5, 0.1);
        let b = barrier_values(&s, &unit_box(FIRST))[0];
        let row = constraint_row(&s, &Wrench::zero(), &b, &p);
        assert!((row.a[0] - 0.1).abs() < 1e-15);
        assert!((row.a[6] - 0.5).abs() < 1e-15);
        assert_eq!(row.a[12], 0.0);
        assert!((row.b - 1.6).abs() < 1e-12);
        let nonzero = row.a.iter().filter(|v| **v != 0.0).count();
        assert_eq!(nonzero, 2);
    }

    #[test]
    fn row_counts() {
        let s = PlantState::origin();
        let p = BarrierParams::default();
        let bounds = GainBounds::default();
        let set = unit_box([true, true, true, false, false, false]);
        assert_eq!(assemble_constraints(&s, &Wrench::zero(), &set, &p, &bounds).len(), 6 + 36);
        let none = unit_box([false; AXES]);
        assert_eq!(assemble_constraints(&s, &Wrench::zero(), &none, &p, &bounds).len(), 36);
    }

    #[test]
    fn inactive_axes_do_not_matter() {
        let set = unit_box([true, true, true, false, false, false]);
        let p = BarrierParams::default();
        let bounds = GainBounds::default();
        let mut s = PlantState::new(Vec6::repeat(0.2), Vec6::repeat(-0.1), 0.0);
        let w = Wrench(Vec6::repeat(3.0));
        let base = assemble_constraints(&s, &w, &set, &p, &bounds);
        s.e[4] = 40.0;
        s.e_dot[5] = -9.0;
        let mut w2 = w;
        w2.0[3] = -100.0;
        assert_eq!(assemble_constraints(&s, &w2, &set, &p, &bounds), base);
    }

    #[test]
    fn empty_box_rejected() {
        let mut ub = Vec6::repeat(1.0);
        ub[1] = -2.0;
        assert!(matches!(
            BoxSafeSet::new(Vec6::repeat(-1.0), ub, [true; AXES]),
            Err(SafetyError::EmptyBox { axis: 1, .. })
        ));
        assert!(BoxSafeSet::new(Vec6::repeat(-1.0), ub, FIRST).is_ok());
        assert!(BarrierParams::new(0.0).is_err());
    }

    #[test]
    fn bound_rows_encode_the_box() {
        let bounds = GainBounds::uniform(0.5, 2.0).unwrap();
        let rows = bound_rows(&bounds);
        assert!(rows.iter().all(|r| r.residual(&InputVector::repeat(1.0)) > 0.0));
        assert!(rows.iter().any(|r| r.residual(&InputVector::repeat(3.0)) < 0.0));
        assert!(rows.iter().any(|r| r.residual(&InputVector::repeat(0.1)) < 0.0));
    }

    fn gains() -> impl Strategy<Value = GainInput> {
        prop::array::uniform18(0.01..100.0f64).prop_map(|a| GainInput::new(InputVector::from_row_slice(&a)).unwrap())
    }

    proptest! {
        #[test]
        fn rows_are_linear_in_u(e in -0.9..0.9f64, v in -2.0..2.0f64, f in -50.0..50.0f64, u in gains()) {
            let s = state_1d(e, v);
            let p = BarrierParams::default();
            for b in barrier_values(&s, &unit_box(FIRST)) {
                let row = constraint_row(&s, &Wrench::on_axis(0, f), &b, &p);
                let au = row.a.dot(u.as_vector());
                let a2u = row.a.dot(&(u.as_vector() * 2.0));
                prop_assert!((a2u - 2.0 * au).abs() <= 1e-12 * au.abs().max(1.0));
            }
        }

        #[test]
        fn interior_rest_states_admit_non_overshooting_gains(e in prop::array::uniform6(-0.99..0.99f64), u in gains()) {
            let s = PlantState::new(Vec6::from_row_slice(&e), Vec6::zeros(), 0.0);
            let p = BarrierParams::default();
            let set = unit_box([true; AXES]);
            let g2 = p.gamma() * p.gamma();
            for b in barrier_values(&s, &set) {
                let row = constraint_row(&s, &Wrench::zero(), &b, &p);
                prop_assert!(row.b > 0.0);
                // Only the stiffness entry survives at rest without contact.
                for (j, v) in row.a.iter().enumerate() {
                    if j != crate::dynamics::STIFFNESS_BLOCK + b.axis {
                        prop_assert_eq!(*v, 0.0);
                    }
                }
                // The row holds for any gains whose spring cannot outrun the barrier.
                let mut capped = *u.as_vector();
                let k = &mut capped[crate::dynamics::STIFFNESS_BLOCK + b.axis];
                *k = k.min(g2 * b.h / s.e[b.axis].abs().max(1e-12));
                prop_assert!(row.residual(&capped) >= -1e-9 * row.b);
            }
            // At the centre of the box every positive gain vector is admissible.
            let centre = PlantState::origin();
            for b in barrier_values(&centre, &set) {
                prop_assert!(constraint_row(&centre, &Wrench::zero(), &b, &p).residual(u.as_vector()) > 0.0);
            }
        }
    }
}
