//! SQP for black-box costs under linear inequality rows.
//!
//! Each iteration takes a central finite-difference gradient, solves the
//! quadratic model with the current damped-BFGS Hessian over the rows shifted
//! to the iterate, and backtracks along the step until the Armijo condition
//! holds. Variables are rescaled by the magnitude of the starting point so that
//! gains of very different size share one trust scale.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::qp::{qp_solve, QpOptions, QpProblem};
use super::{LinearConstraints, OptimizerError, SolveReport, SolveStatus};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqpOptions {
    pub max_iter: usize,
    /// Stop once the QP step is this small (infinity norm, scaled variables).
    pub tol: f64,
    /// Relative finite-difference step, `h_i = fd_step · max(1, |x_i|)`.
    pub fd_step: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
    /// Attempts to find a finite-cost start when the given one is not.
    pub resample_tries: usize,
    pub seed: u64,
    pub qp: QpOptions,
}

impl Default for SqpOptions {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tol: 1e-8,
            fd_step: 1e-5,
            armijo: 1e-4,
            max_backtracks: 30,
            resample_tries: 10,
            seed: 0,
            qp: QpOptions::default(),
        }
    }
}

/// Central differences with `h_i = rel · max(1, |x_i|)`.
///
/// Probes never leave `[lo, hi]`; near a bound, or when one probe is
/// non-finite, a one-sided difference is used instead.
pub fn finite_difference_gradient<F>(
    f: &F,
    x: &DVector<f64>,
    f0: f64,
    rel: f64,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> f64 + Sync,
{
    let parts: Vec<f64> = (0..x.len())
        .into_par_iter()
        .map(|i| {
            let h = rel * x[i].abs().max(1.0);
            let probe = |delta: f64| {
                let v = x[i] + delta;
                if v < lo[i] || v > hi[i] {
                    return f64::INFINITY;
                }
                let mut y = x.clone();
                y[i] = v;
                f(&y)
            };
            let up = probe(h);
            let down = probe(-h);
            match (up.is_finite(), down.is_finite()) {
                (true, true) => (up - down) / (2.0 * h),
                (true, false) => (up - f0) / h,
                (false, true) => (f0 - down) / h,
                (false, false) => 0.0,
            }
        })
        .collect();
    DVector::from_vec(parts)
}

struct Scaled<'a, F> {
    cost: &'a F,
    scale: DVector<f64>,
}

impl<F: Fn(&DVector<f64>) -> f64 + Sync> Scaled<'_, F> {
    fn unscale(&self, v: &DVector<f64>) -> DVector<f64> {
        v.component_mul(&self.scale)
    }

    fn eval(&self, v: &DVector<f64>) -> f64 {
        let c = (self.cost)(&self.unscale(v));
        if c.is_finite() {
            c
        } else {
            f64::INFINITY
        }
    }
}

/// Minimize `cost` from `u0` subject to `rows`.
///
/// The returned solution is never worse than the (possibly re-sampled)
/// feasible start. `cost` should return `+∞` for rejected candidates.
pub fn sqp_solve<F>(
    cost: F,
    u0: &DVector<f64>,
    rows: &LinearConstraints,
    opts: &SqpOptions,
) -> Result<SolveReport, OptimizerError>
where
    F: Fn(&DVector<f64>) -> f64 + Sync,
{
    let start = Instant::now();
    let n = u0.len();
    if rows.dim() != n {
        return Err(OptimizerError::Dimension(format!("start has {n} entries, rows have {} columns", rows.dim())));
    }
    if !u0.iter().all(|v| v.is_finite()) {
        return Err(OptimizerError::NonFiniteData);
    }
    let mut evaluations = 0usize;

    let scale = u0.map(|v| if v.abs() > 1e-8 { v.abs() } else { 1.0 });
    let problem = Scaled { cost: &cost, scale: scale.clone() };
    let scaled_rows =
        LinearConstraints { a: DMatrix::from_fn(rows.len(), n, |i, j| rows.a[(i, j)] * scale[j]), b: rows.b.clone() };
    let (lo, hi) = scaled_rows.coordinate_bounds();

    // Feasible, finite-cost start.
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut v = project(&u0.component_div(&scale), &scaled_rows, &opts.qp).unwrap_or_else(|| u0.component_div(&scale));
    let mut fv = problem.eval(&v);
    evaluations += 1;
    let mut tries = 0;
    while !fv.is_finite() {
        if tries == opts.resample_tries {
            return Err(OptimizerError::NonFiniteCost);
        }
        tries += 1;
        let candidate = DVector::from_fn(n, |i, _| sample_coordinate(&mut rng, lo[i], hi[i], v[i]));
        v = project(&candidate, &scaled_rows, &opts.qp).unwrap_or(candidate);
        fv = problem.eval(&v);
        evaluations += 1;
        log::debug!("sqp: re-sampled start {tries}, cost {fv:e}");
    }

    let grad_of = |v: &DVector<f64>, fv: f64, evaluations: &mut usize| {
        *evaluations += 2 * n;
        finite_difference_gradient(&|y: &DVector<f64>| problem.eval(y), v, fv, opts.fd_step, &lo, &hi)
    };

    let mut g = grad_of(&v, fv, &mut evaluations);
    let mut b = DMatrix::<f64>::identity(n, n);
    let mut first_update = true;
    let mut iterations = 0;
    let mut last_step = f64::INFINITY;
    let mut status = SolveStatus::MaxIter;
    let mut reset_once = false;

    while iterations < opts.max_iter {
        iterations += 1;
        let shifted = LinearConstraints { a: scaled_rows.a.clone(), b: scaled_rows.residuals(&v) };
        let sub = QpProblem::new(symmetrize(&b), g.clone(), shifted).expect("subproblem data is consistent");
        let rep = qp_solve(&sub, &opts.qp);
        if rep.status == SolveStatus::Infeasible {
            log::debug!("sqp: subproblem infeasible at iteration {iterations}");
            break;
        }
        let d = rep.solution;
        last_step = d.amax();
        if last_step <= opts.tol {
            status = SolveStatus::Optimal;
            break;
        }

        let slope = g.dot(&d);
        let mut alpha = 1.0;
        let mut accepted = None;
        if slope < 0.0 {
            for _ in 0..opts.max_backtracks {
                let trial = &v + &d * alpha;
                let ft = problem.eval(&trial);
                evaluations += 1;
                if ft <= fv + opts.armijo * alpha * slope {
                    accepted = Some((trial, ft));
                    break;
                }
                alpha *= 0.5;
            }
        }
        let Some((v_new, f_new)) = accepted else {
            if !reset_once {
                // The quasi-Newton model went stale; retry once from a fresh Hessian.
                reset_once = true;
                b = DMatrix::identity(n, n);
                first_update = true;
                continue;
            }
            log::debug!("sqp: line search stalled at iteration {iterations}");
            break;
        };
        reset_once = false;

        let g_new = grad_of(&v_new, f_new, &mut evaluations);
        let s = &v_new - &v;
        let y = &g_new - &g;
        if first_update {
            let sy = s.dot(&y);
            let yy = y.dot(&y);
            if sy > 0.0 && yy > 0.0 {
                b = DMatrix::identity(n, n) * (yy / sy);
            }
            first_update = false;
        }
        damped_bfgs(&mut b, &s, &y);
        last_step = s.amax();
        v = v_new;
        fv = f_new;
        g = g_new;
    }

    Ok(SolveReport {
        solution: problem.unscale(&v),
        multipliers: DVector::zeros(0),
        status,
        iterations,
        kkt_residual: last_step,
        objective: fv,
        evaluations,
        wall_time: start.elapsed(),
    })
}

/// Powell-damped BFGS update; keeps `b` positive definite for any `(s, y)`.
fn damped_bfgs(b: &mut DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>) {
    let bs = &*b * s;
    let sbs = s.dot(&bs);
    if sbs <= f64::MIN_POSITIVE {
        return;
    }
    let sy = s.dot(y);
    let theta = if sy >= 0.2 * sbs { 1.0 } else { 0.8 * sbs / (sbs - sy) };
    let r = y * theta + &bs * (1.0 - theta);
    let sr = s.dot(&r);
    if sr <= f64::MIN_POSITIVE {
        return;
    }
    *b += &r * r.transpose() / sr - &bs * bs.transpose() / sbs;
}

fn symmetrize(b: &DMatrix<f64>) -> DMatrix<f64> {
    (b + b.transpose()) * 0.5
}

/// Closest point to `x` satisfying `rows`, or `None` if there is none.
fn project(x: &DVector<f64>, rows: &LinearConstraints, opts: &QpOptions) -> Option<DVector<f64>> {
    if rows.residuals(x).iter().all(|r| *r >= 0.0) {
        return Some(x.clone());
    }
    let n = x.len();
    let p = QpProblem::new(DMatrix::identity(n, n), -x, rows.clone()).ok()?;
    let r = qp_solve(&p, opts);
    match r.status {
        SolveStatus::Infeasible => None,
        _ => Some(r.solution),
    }
}

fn sample_coordinate(rng: &mut ChaCha8Rng, lo: f64, hi: f64, fallback: f64) -> f64 {
    let (lo, hi) = match (lo.is_finite(), hi.is_finite()) {
        (true, true) => (lo, hi),
        (true, false) => (lo, lo + 2.0 * fallback.abs().max(1.0)),
        (false, true) => (hi - 2.0 * fallback.abs().max(1.0), hi),
        (false, false) => (fallback - 1.0, fallback + 1.0),
    };
    if hi <= lo {
        return lo;
    }
    // Wide positive ranges are sampled log-uniformly so every decade is reachable.
    if lo > 0.0 && hi / lo > 100.0 {
        (rng.random_range(lo.ln()..hi.ln())).exp()
    } else {
        rng.random_range(lo..hi)
    }
}
