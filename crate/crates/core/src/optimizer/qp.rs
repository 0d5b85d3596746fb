//! Dual active-set QP (Goldfarb-Idnani) for
//! `min ½ xᵀHx + cᵀx  s.t.  A x + b >= 0`.
//!
//! The dual method starts from the unconstrained minimizer and adds the most
//! violated row each pass, so it needs no feasible starting point and proves
//! infeasibility when a violated row cannot be reached. The projections are
//! rebuilt from a fresh QR of `L⁻¹ N_A` on every pass; with n = 18 that is
//! cheaper than maintaining factor updates and keeps the code short.
//!
//! Singular `H` is handled by proximal-point iterations on `H + ρI`.

use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{LinearConstraints, OptimizerError, SolveReport, SolveStatus};
use crate::dynamics::{InputVector, INPUT_DIM};
use crate::safety::ConstraintRow;

/// Weight on the squared slack when infeasible safety rows are relaxed.
pub const DEFAULT_RELAX_PENALTY: f64 = 1e6;

const SYMMETRY_TOL: f64 = 1e-10;
const DEPENDENCY_TOL: f64 = 1e-12;
const MAX_PROXIMAL_ROUNDS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_iter: 200 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    h: DMatrix<f64>,
    c: DVector<f64>,
    rows: LinearConstraints,
}

impl QpProblem {
    pub fn new(h: DMatrix<f64>, c: DVector<f64>, rows: LinearConstraints) -> Result<Self, OptimizerError> {
        let n = c.len();
        if h.nrows() != n || h.ncols() != n || rows.dim() != n {
            return Err(OptimizerError::Dimension(format!(
                "H is {}x{}, c has {n} entries, rows have {} columns",
                h.nrows(),
                h.ncols(),
                rows.dim()
            )));
        }
        if !(h.iter().all(|v| v.is_finite()) && c.iter().all(|v| v.is_finite())) {
            return Err(OptimizerError::NonFiniteData);
        }
        let asym = (&h - h.transpose()).amax();
        if asym > SYMMETRY_TOL * h.amax().max(1.0) {
            return Err(OptimizerError::Asymmetric(asym));
        }
        Ok(Self { h, c, rows })
    }

    /// `min ‖u - target‖²` subject to `rows`.
    pub fn projection(target: &InputVector, rows: &[ConstraintRow]) -> Self {
        let h = DMatrix::identity(INPUT_DIM, INPUT_DIM) * 2.0;
        let c = DVector::from_iterator(INPUT_DIM, target.iter().map(|v| -2.0 * v));
        Self { h, c, rows: LinearConstraints::from_rows(rows) }
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn rows(&self) -> &LinearConstraints {
        &self.rows
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.c.dot(x)
    }

    /// Largest of the scaled stationarity, primal, dual and complementarity
    /// residuals at `(x, λ)`.
    pub fn kkt_residual(&self, x: &DVector<f64>, lambda: &DVector<f64>) -> f64 {
        let hx = &self.h * x;
        let atl = self.rows.a.transpose() * lambda;
        let grad = &hx + &self.c - &atl;
        let scale = 1.0 + hx.amax().max(self.c.amax()).max(atl.amax());
        let mut worst = grad.amax() / scale;
        let s = self.rows.residuals(x);
        for i in 0..self.rows.len() {
            let norm = self.rows.a.row(i).norm().max(1.0);
            worst = worst.max((-s[i]).max(0.0) / norm);
            worst = worst.max((-lambda[i]).max(0.0));
            worst = worst.max(lambda[i].abs().min(s[i].abs() / norm));
        }
        worst
    }
}

struct DualResult {
    x: DVector<f64>,
    lambda: DVector<f64>,
    status: SolveStatus,
    iterations: usize,
}

/// Goldfarb-Idnani on a positive-definite Hessian given by its Cholesky factor.
fn dual_active_set(
    chol: &Cholesky<f64, Dyn>,
    c: &DVector<f64>,
    rows: &LinearConstraints,
    opts: &QpOptions,
) -> DualResult {
    let n = c.len();
    let m = rows.len();
    let l = chol.l();
    let lt = l.transpose();
    let mut x = chol.solve(&(-c));
    let mut active: Vec<usize> = Vec::new();
    let mut mult: Vec<f64> = Vec::new();
    let row_norm: Vec<f64> = (0..m).map(|i| rows.a.row(i).norm().max(1.0)).collect();
    let mut iterations = 0;

    let finish = |x: DVector<f64>, active: &[usize], mult: &[f64], status, iterations| {
        let mut lambda = DVector::zeros(m);
        for (k, &i) in active.iter().enumerate() {
            lambda[i] = mult[k];
        }
        DualResult { x, lambda, status, iterations }
    };

    loop {
        // Pick the most violated row, measured in scaled units.
        let s = rows.residuals(&x);
        let mut p = None;
        let mut worst = -opts.tol * 1e-2;
        for i in 0..m {
            if active.contains(&i) {
                continue;
            }
            let v = s[i] / row_norm[i];
            if v < worst {
                worst = v;
                p = Some(i);
            }
        }
        let Some(p) = p else {
            return finish(x, &active, &mult, SolveStatus::Optimal, iterations);
        };
        let np = rows.a.row(p).transpose();
        let mut lambda_p = 0.0;

        loop {
            iterations += 1;
            if iterations > opts.max_iter {
                return finish(x, &active, &mult, SolveStatus::MaxIter, iterations);
            }
            let nt_p = l.solve_lower_triangular(&np).expect("Cholesky factor is nonsingular");
            let (resid, r) = if active.is_empty() {
                (nt_p.clone(), DVector::zeros(0))
            } else {
                let na = DMatrix::from_fn(n, active.len(), |i, k| rows.a[(active[k], i)]);
                let nt_a = l.solve_lower_triangular(&na).expect("Cholesky factor is nonsingular");
                let qr = nt_a.qr();
                let q = qr.q();
                let rr = qr.r();
                let qtn = q.transpose() * &nt_p;
                let r = rr.solve_upper_triangular(&qtn).unwrap_or_else(|| DVector::zeros(active.len()));
                (&nt_p - &q * &qtn, r)
            };
            let zn = resid.norm_squared();
            let dependent = zn <= DEPENDENCY_TOL * nt_p.norm_squared().max(f64::MIN_POSITIVE);
            let z = lt.solve_upper_triangular(&resid).expect("Cholesky factor is nonsingular");

            // Dual ratio test: largest step keeping active multipliers nonnegative.
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for k in 0..active.len() {
                if r[k] > 0.0 {
                    let ratio = mult[k] / r[k];
                    if ratio < t1 {
                        t1 = ratio;
                        drop = Some(k);
                    }
                }
            }
            let sp = np.dot(&x) + rows.b[p];
            let t2 = if dependent { f64::INFINITY } else { -sp / zn };
            let t = t1.min(t2);
            if !t.is_finite() {
                return finish(x, &active, &mult, SolveStatus::Infeasible, iterations);
            }
            for k in 0..active.len() {
                mult[k] -= t * r[k];
            }
            lambda_p += t;
            if !dependent {
                x += &z * t;
            }
            if t2 <= t1 {
                active.push(p);
                mult.push(lambda_p);
                break;
            }
            let k = drop.expect("partial step always names a row");
            active.remove(k);
            mult.remove(k);
        }
    }
}

/// Solve `p` to tolerance `opts.tol`.
pub fn qp_solve(p: &QpProblem, opts: &QpOptions) -> SolveReport {
    let start = Instant::now();
    let n = p.dim();
    let scale = p.h.amax().max(1.0);
    let chol = Cholesky::new(p.h.clone()).filter(|ch| {
        let min_pivot = ch.l_dirty().diagonal().iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
        min_pivot * min_pivot > 1e-10 * scale
    });

    let (x, lambda, status, iterations) = match chol {
        Some(ch) => {
            let r = dual_active_set(&ch, &p.c, &p.rows, opts);
            let (x, lambda) = if r.status == SolveStatus::Optimal { polish(p, r.x, r.lambda) } else { (r.x, r.lambda) };
            (x, lambda, r.status, r.iterations)
        }
        None => proximal(p, opts),
    };

    let objective = p.objective(&x);
    let kkt = p.kkt_residual(&x, &lambda);
    let status = match status {
        SolveStatus::Optimal if kkt > opts.tol => {
            log::debug!("qp: terminated with kkt residual {kkt:e} above tolerance");
            SolveStatus::MaxIter
        }
        s => s,
    };
    debug_assert_eq!(x.len(), n);
    SolveReport {
        solution: x,
        multipliers: lambda,
        status,
        iterations,
        kkt_residual: kkt,
        objective,
        evaluations: 0,
        wall_time: start.elapsed(),
    }
}

/// One direct KKT solve on the final active set. Nearly parallel active rows
/// cost the incremental projections a few digits; this recovers them.
fn polish(p: &QpProblem, x: DVector<f64>, lambda: DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let active: Vec<usize> = (0..lambda.len()).filter(|&i| lambda[i] > 0.0).collect();
    if active.is_empty() {
        return (x, lambda);
    }
    let n = p.dim();
    let q = active.len();
    let mut k = DMatrix::zeros(n + q, n + q);
    let mut rhs = DVector::zeros(n + q);
    k.view_mut((0, 0), (n, n)).copy_from(&p.h);
    for (j, &i) in active.iter().enumerate() {
        for col in 0..n {
            let a = p.rows.a[(i, col)];
            k[(col, n + j)] = -a;
            k[(n + j, col)] = a;
        }
        rhs[n + j] = -p.rows.b[i];
    }
    for col in 0..n {
        rhs[col] = -p.c[col];
    }
    let Some(sol) = k.full_piv_lu().solve(&rhs) else {
        return (x, lambda);
    };
    let x2 = sol.rows(0, n).into_owned();
    let mut lambda2 = DVector::zeros(lambda.len());
    for (j, &i) in active.iter().enumerate() {
        lambda2[i] = sol[n + j];
    }
    if sol.iter().all(|v| v.is_finite()) && p.kkt_residual(&x2, &lambda2) < p.kkt_residual(&x, &lambda) {
        (x2, lambda2)
    } else {
        (x, lambda)
    }
}

/// Proximal-point rounds `min ½xᵀ(H+ρI)x + (c - ρx_k)ᵀx` for singular `H`.
/// The stationarity error of the original problem is `ρ‖x - x_k‖`, so the
/// rounds stop once the original KKT residual is within tolerance.
fn proximal(p: &QpProblem, opts: &QpOptions) -> (DVector<f64>, DVector<f64>, SolveStatus, usize) {
    let n = p.dim();
    let rho = 1e-3 * p.h.amax().max(1.0);
    let regularized = &p.h + DMatrix::identity(n, n) * rho;
    let chol = Cholesky::new(regularized).expect("H + ρI is positive definite for PSD H");
    let mut x = DVector::zeros(n);
    let mut lambda = DVector::zeros(p.rows.len());
    let mut iterations = 0;
    for _ in 0..MAX_PROXIMAL_ROUNDS {
        let c = &p.c - &x * rho;
        let r = dual_active_set(&chol, &c, &p.rows, opts);
        iterations += r.iterations;
        if r.status != SolveStatus::Optimal {
            return (r.x, r.lambda, r.status, iterations);
        }
        let moved = (&r.x - &x).amax();
        x = r.x;
        lambda = r.lambda;
        if p.kkt_residual(&x, &lambda) <= 0.1 * opts.tol || moved == 0.0 {
            return (x, lambda, SolveStatus::Optimal, iterations);
        }
    }
    (x, lambda, SolveStatus::MaxIter, iterations)
}

/// Result of the per-tick safety projection.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetyProjection {
    pub u: InputVector,
    pub report: SolveReport,
    /// Largest relaxation applied to the soft rows (0 unless `Relaxed`).
    pub slack: f64,
}

/// `min ‖u - target‖²` subject to `soft` and `hard` rows.
///
/// If that is infeasible, every soft row gets a shared slack `s >= 0`
/// penalized by `penalty · s²`, which minimizes the worst violation; the
/// report status is then `Relaxed`. Hard rows are never relaxed.
pub fn safety_projection(
    target: &InputVector,
    soft: &[ConstraintRow],
    hard: &[ConstraintRow],
    penalty: f64,
    opts: &QpOptions,
) -> SafetyProjection {
    let all: Vec<ConstraintRow> = soft.iter().chain(hard).copied().collect();
    if all.iter().all(|r| r.residual(target) >= 0.0) {
        // Already admissible: the projection is the target itself, bit for bit.
        let report = SolveReport {
            solution: DVector::from_iterator(INPUT_DIM, target.iter().copied()),
            multipliers: DVector::zeros(all.len()),
            status: SolveStatus::Optimal,
            iterations: 0,
            kkt_residual: 0.0,
            objective: -target.norm_squared(),
            evaluations: 0,
            wall_time: std::time::Duration::ZERO,
        };
        return SafetyProjection { u: *target, report, slack: 0.0 };
    }
    let report = qp_solve(&QpProblem::projection(target, &all), opts);
    if report.status != SolveStatus::Infeasible || soft.is_empty() {
        let u = InputVector::from_iterator(report.solution.iter().copied());
        return SafetyProjection { u, report, slack: 0.0 };
    }

    // The slack is carried as `w = √penalty · s` so the Hessian stays 2I.
    let n = INPUT_DIM + 1;
    let weight = penalty.sqrt();
    let h = DMatrix::identity(n, n) * 2.0;
    let mut c = DVector::zeros(n);
    for i in 0..INPUT_DIM {
        c[i] = -2.0 * target[i];
    }
    let m = all.len() + 1;
    let mut a = DMatrix::zeros(m, n);
    let mut b = DVector::zeros(m);
    for (r, row) in all.iter().enumerate() {
        for j in 0..INPUT_DIM {
            a[(r, j)] = row.a[j];
        }
        if r < soft.len() {
            a[(r, INPUT_DIM)] = 1.0 / weight;
        }
        b[r] = row.b;
    }
    a[(m - 1, INPUT_DIM)] = 1.0;
    let relaxed = QpProblem { h, c, rows: LinearConstraints { a, b } };
    let mut report = qp_solve(&relaxed, opts);
    let slack = report.solution[INPUT_DIM].max(0.0) / weight;
    let u = InputVector::from_iterator(report.solution.iter().take(INPUT_DIM).copied());
    if report.status == SolveStatus::Optimal {
        report.status = SolveStatus::Relaxed;
    }
    report.solution = DVector::from_iterator(INPUT_DIM, u.iter().copied());
    SafetyProjection { u, report, slack }
}
