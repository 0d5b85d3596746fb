//! Independent checks of the QP solver: KKT conditions on random problems and
//! brute-force grid minimization in two dimensions.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vicopt_core::dynamics::{InputVector, INPUT_DIM};
use vicopt_core::optimizer::{qp_solve, LinearConstraints, QpOptions, QpProblem, SolveStatus};
use vicopt_core::safety::ConstraintRow;

fn random_psd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let rank = if rng.random_bool(0.3) { rng.random_range(1..=n) } else { n };
    let b = DMatrix::from_fn(rank, n, |_, _| rng.random_range(-1.0..1.0));
    let mut h = b.transpose() * b;
    if rank == n {
        h += DMatrix::identity(n, n) * 0.05;
    }
    (&h + h.transpose()) * 0.5
}

/// Box |x_i| <= 5 plus random rows that all hold at a random interior point.
fn random_rows(rng: &mut ChaCha8Rng, n: usize, extra: usize) -> LinearConstraints {
    let x0 = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
    let m = 2 * n + extra;
    let mut a = DMatrix::zeros(m, n);
    let mut b = DVector::zeros(m);
    for i in 0..n {
        a[(2 * i, i)] = 1.0;
        b[2 * i] = 5.0;
        a[(2 * i + 1, i)] = -1.0;
        b[2 * i + 1] = 5.0;
    }
    for r in 2 * n..m {
        for j in 0..n {
            a[(r, j)] = rng.random_range(-1.0..1.0);
        }
        b[r] = -a.row(r).transpose().dot(&x0) + rng.random_range(0.0..0.5);
    }
    LinearConstraints::new(a, b).unwrap()
}

/// KKT residuals computed from scratch, independent of the solver's own report.
fn kkt_violation(
    h: &DMatrix<f64>,
    c: &DVector<f64>,
    rows: &LinearConstraints,
    x: &DVector<f64>,
    lambda: &DVector<f64>,
) -> f64 {
    let grad = h * x + c - rows.a.transpose() * lambda;
    let scale = 1.0 + c.amax() + (h * x).amax() + (rows.a.transpose() * lambda).amax();
    let mut worst = grad.amax() / scale;
    for i in 0..rows.len() {
        let s = rows.a.row(i).transpose().dot(x) + rows.b[i];
        worst = worst.max(-s).max(-lambda[i]);
        worst = worst.max((lambda[i] * s).abs() / (1.0 + lambda[i].abs()));
    }
    worst
}

#[test]
fn random_psd_problems_satisfy_kkt() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let opts = QpOptions { tol: 1e-9, max_iter: 500 };
    for case in 0..200 {
        let n = rng.random_range(2..=INPUT_DIM);
        let h = random_psd(&mut rng, n);
        let c = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
        let extra = rng.random_range(0..=2 * n);
        let rows = random_rows(&mut rng, n, extra);
        let p = QpProblem::new(h.clone(), c.clone(), rows.clone()).unwrap();
        let r = qp_solve(&p, &opts);
        assert_eq!(r.status, SolveStatus::Optimal, "case {case}: {:?}", r.status);
        let v = kkt_violation(&h, &c, &rows, &r.solution, &r.multipliers);
        assert!(v <= 1e-8, "case {case} (n = {n}): KKT violation {v:e}");
    }
}

fn grid_minimum(
    h: &DMatrix<f64>,
    c: &DVector<f64>,
    rows: &LinearConstraints,
    lo: f64,
    hi: f64,
    step: f64,
) -> (f64, f64, f64) {
    let n = ((hi - lo) / step).round() as usize;
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 0..=n {
        let x = lo + i as f64 * step;
        for j in 0..=n {
            let y = lo + j as f64 * step;
            let feasible = (0..rows.len()).all(|r| rows.a[(r, 0)] * x + rows.a[(r, 1)] * y + rows.b[r] >= -1e-12);
            if !feasible {
                continue;
            }
            let f = 0.5 * (h[(0, 0)] * x * x + 2.0 * h[(0, 1)] * x * y + h[(1, 1)] * y * y) + c[0] * x + c[1] * y;
            if f < best.0 {
                best = (f, x, y);
            }
        }
    }
    best
}

#[test]
fn two_variable_problems_match_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..9 {
        // Every third problem has a rank-one Hessian; the others are well conditioned.
        let h = if case % 3 == 0 {
            let v = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            &v * v.transpose()
        } else {
            random_psd(&mut rng, 2) + DMatrix::identity(2, 2)
        };
        let c = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
        // Box [-1, 1]^2 plus two diagonal cuts. Offsets on a 2e-3 lattice put
        // every vertex of the feasible polygon on the grid, so the grid
        // minimum is exact up to the local curvature.
        let mut a = DMatrix::zeros(6, 2);
        let mut b = DVector::zeros(6);
        for i in 0..2 {
            a[(2 * i, i)] = 1.0;
            b[2 * i] = 1.0;
            a[(2 * i + 1, i)] = -1.0;
            b[2 * i + 1] = 1.0;
        }
        for r in 4..6 {
            a[(r, 0)] = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            a[(r, 1)] = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            b[r] = 2e-3 * rng.random_range(25..300) as f64;
        }
        let rows = LinearConstraints::new(a, b).unwrap();
        let p = QpProblem::new(h.clone(), c.clone(), rows.clone()).unwrap();
        let r = qp_solve(&p, &QpOptions::default());
        assert_eq!(r.status, SolveStatus::Optimal);
        let (f_grid, xg, yg) = grid_minimum(&h, &c, &rows, -1.0, 1.0, 1e-3);
        let f_qp = p.objective(&r.solution);
        assert!(f_qp <= f_grid + 1e-5, "case {case}: qp {f_qp} grid {f_grid}");
        assert!((f_qp - f_grid).abs() <= 1e-5, "case {case}: qp {f_qp} grid {f_grid}");
        // Unique minimizers only: a singular H may have a flat valley of optima.
        if case % 3 != 0 {
            let dx = (r.solution[0] - xg).abs().max((r.solution[1] - yg).abs());
            assert!(dx <= 2e-3, "case {case}: ({}, {}) vs ({xg}, {yg})", r.solution[0], r.solution[1]);
        }
    }
}

#[test]
fn safety_projection_keeps_safe_gains() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let target = InputVector::from_fn(|_, _| rng.random_range(0.5..50.0));
        // Rows with slack at the target are inactive.
        let rows: Vec<ConstraintRow> = (0..12)
            .map(|_| {
                let a = InputVector::from_fn(|_, _| rng.random_range(-1.0..1.0));
                ConstraintRow::new(a, -a.dot(&target) + rng.random_range(0.1..2.0))
            })
            .collect();
        let r = qp_solve(&QpProblem::projection(&target, &rows), &QpOptions::default());
        assert_eq!(r.status, SolveStatus::Optimal);
        let diff = (0..INPUT_DIM).map(|i| (r.solution[i] - target[i]).abs()).fold(0.0, f64::max);
        assert!(diff <= 1e-9, "moved by {diff}");
    }
}
