//! Primal active-set solver for `min x'Hx` under linear equalities and,
//! optionally, `x >= 0`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverOptions {
    /// Iteration cap is `max_iter_factor * n`.
    pub max_iter_factor: usize,
    /// Tolerance on multiplier signs and constraint residuals.
    pub kkt_tolerance: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iter_factor: 100,
            kkt_tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QpProblem<'a> {
    pub h: &'a DMatrix<f64>,
    /// Equality rows `a_k' x = b_k`.
    pub eq_rows: Vec<DVector<f64>>,
    pub eq_rhs: Vec<f64>,
    pub nonneg: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct KktDiagnostics {
    /// `max |A x - b|`.
    pub primal_residual: f64,
    /// `max(0, -min x)` when bounds apply.
    pub bound_violation: f64,
    /// `max |2Hx - A'nu - lambda|`.
    pub stationarity: f64,
    /// `max(0, -min lambda)`.
    pub dual_violation: f64,
    /// `max |lambda_i x_i|`.
    pub complementarity: f64,
    pub iterations: usize,
    pub active_bounds: usize,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub eq_multipliers: DVector<f64>,
    pub bound_multipliers: DVector<f64>,
    pub diagnostics: KktDiagnostics,
}

/// Solves the equality-constrained problem restricted to `free` variables,
/// all others pinned at zero. Returns the point and equality multipliers.
fn solve_on_free_set(p: &QpProblem, free: &[usize]) -> (DVector<f64>, DVector<f64>) {
    let n = p.h.nrows();
    let m = p.eq_rows.len();
    let f = free.len();
    let mut kkt = DMatrix::zeros(f + m, f + m);
    let mut rhs = DVector::zeros(f + m);
    for (a, &i) in free.iter().enumerate() {
        for (b, &j) in free.iter().enumerate() {
            kkt[(a, b)] = 2.0 * p.h[(i, j)];
        }
        for k in 0..m {
            kkt[(a, f + k)] = -p.eq_rows[k][i];
            kkt[(f + k, a)] = p.eq_rows[k][i];
        }
    }
    for k in 0..m {
        rhs[f + k] = p.eq_rhs[k];
    }
    let sol = kkt
        .clone()
        .lu()
        .solve(&rhs)
        .filter(|s| {
            s.iter().all(|v| v.is_finite()) && (&kkt * s - &rhs).amax() <= 1e-9 * (1.0 + rhs.amax())
        })
        .unwrap_or_else(|| {
            let svd = kkt.clone().svd(true, true);
            let eps = 1e-12 * svd.singular_values.max();
            svd.solve(&rhs, eps)
                .unwrap_or_else(|_| DVector::zeros(f + m))
        });
    let mut x = DVector::zeros(n);
    for (a, &i) in free.iter().enumerate() {
        x[i] = sol[a];
    }
    (x, sol.rows(f, m).into_owned())
}

fn diagnostics(
    p: &QpProblem,
    x: &DVector<f64>,
    nu: &DVector<f64>,
    lambda: &DVector<f64>,
) -> KktDiagnostics {
    let grad = 2.0 * p.h * x;
    let mut station = grad.clone();
    for (k, row) in p.eq_rows.iter().enumerate() {
        station -= row * nu[k];
    }
    station -= lambda;
    let primal = p
        .eq_rows
        .iter()
        .zip(&p.eq_rhs)
        .map(|(row, b)| (row.dot(x) - b).abs())
        .fold(0.0, f64::max);
    let bound_violation = if p.nonneg { (-x.min()).max(0.0) } else { 0.0 };
    let dual_violation = if lambda.is_empty() {
        0.0
    } else {
        (-lambda.min()).max(0.0)
    };
    let complementarity = x
        .iter()
        .zip(lambda.iter())
        .map(|(a, b)| (a * b).abs())
        .fold(0.0, f64::max);
    KktDiagnostics {
        primal_residual: primal,
        bound_violation,
        stationarity: station.amax(),
        dual_violation,
        complementarity,
        iterations: 0,
        active_bounds: lambda.iter().filter(|l| **l != 0.0).count(),
    }
}

fn objective(h: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(h * x))
}

fn has_full_row_rank(p: &QpProblem, free: &[usize]) -> bool {
    let m = p.eq_rows.len();
    if free.len() < m {
        return false;
    }
    let a = DMatrix::from_fn(m, free.len(), |k, j| p.eq_rows[k][free[j]]);
    let sv = a.singular_values();
    let max = sv.max();
    max > 0.0 && sv.min() > 1e-10 * max
}

/// Minimizes `x'Hx` from a feasible `start`. Without bounds `start` is ignored.
pub fn solve_qp(
    p: &QpProblem,
    start: Option<DVector<f64>>,
    options: &SolverOptions,
) -> Result<QpSolution> {
    let n = p.h.nrows();
    if p.eq_rows.iter().any(|r| r.len() != n) || p.eq_rows.len() != p.eq_rhs.len() {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: p.eq_rows.first().map_or(0, |r| r.len()),
        });
    }
    if !p.nonneg {
        let all: Vec<usize> = (0..n).collect();
        let (x, nu) = solve_on_free_set(p, &all);
        let lambda = DVector::zeros(n);
        let diagnostics = diagnostics(p, &x, &nu, &lambda);
        return Ok(QpSolution {
            x,
            eq_multipliers: nu,
            bound_multipliers: lambda,
            diagnostics,
        });
    }

    let tol = options.kkt_tolerance;
    let mut x = start.ok_or_else(|| {
        Error::InvalidArgument("bound-constrained solve needs a feasible start".into())
    })?;
    x.iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v = 0.0
        }
    });
    let mut active: Vec<bool> = x.iter().map(|v| *v <= 0.0).collect();
    let cap = options.max_iter_factor * n.max(1);
    let scale = p.h.amax().max(f64::MIN_POSITIVE);
    for iteration in 1..=cap {
        let free: Vec<usize> = (0..n).filter(|&i| !active[i]).collect();
        let (target, nu) = solve_on_free_set(p, &free);
        let step = &target - &x;
        let mut alpha = 1.0;
        let mut blocking = None;
        for &i in &free {
            if target[i] < 0.0 && step[i] < 0.0 {
                let a = x[i] / -step[i];
                if a < alpha {
                    alpha = a;
                    blocking = Some(i);
                }
            }
        }
        if let Some(i) = blocking {
            x += alpha * step;
            x[i] = 0.0;
            active[i] = true;
            continue;
        }
        x = target;
        // stationary on the working set: inspect bound multipliers
        let grad = 2.0 * p.h * &x;
        let mut lambda = DVector::zeros(n);
        for i in (0..n).filter(|&i| active[i]) {
            let mut l = grad[i];
            for (k, row) in p.eq_rows.iter().enumerate() {
                l -= row[i] * nu[k];
            }
            lambda[i] = l;
        }
        let worst = (0..n)
            .filter(|&i| active[i])
            .min_by(|&a, &b| lambda[a].total_cmp(&lambda[b]).then(a.cmp(&b)));
        let release = if has_full_row_rank(p, &free) {
            worst.filter(|&i| lambda[i] < -tol * scale)
        } else {
            // multipliers are not unique here, so probe each bound directly
            let current = objective(p.h, &x);
            (0..n).filter(|&i| active[i]).find(|&i| {
                let mut trial = free.clone();
                trial.push(i);
                trial.sort_unstable();
                let (t, _) = solve_on_free_set(p, &trial);
                t[i] > tol && objective(p.h, &t) < current - tol * scale * 1e-6
            })
        };
        match release {
            Some(i) => active[i] = false,
            None => {
                let mut diagnostics = diagnostics(p, &x, &nu, &lambda);
                diagnostics.iterations = iteration;
                diagnostics.active_bounds = active.iter().filter(|a| **a).count();
                return Ok(QpSolution {
                    x,
                    eq_multipliers: nu,
                    bound_multipliers: lambda,
                    diagnostics,
                });
            }
        }
    }
    Err(Error::NotConverged { iterations: cap })
}
