//! Exact minimizers for the four blocks of the penalty objective.
//!
//! For penalty weight `rho > 0` the decomposed objective is
//!
//! ```text
//! q_rho(x, y, z, w, gamma) = lambda1 x'Ax - lambda2 Psi'x
//!                          + lambda2 delta ||z - phi||_1
//!                          + lambda3 (gamma + c_h sum_j (-d_j'w - gamma)^+)
//!                          + rho (||x-y||^2 + ||x-z||^2 + ||x-w||^2)
//! ```
//!
//! with `c_h = 1/(m(1-beta))` and `d_j` the j-th excess scenario row.
//! Block minimizers:
//! - x over {e'x = 1}: one linear solve against the cached Cholesky
//!   factor of `B = lambda1 A + 3 rho I` ([`XBlockSolver`]),
//! - y over {sign classes, ||y||_0 <= k}: the sparsifying operator
//!   ([`solve_y`]),
//! - z over the box: thresholded clipping ([`solve_z`]),
//! - (w, gamma) over {e'w = 1, box} x R: an epigraph QP ([`solve_w_gamma`]).

use nalgebra::{Cholesky, DVector, Dyn};
use thiserror::Error;

use crate::model::{cvar_optimal, ProblemInstance};
use crate::qp::{solve_qp, QpProblem, QpStatus, UNBOUNDED};

/// One iterate of the decomposed problem.
#[derive(Debug, Clone)]
pub struct PenaltyState {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub z: DVector<f64>,
    pub w: DVector<f64>,
    pub gamma: f64,
}

impl PenaltyState {
    /// All blocks at `x0`, gamma at `gamma0`.
    pub fn splat(x0: &DVector<f64>, gamma0: f64) -> Self {
        PenaltyState {
            x: x0.clone(),
            y: x0.clone(),
            z: x0.clone(),
            w: x0.clone(),
            gamma: gamma0,
        }
    }
}

#[derive(Debug, Error)]
pub enum SubproblemError {
    #[error("(w,gamma) subproblem QP did not converge within {iterations} iterations")]
    WGammaNoConvergence { iterations: usize },
    #[error("(w,gamma) subproblem is infeasible: the budget and box constraints admit no w")]
    WSetInfeasible,
}

/// Penalty objective at a full state.
pub fn q_rho(instance: &ProblemInstance, state: &PenaltyState, rho: f64) -> f64 {
    let x = &state.x;
    let quad = instance.lambda1 * (x.transpose() * &instance.covariance * x)[(0, 0)];
    let lin = -instance.lambda2 * instance.psi.dot(x);
    let l1 = instance.lambda2
        * instance.delta
        * (&state.z - &instance.phi).iter().map(|v| v.abs()).sum::<f64>();
    let losses = instance.losses(&state.w);
    let cvar = instance.lambda3 * instance.cvar_expression(&losses, state.gamma);
    let penalty = rho
        * ((x - &state.y).norm_squared()
            + (x - &state.z).norm_squared()
            + (x - &state.w).norm_squared());
    quad + lin + l1 + cvar + penalty
}

/// x-block context: holds the Cholesky factor of `B = lambda1 A + 3 rho I`
/// and `v = B^{-1} e`, both fixed while rho is fixed, so repeated sweeps
/// cost two triangular solves each.
pub struct XBlockSolver {
    chol: Cholesky<f64, Dyn>,
    /// `B^{-1} e`.
    v: DVector<f64>,
    /// `e' B^{-1} e` (> 0 since B is PD).
    etv: f64,
    lin: DVector<f64>,
    rho: f64,
}

impl XBlockSolver {
    pub fn new(instance: &ProblemInstance, rho: f64) -> Self {
        let n = instance.n;
        let mut b = &instance.covariance * instance.lambda1;
        for i in 0..n {
            b[(i, i)] += 3.0 * rho;
        }
        let chol = b
            .cholesky()
            .expect("B = lambda1 A + 3 rho I is positive definite for rho > 0");
        let e = DVector::from_element(n, 1.0);
        let v = chol.solve(&e);
        let etv = v.sum();
        XBlockSolver {
            chol,
            v,
            etv,
            lin: &instance.psi * instance.lambda2,
            rho,
        }
    }

    /// Minimizer of q_rho over x on {e'x = 1} holding the other blocks:
    /// solves `2Bx + t e = theta, e'x = 1` with
    /// `theta = 2 rho (y + z + w) + lambda2 Psi`.
    pub fn solve(&self, y: &DVector<f64>, z: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let theta = (y + z + w) * (2.0 * self.rho) + &self.lin;
        let g = self.chol.solve(&theta);
        let scale = (1.0 - 0.5 * g.sum()) / (0.5 * self.etv);
        (g + &self.v * scale) * 0.5
    }
}

/// One-shot convenience around [`XBlockSolver`].
pub fn solve_x(
    instance: &ProblemInstance,
    rho: f64,
    y: &DVector<f64>,
    z: &DVector<f64>,
    w: &DVector<f64>,
) -> DVector<f64> {
    XBlockSolver::new(instance, rho).solve(y, z, w)
}

/// Sparsifying operator: forms `v` = x projected coordinatewise onto its
/// sign class (x+ where eta > 0, -x- where eta < 0, x where eta = 0),
/// keeps the k entries largest in |v| (ties to the lowest index), zeroes
/// the rest.
pub fn solve_y(x: &DVector<f64>, eta: &DVector<f64>, k: usize) -> DVector<f64> {
    let n = x.len();
    assert!(k >= 1 && k <= n, "k must satisfy 1 <= k <= n, got k={k}, n={n}");
    let v = DVector::from_fn(n, |i, _| {
        if eta[i] > 0.0 {
            x[i].max(0.0)
        } else if eta[i] < 0.0 {
            x[i].min(0.0)
        } else {
            x[i]
        }
    });
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        v[b].abs()
            .partial_cmp(&v[a].abs())
            .expect("sparsifier input is finite")
            .then(a.cmp(&b))
    });
    let mut y = DVector::zeros(n);
    for &i in order.iter().take(k) {
        y[i] = v[i];
    }
    y
}

/// z-block minimizer, coordinatewise over the box.
pub fn solve_z(
    x: &DVector<f64>,
    kappa: f64,
    phi: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| {
        solve_z_scalar(x[i], kappa, phi[i], lower[i], upper[i])
    })
}

/// Scalar thresholded clip: minimizes `(z - x)^2 + 2 kappa |z - phi|` over
/// `[l, u]`. The minimizer is one of {x-kappa, x+kappa, phi, l, u} clipped
/// to the box; candidates are scored in that order and ties keep the
/// earlier candidate, which resolves the boundary overlaps of the
/// piecewise closed form deterministically.
pub fn solve_z_scalar(x: f64, kappa: f64, phi: f64, l: f64, u: f64) -> f64 {
    debug_assert!(l < u && kappa >= 0.0);
    if kappa == 0.0 {
        return x.clamp(l, u);
    }
    let objective = |z: f64| (z - x) * (z - x) + 2.0 * kappa * (z - phi).abs();
    let mut best = f64::NAN;
    let mut best_val = f64::INFINITY;
    for cand in [x - kappa, x + kappa, phi, l, u] {
        let c = cand.clamp(l, u);
        let val = objective(c);
        if val < best_val {
            best_val = val;
            best = c;
        }
    }
    best
}

/// Value of the (w, gamma) subproblem objective at a candidate pair.
pub(crate) fn w_block_objective(
    instance: &ProblemInstance,
    rho: f64,
    x: &DVector<f64>,
    w: &DVector<f64>,
    gamma: f64,
) -> f64 {
    let losses = instance.losses(w);
    instance.lambda3 * instance.cvar_expression(&losses, gamma) + rho * (x - w).norm_squared()
}

/// (w, gamma)-block minimizer via the epigraph QP
///
/// ```text
/// min  lambda3 (gamma + c_h sum_j t_j) + rho ||x - w||^2
/// s.t. e'w = 1, L <= w <= U, t_j >= 0, t_j >= -d_j'w - gamma
/// ```
///
/// scaled by `1/max(1, rho)` before the engine (the argmin is invariant;
/// the scaling keeps the Newton systems well conditioned at large rho).
/// w is unique; the returned gamma is the exact minimizer of the CVaR
/// expression at that w, which always lands on 0 or a loss breakpoint
/// `-d_j'w`.
pub fn solve_w_gamma(
    instance: &ProblemInstance,
    rho: f64,
    x: &DVector<f64>,
) -> Result<(DVector<f64>, f64), SubproblemError> {
    let n = instance.n;
    let m = instance.m;
    let scale = 1.0 / rho.max(1.0);
    let c_h = instance.cvar_weight();

    // Variables: [w_0..w_{n-1}, gamma, t_0..t_{m-1}].
    let mut qp = QpProblem::new(n + 1 + m);
    for i in 0..n {
        qp.q[(i, i)] = 2.0 * rho * scale;
        qp.c[i] = -2.0 * rho * scale * x[i];
        qp.set_bounds(i, instance.lower[i], instance.upper[i]);
    }
    qp.c[n] = instance.lambda3 * scale;
    for j in 0..m {
        qp.c[n + 1 + j] = instance.lambda3 * c_h * scale;
        qp.set_bounds(n + 1 + j, 0.0, UNBOUNDED);
    }
    let budget: Vec<(usize, f64)> = (0..n).map(|i| (i, 1.0)).collect();
    qp.add_eq_row(&budget, 1.0);
    for j in 0..m {
        let mut row: Vec<(usize, f64)> = (0..n).map(|i| (i, -instance.excess[(j, i)])).collect();
        row.push((n, -1.0));
        row.push((n + 1 + j, -1.0));
        qp.add_ineq_row(&row, 0.0);
    }

    let sol = solve_qp(&qp, 1e-8, 20_000);
    match sol.status {
        QpStatus::Optimal => {}
        QpStatus::Infeasible => return Err(SubproblemError::WSetInfeasible),
        QpStatus::MaxIter => {
            return Err(SubproblemError::WGammaNoConvergence {
                iterations: sol.iterations,
            })
        }
    }
    let w = DVector::from_fn(n, |i, _| sol.u[i]);
    let gamma_qp = sol.u[n];

    // The engine's gamma can drift inside a flat region when rho dwarfs
    // the CVaR weights; re-minimizing over gamma alone at the returned w
    // never increases the objective and pins gamma to a breakpoint.
    let (gamma_cv, _) = cvar_optimal(instance, &w);
    let losses = instance.losses(&w);
    let gamma = if instance.cvar_expression(&losses, gamma_cv)
        <= instance.cvar_expression(&losses, gamma_qp)
    {
        gamma_cv
    } else {
        gamma_qp
    };
    Ok((w, gamma))
}

#[cfg(test)]
#[path = "../tests/common/wg_oracle.rs"]
mod wg_oracle;
