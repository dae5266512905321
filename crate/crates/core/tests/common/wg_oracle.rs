//! Independent reference solver for the (w, gamma) block problem
//!
//! ```text
//! min  lambda3 (gamma + c_h sum_j (-d_j'w - gamma)^+) + rho ||x - w||^2
//! s.t. e'w = 1,  L <= w <= U
//! ```
//!
//! used to verify `solve_w_gamma` without touching the production QP
//! engine. Two phases: a projected subgradient descent on w (gamma
//! eliminated exactly by a breakpoint scan) localizes the solution, then
//! an active-piece polish solves the equality KKT system of the guessed
//! piece directly and certifies it by multiplier signs. A certified point
//! is a global optimum of this convex problem.
//!
//! Deliberately self-contained: only nalgebra, no crate types, so the
//! file can be included from unit tests and integration tests alike.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

pub struct Reference {
    pub w: DVector<f64>,
    pub gamma: f64,
    pub objective: f64,
    /// True when the polish certified a KKT point; the result is then the
    /// global optimum up to linear-solve roundoff.
    pub certified: bool,
}

/// Exact minimizer over gamma of `gamma + c_h sum (loss_j - gamma)^+`.
/// Returns (gamma, value); the minimum sits at a loss breakpoint.
fn best_gamma(losses: &DVector<f64>, c_h: f64) -> (f64, f64) {
    let mut candidates: Vec<f64> = losses.iter().cloned().collect();
    candidates.push(0.0);
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut best = (f64::INFINITY, f64::INFINITY);
    for &g in &candidates {
        let value = g + c_h * losses.iter().map(|&l| (l - g).max(0.0)).sum::<f64>();
        if value < best.1 {
            best = (g, value);
        }
    }
    best
}

/// Projection onto {e'w = 1, L <= w <= U} by bisection on the shift.
pub fn project_capped_simplex(
    v: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
) -> DVector<f64> {
    let n = v.len();
    let sum_at = |tau: f64| -> f64 {
        (0..n)
            .map(|i| (v[i] - tau).clamp(lower[i], upper[i]))
            .sum::<f64>()
    };
    let mut lo = v.min() - upper.max() - 1.0;
    let mut hi = v.max() - lower.min() + 1.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if sum_at(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let tau = 0.5 * (lo + hi);
    DVector::from_fn(n, |i, _| (v[i] - tau).clamp(lower[i], upper[i]))
}

fn objective_at(
    excess: &DMatrix<f64>,
    lambda3: f64,
    c_h: f64,
    rho: f64,
    x: &DVector<f64>,
    w: &DVector<f64>,
    gamma: f64,
) -> f64 {
    let losses = -(excess * w);
    let cvar = gamma + c_h * losses.iter().map(|&l| (l - gamma).max(0.0)).sum::<f64>();
    lambda3 * cvar + rho * (x - w).norm_squared()
}

/// Solves the reference problem; see the module docs.
pub fn solve_reference(
    excess: &DMatrix<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    lambda3: f64,
    beta: f64,
    rho: f64,
    x: &DVector<f64>,
) -> Reference {
    let m = excess.nrows();
    let c_h = 1.0 / (m as f64 * (1.0 - beta));

    // Phase 1: projected subgradient with gamma eliminated per iterate.
    let mut w = project_capped_simplex(x, lower, upper);
    let mut best_w = w.clone();
    let mut best_val = {
        let losses = -(excess * &w);
        let (_, cv) = best_gamma(&losses, c_h);
        lambda3 * cv + rho * (x - &w).norm_squared()
    };
    let range = (upper - lower).amax().max(1e-3);
    let step0 = 0.25 * range;
    for l in 0..20_000usize {
        let losses = -(excess * &w);
        let (gamma, _) = best_gamma(&losses, c_h);
        let mut grad = (&w - x) * (2.0 * rho);
        for j in 0..m {
            if losses[j] > gamma {
                for i in 0..w.len() {
                    grad[i] -= lambda3 * c_h * excess[(j, i)];
                }
            }
        }
        let gnorm = grad.norm().max(1e-12);
        let step = step0 / ((l + 1) as f64).sqrt();
        w = project_capped_simplex(&(&w - grad * (step / gnorm)), lower, upper);
        let losses_new = -(excess * &w);
        let (_, cv_new) = best_gamma(&losses_new, c_h);
        let val = lambda3 * cv_new + rho * (x - &w).norm_squared();
        if val < best_val {
            best_val = val;
            best_w = w.clone();
        }
    }

    // Phase 2: classify the active piece around the incumbent and solve
    // its equality KKT system; widen the classification tolerance until a
    // candidate certifies.
    let losses = -(excess * &best_w);
    let (gamma0, _) = best_gamma(&losses, c_h);
    for &tol in &[3e-3, 1e-3, 3e-4, 1e-4, 3e-5, 1e-5, 3e-6, 1e-6] {
        if let Some((w_p, g_p)) = polish(
            excess, lower, upper, lambda3, c_h, rho, x, &best_w, gamma0, tol,
        ) {
            let obj = objective_at(excess, lambda3, c_h, rho, x, &w_p, g_p);
            return Reference {
                w: w_p,
                gamma: g_p,
                objective: obj,
                certified: true,
            };
        }
    }
    let obj = objective_at(excess, lambda3, c_h, rho, x, &best_w, gamma0);
    Reference {
        w: best_w,
        gamma: gamma0,
        objective: obj,
        certified: false,
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Scen {
    Above,
    Below,
    Kink,
}

#[derive(Clone, Copy, PartialEq)]
enum Var {
    Free,
    AtLower,
    AtUpper,
}

/// Solves the equality KKT system for one guessed active piece and checks
/// every inequality-multiplier sign and primal condition. Returns the
/// certified (w, gamma) or None.
#[allow(clippy::too_many_arguments)]
fn polish(
    excess: &DMatrix<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    lambda3: f64,
    c_h: f64,
    rho: f64,
    x: &DVector<f64>,
    w0: &DVector<f64>,
    gamma0: f64,
    tol: f64,
) -> Option<(DVector<f64>, f64)> {
    let n = w0.len();
    let m = excess.nrows();
    let losses = -(excess * w0);

    let scen: Vec<Scen> = (0..m)
        .map(|j| {
            let margin = losses[j] - gamma0;
            if margin > tol {
                Scen::Above
            } else if margin < -tol {
                Scen::Below
            } else {
                Scen::Kink
            }
        })
        .collect();
    let vars: Vec<Var> = (0..n)
        .map(|i| {
            if w0[i] - lower[i] <= tol {
                Var::AtLower
            } else if upper[i] - w0[i] <= tol {
                Var::AtUpper
            } else {
                Var::Free
            }
        })
        .collect();

    let free: Vec<usize> = (0..n).filter(|&i| vars[i] == Var::Free).collect();
    let kinks: Vec<usize> = (0..m).filter(|&j| scen[j] == Scen::Kink).collect();
    let above: Vec<usize> = (0..m).filter(|&j| scen[j] == Scen::Above).collect();

    // Unknowns: w_free, gamma, theta (simplex multiplier), pi_kink.
    let nf = free.len();
    let nk = kinks.len();
    let dim = nf + 2 + nk;
    let mut a = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    let col_gamma = nf;
    let col_theta = nf + 1;
    let col_pi = nf + 2;

    // Fixed part of w.
    let mut w_fix = DVector::zeros(n);
    for i in 0..n {
        w_fix[i] = match vars[i] {
            Var::AtLower => lower[i],
            Var::AtUpper => upper[i],
            Var::Free => 0.0,
        };
    }

    // Stationarity rows for free coordinates:
    // 2 rho (w_i - x_i) - lambda3 c_h sum_above d_ji - sum_kink pi_j d_ji + theta = 0.
    for (r, &i) in free.iter().enumerate() {
        a[(r, r)] = 2.0 * rho;
        a[(r, col_theta)] = 1.0;
        for (kc, &j) in kinks.iter().enumerate() {
            a[(r, col_pi + kc)] = -excess[(j, i)];
        }
        rhs[r] = 2.0 * rho * x[i]
            + lambda3 * c_h * above.iter().map(|&j| excess[(j, i)]).sum::<f64>();
    }
    // Gamma row: lambda3 - lambda3 c_h |above| - sum pi = 0.
    for (kc, _) in kinks.iter().enumerate() {
        a[(nf, col_pi + kc)] = 1.0;
    }
    rhs[nf] = lambda3 * (1.0 - c_h * above.len() as f64);
    // Simplex row: sum_free w_i = 1 - sum_fixed.
    for (r, _) in free.iter().enumerate() {
        a[(col_theta, r)] = 1.0;
    }
    rhs[col_theta] = 1.0 - w_fix.sum();
    // Kink rows: -d_j'w = gamma  =>  -sum_free d_ji w_i - gamma = sum_fixed d_ji w_i.
    for (kc, &j) in kinks.iter().enumerate() {
        for (r, &i) in free.iter().enumerate() {
            a[(col_pi + kc, r)] = -excess[(j, i)];
        }
        a[(col_pi + kc, col_gamma)] = -1.0;
        rhs[col_pi + kc] = (0..n)
            .filter(|i| vars[*i] != Var::Free)
            .map(|i| excess[(j, i)] * w_fix[i])
            .sum::<f64>();
    }

    let sol = a.lu().solve(&rhs)?;
    let mut w = w_fix;
    for (r, &i) in free.iter().enumerate() {
        w[i] = sol[r];
    }
    let gamma = sol[col_gamma];
    let theta = sol[col_theta];
    let pi: Vec<f64> = (0..nk).map(|kc| sol[col_pi + kc]).collect();

    // Certification. Multiplier boxes first.
    let cert_tol = 1e-9 * (1.0 + lambda3 * c_h);
    for &p in &pi {
        if !(-cert_tol..=lambda3 * c_h + cert_tol).contains(&p) {
            return None;
        }
    }
    // Bound multipliers from the stationarity rows of pinned coordinates.
    for i in 0..n {
        if vars[i] == Var::Free {
            continue;
        }
        let mut g = 2.0 * rho * (w[i] - x[i]) + theta;
        for &j in &above {
            g -= lambda3 * c_h * excess[(j, i)];
        }
        for (kc, &j) in kinks.iter().enumerate() {
            g -= pi[kc] * excess[(j, i)];
        }
        // AtLower requires g <= 0 residual absorbed by mu_L >= 0 (row
        // g - mu_L = 0 ... sign: constraint w_i >= L_i).
        match vars[i] {
            Var::AtLower => {
                if g < -1e-8 * (1.0 + g.abs()) {
                    return None;
                }
            }
            Var::AtUpper => {
                if g > 1e-8 * (1.0 + g.abs()) {
                    return None;
                }
            }
            Var::Free => {}
        }
    }
    // Primal conditions.
    for i in 0..n {
        if w[i] < lower[i] - 1e-9 || w[i] > upper[i] + 1e-9 {
            return None;
        }
    }
    let losses = -(excess * &w);
    for j in 0..m {
        let margin = losses[j] - gamma;
        match scen[j] {
            Scen::Above => {
                if margin < -1e-9 {
                    return None;
                }
            }
            Scen::Below => {
                if margin > 1e-9 {
                    return None;
                }
            }
            Scen::Kink => {
                if margin.abs() > 1e-7 {
                    return None;
                }
            }
        }
    }
    if (w.sum() - 1.0).abs() > 1e-9 {
        return None;
    }
    Some((w, gamma))
}
