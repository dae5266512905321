//! Independent verification machinery: exhaustive global solves over
//! supports, stationarity certificates for the original problem, and
//! brute-force references for the y- and z-blocks.
//!
//! Nothing here shares code paths with the solver blocks it checks; the
//! global enumerator goes through the qp engine on a different assembly
//! (positive/negative l1 split plus CVaR epigraph), and the scalar
//! oracles work by candidate evaluation and golden-section search.

use nalgebra::DVector;
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{cvar_optimal, objective_f, ProblemInstance};
use crate::qp::{solve_qp, QpProblem, QpSolution, QpStatus, UNBOUNDED};

/// Supports enumerated may not exceed this without an explicit error.
pub const ENUMERATION_GUARD: u64 = 1_000_000;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("support enumeration guard exceeded: {count} supports > {ENUMERATION_GUARD}")]
    EnumerationGuard { count: u64 },
    #[error("no support of the requested size admits a feasible portfolio")]
    NoFeasibleSupport,
}

/// Stationarity, complementarity, and feasibility residuals of a
/// candidate local minimizer (x, gamma) of the original problem on a
/// declared support set.
///
/// Subgradient values (sign of the l1 term at kinks, hinge slopes at
/// scenario kinks) and nonnegative multipliers of active bound and sign
/// constraints are chosen to minimize each residual, coordinatewise in
/// closed form, so the report measures distance to the nearest valid
/// certificate rather than penalizing benign kink ambiguity.
#[derive(Debug, Clone)]
pub struct KktReport {
    /// Inf-norm of the minimal-norm selection of the x-stationarity row,
    /// scored on the support (rows off it are absorbed by the free
    /// multiplier of the zero constraint).
    pub stationarity_residual_x: f64,
    /// Residual of the gamma row: lambda3 |1 - c_h sum_j s_j| for the
    /// best hinge subgradient selection s in [0,1]^m.
    pub stationarity_residual_gamma: f64,
    /// Largest |multiplier * slack| over the assigned bound and sign
    /// multipliers.
    pub complementarity_max: f64,
    /// Largest violation of budget, box, sign, and off-support-zero
    /// constraints.
    pub feasibility_max: f64,
    /// The support set the report was scored on, sorted ascending.
    pub support_set: Vec<usize>,
}

/// Active-constraint and kink tolerance used by the residual checker.
const ACTIVE_TOL: f64 = 1e-6;

fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u128::from(u64::MAX) {
            return u64::MAX;
        }
    }
    acc as u64
}

fn combinations(n: usize, size: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..size).collect();
    if size == 0 || size > n {
        return out;
    }
    loop {
        out.push(cur.clone());
        // Advance to the next lexicographic combination.
        let mut i = size;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if cur[i] != i + n - size {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        cur[i] += 1;
        for j in i + 1..size {
            cur[j] = cur[j - 1] + 1;
        }
    }
}

/// Exhaustive global solve: minimizes the objective over every support
/// of size at most `support_size_limit` by solving the convex restriction
/// on each and keeping the best. When every box contains zero, supports
/// of exactly that size suffice (smaller ones embed by padding with
/// zeros) and only those are enumerated.
///
/// The reduction over supports uses a total order (objective, then
/// lexicographic support), so the result is deterministic regardless of
/// thread scheduling.
pub fn enumerate_global(
    instance: &ProblemInstance,
    support_size_limit: usize,
) -> Result<(DVector<f64>, f64, f64), OracleError> {
    let n = instance.n;
    let limit = support_size_limit.min(n).max(1);
    let zero_in_every_box = (0..n).all(|i| instance.lower[i] <= 0.0 && instance.upper[i] >= 0.0);
    let sizes: Vec<usize> = if zero_in_every_box {
        vec![limit]
    } else {
        (1..=limit).collect()
    };
    let mut count: u64 = 0;
    for &s in &sizes {
        count = count.saturating_add(binomial(n, s));
    }
    if count > ENUMERATION_GUARD {
        return Err(OracleError::EnumerationGuard { count });
    }
    let mut supports: Vec<Vec<usize>> = Vec::with_capacity(count as usize);
    for &s in &sizes {
        supports.extend(combinations(n, s));
    }

    struct Candidate {
        x: DVector<f64>,
        gamma: f64,
        f: f64,
        support: Vec<usize>,
    }
    let better = |a: Candidate, b: Candidate| -> Candidate {
        match a.f.total_cmp(&b.f) {
            std::cmp::Ordering::Less => a,
            std::cmp::Ordering::Greater => b,
            std::cmp::Ordering::Equal => {
                if a.support <= b.support {
                    a
                } else {
                    b
                }
            }
        }
    };
    let best = supports
        .par_iter()
        .map(|s| {
            let (x, gamma, f) = fixed_support_solve(instance, s);
            if f.is_finite() {
                Some(Candidate {
                    x,
                    gamma,
                    f,
                    support: s.clone(),
                })
            } else {
                None
            }
        })
        .reduce(
            || None,
            |a, b| match (a, b) {
                (None, b) => b,
                (a, None) => a,
                (Some(a), Some(b)) => Some(better(a, b)),
            },
        );
    match best {
        Some(c) => Ok((c.x, c.gamma, c.f)),
        None => Err(OracleError::NoFeasibleSupport),
    }
}

/// Variable layout of the fixed-support QP, for tests that inspect the
/// raw solution.
pub(crate) struct SupportLayout {
    pub support: Vec<usize>,
    /// Set when the l1 weight is positive and u, v splits are present.
    #[cfg_attr(not(test), allow(dead_code))]
    pub split: bool,
    pub pos_gamma: usize,
}

/// Convex restriction of the problem to the support `s`: off-support
/// coordinates are fixed to zero, the l1 term is split into nonnegative
/// parts, and the CVaR term uses epigraph variables. Infeasible supports
/// report +infinity.
pub fn fixed_support_solve(instance: &ProblemInstance, s: &[usize]) -> (DVector<f64>, f64, f64) {
    match fixed_support_inner(instance, s) {
        Some((sol, layout)) => {
            let mut x = DVector::zeros(instance.n);
            for (a, &i) in layout.support.iter().enumerate() {
                x[i] = sol.u[a];
            }
            // The engine's gamma can sit anywhere in a flat interval;
            // re-minimizing over gamma alone is exact and deterministic.
            let (gamma_cv, _) = cvar_optimal(instance, &x);
            let losses = instance.losses(&x);
            let gamma = if instance.cvar_expression(&losses, gamma_cv)
                <= instance.cvar_expression(&losses, sol.u[layout.pos_gamma])
            {
                gamma_cv
            } else {
                sol.u[layout.pos_gamma]
            };
            let f = objective_f(instance, &x, gamma);
            (x, gamma, f)
        }
        None => (DVector::zeros(instance.n), 0.0, f64::INFINITY),
    }
}

pub(crate) fn fixed_support_inner(
    instance: &ProblemInstance,
    s: &[usize],
) -> Option<(QpSolution, SupportLayout)> {
    let n = instance.n;
    let m = instance.m;
    let support: Vec<usize> = {
        let mut v = s.to_vec();
        v.sort_unstable();
        v.dedup();
        v
    };
    assert!(support.iter().all(|&i| i < n), "support index out of range");
    let sl = support.len();
    let in_support = {
        let mut mask = vec![false; n];
        for &i in &support {
            mask[i] = true;
        }
        mask
    };
    // Off-support coordinates are pinned to zero; zero must be feasible
    // for them (sign constraints hold trivially at zero).
    for i in 0..n {
        if !in_support[i] && (instance.lower[i] > 0.0 || instance.upper[i] < 0.0) {
            return None;
        }
    }

    let split = instance.lambda2 * instance.delta > 0.0;
    let pos_u = sl;
    let pos_v = if split { 2 * sl } else { sl };
    let pos_gamma = if split { 3 * sl } else { sl };
    let pos_t = pos_gamma + 1;
    let nv = pos_t + m;
    let c_h = instance.cvar_weight();

    let mut qp = QpProblem::new(nv);
    for a in 0..sl {
        for b in 0..sl {
            qp.q[(a, b)] = 2.0 * instance.lambda1 * instance.covariance[(support[a], support[b])];
        }
    }
    for (a, &i) in support.iter().enumerate() {
        qp.c[a] = -instance.lambda2 * instance.psi[i];
        let mut lo = instance.lower[i];
        let mut hi = instance.upper[i];
        if instance.eta[i] > 0.0 {
            lo = lo.max(0.0);
        } else if instance.eta[i] < 0.0 {
            hi = hi.min(0.0);
        }
        if lo > hi {
            return None;
        }
        qp.set_bounds(a, lo, hi);
    }
    if split {
        let weight = instance.lambda2 * instance.delta;
        for a in 0..sl {
            qp.c[pos_u + a] = weight;
            qp.c[pos_v + a] = weight;
            qp.set_bounds(pos_u + a, 0.0, UNBOUNDED);
            qp.set_bounds(pos_v + a, 0.0, UNBOUNDED);
        }
    }
    qp.c[pos_gamma] = instance.lambda3;
    for j in 0..m {
        qp.c[pos_t + j] = instance.lambda3 * c_h;
        qp.set_bounds(pos_t + j, 0.0, UNBOUNDED);
    }
    let budget: Vec<(usize, f64)> = (0..sl).map(|a| (a, 1.0)).collect();
    qp.add_eq_row(&budget, 1.0);
    if split {
        for (a, &i) in support.iter().enumerate() {
            qp.add_eq_row(
                &[(a, 1.0), (pos_u + a, -1.0), (pos_v + a, 1.0)],
                instance.phi[i],
            );
        }
    }
    for j in 0..m {
        let mut row: Vec<(usize, f64)> = support
            .iter()
            .enumerate()
            .map(|(a, &i)| (a, -instance.excess[(j, i)]))
            .collect();
        row.push((pos_gamma, -1.0));
        row.push((pos_t + j, -1.0));
        qp.add_ineq_row(&row, 0.0);
    }

    let sol = solve_qp(&qp, 1e-8, 20_000);
    log::trace!(
        "fixed_support status={:?} it={} rp={:.3e} rd={:.3e} rc={:.3e}",
        sol.status,
        sol.iterations,
        sol.primal_residual,
        sol.dual_residual,
        sol.complementarity_residual
    );
    let accept = match sol.status {
        QpStatus::Optimal => true,
        QpStatus::Infeasible => false,
        QpStatus::MaxIter => {
            sol.primal_residual <= 1e-7
                && sol.dual_residual <= 1e-7
                && sol.complementarity_residual <= 1e-6
        }
    };
    if !accept {
        return None;
    }
    Some((
        sol,
        SupportLayout {
            support,
            split,
            pos_gamma,
        },
    ))
}

/// Residuals of the original problem's first-order conditions at
/// (x, gamma) on the declared support. Never fails; violations show up
/// in the residual fields.
pub fn kkt_residual_original(
    instance: &ProblemInstance,
    x: &DVector<f64>,
    gamma: f64,
    support: &[usize],
) -> KktReport {
    let n = instance.n;
    let m = instance.m;
    let support_set: Vec<usize> = {
        let mut v = support.to_vec();
        v.sort_unstable();
        v.dedup();
        v
    };
    let in_support = {
        let mut mask = vec![false; n];
        for &i in &support_set {
            mask[i] = true;
        }
        mask
    };
    let c_h = instance.cvar_weight();
    let l1_weight = instance.lambda2 * instance.delta;

    // Hinge subgradients s_j in [0,1]: forced to 1 above the kink and 0
    // below; kink scenarios stay free. Each KKT row picks its own values
    // inside those intervals, so the residual is minimal per row.
    let losses = instance.losses(x);
    let target = 1.0 / c_h;
    let mut s_forced = vec![0.0f64; m];
    let mut forced_sum = 0.0;
    let mut kinks: Vec<usize> = Vec::new();
    for j in 0..m {
        if losses[j] - gamma > ACTIVE_TOL {
            s_forced[j] = 1.0;
            forced_sum += 1.0;
        } else if (losses[j] - gamma).abs() <= ACTIVE_TOL {
            kinks.push(j);
        }
    }
    // Gamma row: sum s can reach anywhere in [forced, forced + #kinks].
    let sum_lo = forced_sum;
    let sum_hi = forced_sum + kinks.len() as f64;
    let gamma_gap = (sum_lo - target).max(target - sum_hi).max(0.0);
    let stationarity_residual_gamma = instance.lambda3 * c_h * gamma_gap;

    // x-row base value per support coordinate, with every forced term
    // included and the adjustable range [lo, hi] from the l1 kink, the
    // hinge kinks, and active bound/sign multipliers.
    let grad_quad = &instance.covariance * x * (2.0 * instance.lambda1);
    let s_vec = DVector::from_vec(s_forced.clone());
    let hinge_pull = instance.excess.transpose() * &s_vec * (instance.lambda3 * c_h);
    let hinge_w = instance.lambda3 * c_h;
    let mut alpha = f64::NEG_INFINITY;
    let mut beta = f64::INFINITY;
    struct Coord {
        base: f64,
        lo: f64,
        hi: f64,
        kink_lo: f64,
        kink_hi: f64,
        at_kink: bool,
        sign_zero_neg: bool,
        sign_zero_pos: bool,
        lower_active: bool,
        upper_active: bool,
    }
    let mut coords: Vec<(usize, Coord)> = Vec::with_capacity(support_set.len());
    for &i in &support_set {
        let mut base = grad_quad[i] - instance.lambda2 * instance.psi[i] - hinge_pull[i];
        let at_kink = (x[i] - instance.phi[i]).abs() <= ACTIVE_TOL;
        let mut lo = 0.0;
        let mut hi = 0.0;
        let mut kink_lo = 0.0;
        let mut kink_hi = 0.0;
        for &j in &kinks {
            let term = -hinge_w * instance.excess[(j, i)];
            kink_lo += term.min(0.0);
            kink_hi += term.max(0.0);
        }
        lo += kink_lo;
        hi += kink_hi;
        if l1_weight > 0.0 {
            if at_kink {
                lo -= l1_weight;
                hi += l1_weight;
            } else {
                base += l1_weight * (x[i] - instance.phi[i]).signum();
            }
        }
        let sign_zero_neg = instance.eta[i] > 0.0 && x[i].abs() <= ACTIVE_TOL;
        let sign_zero_pos = instance.eta[i] < 0.0 && x[i].abs() <= ACTIVE_TOL;
        let lower_active = x[i] - instance.lower[i] <= ACTIVE_TOL;
        let upper_active = instance.upper[i] - x[i] <= ACTIVE_TOL;
        if sign_zero_neg || lower_active {
            lo = f64::NEG_INFINITY;
        }
        if sign_zero_pos || upper_active {
            hi = f64::INFINITY;
        }
        // The row base + adj + t is zeroable iff t in [-base-hi, -base-lo].
        alpha = alpha.max(-base - hi);
        beta = beta.min(-base - lo);
        coords.push((
            i,
            Coord {
                base,
                lo,
                hi,
                kink_lo,
                kink_hi,
                at_kink,
                sign_zero_neg,
                sign_zero_pos,
                lower_active,
                upper_active,
            },
        ));
    }
    let (t_bar, stationarity_residual_x) = if coords.is_empty() {
        (0.0, 0.0)
    } else if alpha <= beta {
        (0.0f64.clamp(alpha, beta), 0.0)
    } else {
        let t = 0.5 * (alpha + beta);
        let mut worst = 0.0f64;
        for (_, c) in &coords {
            let lo_t = -c.base - c.hi;
            let hi_t = -c.base - c.lo;
            let dist = (lo_t - t).max(t - hi_t).max(0.0);
            worst = worst.max(dist);
        }
        (t, worst)
    };

    // Explicit multiplier decomposition at the chosen t, for the
    // complementarity report: free subgradients absorb first (hinge
    // kinks, then the l1 kink), the leftover goes to the sign and bound
    // multipliers.
    let mut complementarity_max = 0.0f64;
    for (i, c) in &coords {
        let mut rem = -(c.base + t_bar);
        rem -= rem.clamp(c.kink_lo, c.kink_hi);
        if l1_weight > 0.0 && c.at_kink {
            rem -= rem.clamp(-l1_weight, l1_weight);
        }
        if rem < 0.0 {
            let mult = -rem;
            if c.sign_zero_neg {
                complementarity_max = complementarity_max.max(mult * x[*i].abs());
            } else if c.lower_active {
                complementarity_max =
                    complementarity_max.max(mult * (x[*i] - instance.lower[*i]).abs());
            }
        } else if rem > 0.0 {
            if c.sign_zero_pos {
                complementarity_max = complementarity_max.max(rem * x[*i].abs());
            } else if c.upper_active {
                complementarity_max =
                    complementarity_max.max(rem * (instance.upper[*i] - x[*i]).abs());
            }
        }
    }

    let mut feasibility_max = (x.sum() - 1.0).abs();
    for i in 0..n {
        feasibility_max = feasibility_max
            .max(instance.lower[i] - x[i])
            .max(x[i] - instance.upper[i]);
        if instance.eta[i] > 0.0 {
            feasibility_max = feasibility_max.max(-x[i]);
        } else if instance.eta[i] < 0.0 {
            feasibility_max = feasibility_max.max(x[i]);
        }
        if !in_support[i] {
            feasibility_max = feasibility_max.max(x[i].abs());
        }
    }
    feasibility_max = feasibility_max.max(0.0);

    KktReport {
        stationarity_residual_x,
        stationarity_residual_gamma,
        complementarity_max,
        feasibility_max,
        support_set,
    }
}

/// Brute-force y-block reference: enumerates every support of size k,
/// projects coordinatewise onto the sign classes, and keeps the closest
/// point. Exponential in n, guarded to n <= 12.
pub fn oracle_solve_y(x: &DVector<f64>, eta: &DVector<f64>, k: usize) -> DVector<f64> {
    let n = x.len();
    assert!(n <= 12, "oracle_solve_y size guard: n={n} > 12");
    assert!(k >= 1 && k <= n);
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1u32 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let mut y = DVector::zeros(n);
        for i in 0..n {
            if mask & (1 << i) != 0 {
                y[i] = if eta[i] > 0.0 {
                    x[i].max(0.0)
                } else if eta[i] < 0.0 {
                    x[i].min(0.0)
                } else {
                    x[i]
                };
            }
        }
        let dist = (x - &y).norm_squared();
        if best.as_ref().map_or(true, |(d, _)| dist < *d) {
            best = Some((dist, y));
        }
    }
    best.expect("at least one support").1
}

/// Scalar z-block reference: candidate evaluation at the breakpoints
/// {L, U, phi, x-kappa, x+kappa} clipped to the box, refined by
/// golden-section search on each smooth piece of the strictly convex
/// objective. Independent of the closed-form threshold logic.
pub fn oracle_solve_z_scalar(x: f64, kappa: f64, phi: f64, l: f64, u: f64) -> f64 {
    assert!(l < u);
    let obj = |z: f64| (z - x) * (z - x) + 2.0 * kappa * (z - phi).abs();
    let golden = |mut a: f64, mut b: f64| -> f64 {
        const INV_PHI: f64 = 0.618_033_988_749_894_8;
        let mut c = b - INV_PHI * (b - a);
        let mut d = a + INV_PHI * (b - a);
        let mut fc = obj(c);
        let mut fd = obj(d);
        for _ in 0..90 {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - INV_PHI * (b - a);
                fc = obj(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + INV_PHI * (b - a);
                fd = obj(d);
            }
        }
        0.5 * (a + b)
    };
    let mut candidates = vec![
        (x - kappa).clamp(l, u),
        (x + kappa).clamp(l, u),
        phi.clamp(l, u),
        l,
        u,
    ];
    let knot = phi.clamp(l, u);
    if knot > l {
        candidates.push(golden(l, knot));
    }
    if knot < u {
        candidates.push(golden(knot, u));
    }
    let mut best = candidates[0];
    let mut best_val = obj(best);
    for &cand in &candidates[1..] {
        let val = obj(cand);
        if val < best_val {
            best_val = val;
            best = cand;
        }
    }
    best
}
