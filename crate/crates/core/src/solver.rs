//! Penalty decomposition driver: the block-coordinate inner loop, the
//! geometric penalty continuation with its safeguard, feasible-point
//! construction, and final-iterate hardening.

use std::time::Instant;

use nalgebra::DVector;
use thiserror::Error;

use crate::model::{
    cvar_optimal, objective_f, portfolio_metrics, Metrics, ProblemInstance,
};
use crate::oracle::{kkt_residual_original, KktReport};
use crate::qp::{solve_qp, QpProblem, QpStatus};
use crate::subproblems::{
    q_rho, solve_w_gamma, solve_y, solve_z, w_block_objective, PenaltyState, SubproblemError,
    XBlockSolver,
};

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Initial penalty weight.
    pub rho0: f64,
    /// Geometric growth factor for the penalty weight (> 1).
    pub r: f64,
    /// Inner (block-coordinate) stopping tolerance.
    pub eps_inner: f64,
    /// Outer (consensus) stopping tolerance.
    pub eps_outer: f64,
    pub max_inner_sweeps: usize,
    pub max_outer_iters: usize,
    /// Largest penalty weight attempted before giving up.
    pub rho_cap: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            rho0: 1.2,
            r: 3.0,
            eps_inner: 1e-5,
            eps_outer: 1e-5,
            max_inner_sweeps: 500,
            max_outer_iters: 60,
            rho_cap: 1e12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    NotConverged,
}

/// One outer iteration of the continuation, as reported in the trace.
#[derive(Debug, Clone)]
pub struct OuterTrace {
    pub rho: f64,
    /// Block-coordinate sweeps spent at this penalty weight.
    pub sweeps: usize,
    /// Penalty objective at inner-loop exit.
    pub q_value: f64,
    /// Consensus residual at inner-loop exit.
    pub consensus: f64,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub status: SolveStatus,
    /// Hardened final portfolio: exactly on the budget plane, inside the
    /// box and sign constraints, with at most k nonzeros.
    pub x_final: DVector<f64>,
    /// Exact CVaR-minimizing threshold at the final portfolio.
    pub gamma_final: f64,
    pub metrics: Metrics,
    /// Outer-criterion value at exit.
    pub consensus_residual: f64,
    pub trace: Vec<OuterTrace>,
    pub wall_seconds: f64,
    /// Times the safeguard reset the blocks to the feasible point.
    pub restart_count: usize,
    /// First-order residuals of the original problem at the final point.
    pub kkt_residual: KktReport,
    /// The safeguard level fixed at startup.
    pub upsilon: f64,
    pub x_feas: DVector<f64>,
    pub gamma_feas: f64,
    /// Largest inf-norm of any x iterate across the whole run.
    pub max_iterate_inf_norm: f64,
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("no feasible k-sparse portfolio for given bounds/signs")]
    NoFeasiblePoint,
    #[error("feasible-point construction did not converge within {iterations} iterations")]
    FeasiblePointNoConvergence { iterations: usize },
    #[error(transparent)]
    Subproblem(#[from] SubproblemError),
}

/// Result of one inner loop at fixed penalty weight.
#[derive(Debug, Clone)]
pub struct BcdResult {
    pub state: PenaltyState,
    pub sweeps: usize,
    /// Penalty objective after each sweep; nonincreasing.
    pub q_trace: Vec<f64>,
    /// Largest inf-norm among the x iterates of this loop.
    pub max_x_inf_norm: f64,
}

/// Deterministic feasible starting point: the k assets with the largest
/// |eta| (ties to the lowest index) carry the minimum-norm budget
/// allocation under box and sign constraints; gamma is CVaR-optimal
/// there.
pub fn feasible_point(instance: &ProblemInstance) -> Result<(DVector<f64>, f64), SolverError> {
    let n = instance.n;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        instance.eta[b]
            .abs()
            .partial_cmp(&instance.eta[a].abs())
            .expect("eta is finite")
            .then(a.cmp(&b))
    });
    let mut support: Vec<usize> = order.into_iter().take(instance.k).collect();
    support.sort_unstable();

    let mut qp = QpProblem::new(support.len());
    for (a, &i) in support.iter().enumerate() {
        qp.q[(a, a)] = 2.0;
        let mut lo = instance.lower[i];
        let mut hi = instance.upper[i];
        if instance.eta[i] > 0.0 {
            lo = lo.max(0.0);
        } else if instance.eta[i] < 0.0 {
            hi = hi.min(0.0);
        }
        if lo > hi {
            return Err(SolverError::NoFeasiblePoint);
        }
        qp.set_bounds(a, lo, hi);
    }
    let budget: Vec<(usize, f64)> = (0..support.len()).map(|a| (a, 1.0)).collect();
    qp.add_eq_row(&budget, 1.0);
    let sol = solve_qp(&qp, 1e-10, 500);
    match sol.status {
        QpStatus::Optimal => {}
        QpStatus::Infeasible => return Err(SolverError::NoFeasiblePoint),
        QpStatus::MaxIter => {
            return Err(SolverError::FeasiblePointNoConvergence {
                iterations: sol.iterations,
            })
        }
    }
    let mut x = DVector::zeros(n);
    for (a, &i) in support.iter().enumerate() {
        x[i] = sol.u[a];
    }
    let (gamma, _) = cvar_optimal(instance, &x);
    Ok((x, gamma))
}

/// Relative inf-norm change of one block.
fn rel_change(prev: &DVector<f64>, cur: &DVector<f64>) -> f64 {
    let diff = (cur - prev).amax();
    diff / cur.amax().max(1.0)
}

/// Inner stopping criterion: the largest relative change over the five
/// blocks is at most eps_inner.
pub fn inner_stop(prev: &PenaltyState, cur: &PenaltyState, eps_inner: f64) -> bool {
    let gamma_change = (cur.gamma - prev.gamma).abs() / cur.gamma.abs().max(1.0);
    rel_change(&prev.x, &cur.x)
        .max(rel_change(&prev.y, &cur.y))
        .max(rel_change(&prev.z, &cur.z))
        .max(rel_change(&prev.w, &cur.w))
        .max(gamma_change)
        <= eps_inner
}

/// Outer-criterion value: sum of inf-norm block disagreements.
pub fn consensus_residual(state: &PenaltyState) -> f64 {
    (&state.x - &state.y).amax() + (&state.x - &state.z).amax() + (&state.x - &state.w).amax()
}

/// Outer stopping criterion.
pub fn outer_stop(state: &PenaltyState, eps_outer: f64) -> bool {
    consensus_residual(state) <= eps_outer
}

/// Block-coordinate descent at fixed penalty weight, sweeping
/// x -> y -> z -> (w, gamma) until the inner criterion or the sweep cap.
pub fn run_bcd(
    instance: &ProblemInstance,
    rho: f64,
    init_state: &PenaltyState,
    eps_inner: f64,
    max_sweeps: usize,
) -> Result<BcdResult, SubproblemError> {
    let x_solver = XBlockSolver::new(instance, rho);
    let kappa = instance.lambda2 * instance.delta / (2.0 * rho);
    let mut state = init_state.clone();
    let mut q_trace = Vec::new();
    let mut sweeps = 0;
    let mut max_x_inf_norm = 0.0f64;

    #[cfg(debug_assertions)]
    let gamma_bound = {
        let bound_mag = instance.lower.amax().max(instance.upper.amax());
        let row_l1 = (0..instance.m)
            .map(|j| (0..instance.n).map(|i| instance.excess[(j, i)].abs()).sum::<f64>())
            .fold(0.0f64, f64::max);
        row_l1 * bound_mag + 1e-6
    };

    while sweeps < max_sweeps {
        let prev = state.clone();
        state.x = x_solver.solve(&state.y, &state.z, &state.w);
        max_x_inf_norm = max_x_inf_norm.max(state.x.amax());
        state.y = solve_y(&state.x, &instance.eta, instance.k);
        state.z = solve_z(
            &state.x,
            kappa,
            &instance.phi,
            &instance.lower,
            &instance.upper,
        );
        let (w_new, gamma_new) = solve_w_gamma(instance, rho, &state.x)?;
        // The QP certifies its residuals, not monotone improvement; keep
        // the previous pair when the fresh one scores worse on the block
        // objective so the q trace stays monotone.
        let fresh = w_block_objective(instance, rho, &state.x, &w_new, gamma_new);
        let kept = w_block_objective(instance, rho, &state.x, &state.w, state.gamma);
        if fresh <= kept {
            state.w = w_new;
            state.gamma = gamma_new;
        }

        #[cfg(debug_assertions)]
        {
            for i in 0..instance.n {
                debug_assert!(
                    state.z[i] >= instance.lower[i] && state.z[i] <= instance.upper[i]
                );
                debug_assert!(
                    state.w[i] >= instance.lower[i] - 1e-6
                        && state.w[i] <= instance.upper[i] + 1e-6
                );
            }
            debug_assert!(state.gamma.abs() <= gamma_bound);
        }

        q_trace.push(q_rho(instance, &state, rho));
        sweeps += 1;
        log::trace!(
            "bcd sweep={sweeps} dx={:.3e} dg={:.3e} q={:.12e}",
            rel_change(&prev.x, &state.x),
            (state.gamma - prev.gamma).abs() / state.gamma.abs().max(1.0),
            q_rho(instance, &state, rho)
        );
        if inner_stop(&prev, &state, eps_inner) {
            break;
        }
    }
    Ok(BcdResult {
        state,
        sweeps,
        q_trace,
        max_x_inf_norm,
    })
}

/// Zeroes entries at or below this magnitude when hardening.
const HARDEN_TOL: f64 = 1e-7;

/// Projects x onto the budget/box/sign set restricted to `support`;
/// None when that restriction is infeasible or the projection fails.
fn project_onto_support(
    instance: &ProblemInstance,
    x: &DVector<f64>,
    support: &[usize],
) -> Option<DVector<f64>> {
    let mut qp = QpProblem::new(support.len());
    for (a, &i) in support.iter().enumerate() {
        qp.q[(a, a)] = 2.0;
        qp.c[a] = -2.0 * x[i];
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
    let budget: Vec<(usize, f64)> = (0..support.len()).map(|a| (a, 1.0)).collect();
    qp.add_eq_row(&budget, 1.0);
    let sol = solve_qp(&qp, 1e-10, 500);
    if sol.status != QpStatus::Optimal {
        return None;
    }
    let mut out = DVector::zeros(instance.n);
    for (a, &i) in support.iter().enumerate() {
        out[i] = sol.u[a];
    }
    Some(out)
}

/// Indices of the `count` largest |x_i| among `pool`, ties to the lowest
/// index, in ascending index order.
fn top_by_magnitude(x: &DVector<f64>, pool: &[usize], count: usize) -> Vec<usize> {
    let mut order = pool.to_vec();
    order.sort_by(|&a, &b| {
        x[b].abs()
            .partial_cmp(&x[a].abs())
            .expect("iterate is finite")
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = order.into_iter().take(count).collect();
    kept.sort_unstable();
    kept
}

/// Penalty decomposition (outer continuation) for the full problem.
pub fn run_pd(
    instance: &ProblemInstance,
    options: &SolverOptions,
) -> Result<SolveReport, SolverError> {
    let started = Instant::now();
    let (x_feas, gamma_feas) = feasible_point(instance)?;
    let mut state = PenaltyState::splat(&x_feas, gamma_feas);
    let mut rho = options.rho0;

    // The safeguard level is fixed once, before the loop: whichever is
    // larger of the feasible objective and the penalty objective after a
    // single exact x step at the initial weight.
    let upsilon = {
        let x0 = XBlockSolver::new(instance, rho).solve(&state.y, &state.z, &state.w);
        let probe = PenaltyState {
            x: x0,
            ..state.clone()
        };
        objective_f(instance, &x_feas, gamma_feas).max(q_rho(instance, &probe, rho))
    };

    let mut trace: Vec<OuterTrace> = Vec::new();
    let mut restart_count = 0usize;
    let mut max_iterate_inf_norm = 0.0f64;
    let mut status = SolveStatus::NotConverged;

    for outer in 0..options.max_outer_iters {
        let bcd = run_bcd(
            instance,
            rho,
            &state,
            options.eps_inner,
            options.max_inner_sweeps,
        )?;
        state = bcd.state;
        max_iterate_inf_norm = max_iterate_inf_norm.max(bcd.max_x_inf_norm);
        let consensus = consensus_residual(&state);
        if let Some(last) = trace.last() {
            if outer >= 2 && consensus > last.consensus {
                log::debug!(
                    "consensus increased at outer {outer}: {} -> {consensus}",
                    last.consensus
                );
            }
        }
        trace.push(OuterTrace {
            rho,
            sweeps: bcd.sweeps,
            q_value: bcd.q_trace.last().copied().unwrap_or(f64::NAN),
            consensus,
        });
        if consensus <= options.eps_outer {
            status = SolveStatus::Converged;
            break;
        }
        let rho_next = rho * options.r;
        if rho_next > options.rho_cap {
            break;
        }
        // Safeguard: if even the exact x step at the new weight sits
        // above the level Upsilon, restart the blocks from the feasible
        // point (which is penalty-free by construction).
        let x_probe = XBlockSolver::new(instance, rho_next).solve(&state.y, &state.z, &state.w);
        let probe = PenaltyState {
            x: x_probe,
            ..state.clone()
        };
        if q_rho(instance, &probe, rho_next) > upsilon {
            state = PenaltyState::splat(&x_feas, gamma_feas);
            restart_count += 1;
        }
        rho = rho_next;
    }

    let consensus_at_exit = trace.last().map_or(f64::INFINITY, |t| t.consensus);

    // Hardening: drop tiny entries, enforce the cardinality bound, and
    // reproject onto the budget/box/sign set on the surviving support so
    // the reported portfolio is exactly feasible.
    let raw = state.x.clone();
    let mut support: Vec<usize> = (0..instance.n)
        .filter(|&i| raw[i].abs() > HARDEN_TOL)
        .collect();
    if support.is_empty() {
        support = top_by_magnitude(&raw, &(0..instance.n).collect::<Vec<_>>(), instance.k);
    } else if support.len() > instance.k {
        support = top_by_magnitude(&raw, &support, instance.k);
    }
    let mut x_final = project_onto_support(instance, &raw, &support);
    if x_final.is_none() && support.len() < instance.k {
        // The trimmed support cannot carry the budget; widen it back to
        // k with the largest dropped entries and retry.
        let complement: Vec<usize> = (0..instance.n).filter(|i| !support.contains(i)).collect();
        let extra = top_by_magnitude(&raw, &complement, instance.k - support.len());
        support.extend(extra);
        support.sort_unstable();
        x_final = project_onto_support(instance, &raw, &support);
    }
    let x_final = match x_final {
        Some(x) => x,
        None => {
            status = SolveStatus::NotConverged;
            raw.clone()
        }
    };

    let (gamma_final, _) = cvar_optimal(instance, &x_final);
    // Score the certificate on the support padded to k with the largest
    // pre-hardening magnitudes, so near-ties that were rounded away can
    // still absorb their stationarity rows.
    let mut cert_support: Vec<usize> = (0..instance.n).filter(|&i| x_final[i] != 0.0).collect();
    if cert_support.len() < instance.k {
        let complement: Vec<usize> = (0..instance.n)
            .filter(|i| !cert_support.contains(i))
            .collect();
        let extra = top_by_magnitude(&raw, &complement, instance.k - cert_support.len());
        cert_support.extend(extra);
        cert_support.sort_unstable();
    }
    let kkt_residual = kkt_residual_original(instance, &x_final, gamma_final, &cert_support);
    let metrics = portfolio_metrics(instance, &x_final);

    Ok(SolveReport {
        status,
        x_final,
        gamma_final,
        metrics,
        consensus_residual: consensus_at_exit,
        trace,
        wall_seconds: started.elapsed().as_secs_f64(),
        restart_count,
        kkt_residual,
        upsilon,
        x_feas,
        gamma_feas,
        max_iterate_inf_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_problem, ProblemData};
    use crate::oracle::fixed_support_solve;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn random_data(rng: &mut ChaCha12Rng, n: usize, m: usize, k: usize) -> ProblemData {
        let f = DMatrix::from_fn(n, 2, |_, _| rng.gen_range(-0.3..0.3));
        let mut cov = &f * f.transpose();
        for i in 0..n {
            cov[(i, i)] += rng.gen_range(0.02..0.1);
        }
        ProblemData {
            covariance: (0..n)
                .map(|i| (0..n).map(|j| cov[(i, j)]).collect())
                .collect(),
            mu: (0..n).map(|_| rng.gen_range(-0.05..0.15)).collect(),
            scenarios: (0..m)
                .map(|_| (0..n).map(|_| rng.gen_range(-0.4..0.5)).collect())
                .collect(),
            lower: vec![-0.4; n],
            upper: vec![0.7; n],
            lambda1: 0.4,
            lambda2: 0.25,
            beta: 0.75,
            delta: 0.003,
            k,
            ..ProblemData::default()
        }
    }

    #[test]
    fn feasible_point_symmetric_min_norm() {
        let n = 10;
        let data = ProblemData {
            covariance: (0..n)
                .map(|i| (0..n).map(|j| if i == j { 0.05 } else { 0.0 }).collect())
                .collect(),
            mu: vec![0.1; n],
            scenarios: vec![vec![0.05; n], vec![-0.05; n]],
            lower: vec![-0.2; n],
            upper: vec![0.2; n],
            eta: Some(vec![1.0; n]),
            lambda1: 0.4,
            lambda2: 0.3,
            beta: 0.5,
            delta: 0.0,
            k: n,
            ..ProblemData::default()
        };
        let instance = build_problem(data).unwrap();
        let (x, gamma) = feasible_point(&instance).unwrap();
        for i in 0..n {
            assert_abs_diff_eq!(x[i], 0.1, epsilon = 1e-7);
        }
        let (g_cv, _) = cvar_optimal(&instance, &x);
        assert_abs_diff_eq!(gamma, g_cv, epsilon = 1e-12);
    }

    #[test]
    fn feasible_point_takes_largest_eta_support() {
        let data = ProblemData {
            covariance: vec![
                vec![0.05, 0.0, 0.0],
                vec![0.0, 0.05, 0.0],
                vec![0.0, 0.0, 0.05],
            ],
            mu: vec![0.1, 0.1, 0.1],
            scenarios: vec![vec![0.05, 0.05, 0.05], vec![-0.05, -0.05, -0.05]],
            lower: vec![0.0; 3],
            upper: vec![1.0; 3],
            eta: Some(vec![3.0, 2.0, 1.0]),
            lambda1: 0.4,
            lambda2: 0.3,
            beta: 0.5,
            delta: 0.0,
            k: 1,
            ..ProblemData::default()
        };
        let instance = build_problem(data).unwrap();
        let (x, _) = feasible_point(&instance).unwrap();
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-8);
        assert_eq!(x[1], 0.0);
        assert_eq!(x[2], 0.0);
    }

    #[test]
    fn feasible_point_detects_unreachable_budget() {
        let mut rng = ChaCha12Rng::seed_from_u64(51);
        let mut data = random_data(&mut rng, 3, 4, 2);
        data.lower = vec![0.0; 3];
        data.upper = vec![0.2; 3];
        let instance = build_problem(data).unwrap();
        match feasible_point(&instance) {
            Err(SolverError::NoFeasiblePoint) => {}
            other => panic!("expected infeasibility, got {other:?}"),
        }
    }

    #[test]
    fn bcd_terminates_in_one_sweep_at_a_fixed_point() {
        let data = ProblemData {
            covariance: vec![vec![0.1, 0.0], vec![0.0, 0.1]],
            mu: vec![0.1, 0.1],
            scenarios: vec![vec![1.0, 1.0]],
            lower: vec![-1.0; 2],
            upper: vec![1.0; 2],
            lambda1: 0.0,
            lambda2: 0.0,
            beta: 0.5,
            delta: 0.0,
            k: 2,
            ..ProblemData::default()
        };
        let instance = build_problem(data).unwrap();
        let x = DVector::from_element(2, 0.5);
        let init = PenaltyState::splat(&x, -1.0);
        let bcd = run_bcd(&instance, 1.2, &init, 1e-5, 100).unwrap();
        assert_eq!(bcd.sweeps, 1);
        assert!(consensus_residual(&bcd.state) <= 1e-7);
    }

    #[test]
    fn bcd_trace_is_monotone_and_meets_the_inner_criterion() {
        let mut rng = ChaCha12Rng::seed_from_u64(52);
        let data = random_data(&mut rng, 8, 20, 8);
        let instance = build_problem(data).unwrap();
        let (x_feas, gamma_feas) = feasible_point(&instance).unwrap();
        let init = PenaltyState::splat(&x_feas, gamma_feas);
        // Contraction at small rho is linear and slow, so use a modest
        // inner tolerance to observe termination before the cap.
        let bcd = run_bcd(&instance, 1.2, &init, 1e-3, 500).unwrap();
        assert!(bcd.sweeps < 500);
        for pair in bcd.q_trace.windows(2) {
            assert!(
                pair[1] <= pair[0] + 1e-12 * (1.0 + pair[0].abs()),
                "q increased: {} -> {}",
                pair[0],
                pair[1]
            );
        }

        // A cap below what the tolerance needs is reported honestly.
        let capped = run_bcd(&instance, 1.2, &init, 1e-12, 20).unwrap();
        assert_eq!(capped.sweeps, 20);
        assert_eq!(capped.q_trace.len(), 20);
    }

    #[test]
    fn bcd_consensus_collapses_at_huge_rho() {
        let mut rng = ChaCha12Rng::seed_from_u64(53);
        let data = random_data(&mut rng, 6, 12, 3);
        let instance = build_problem(data).unwrap();
        let (x_feas, gamma_feas) = feasible_point(&instance).unwrap();
        let init = PenaltyState::splat(&x_feas, gamma_feas);
        let bcd = run_bcd(&instance, 1e10, &init, 1e-5, 500).unwrap();
        assert!(consensus_residual(&bcd.state) <= 1e-4);
    }

    #[test]
    fn stop_criteria_arithmetic() {
        let x = DVector::from_vec(vec![0.5, 0.5]);
        let state = PenaltyState::splat(&x, 0.0);
        assert!(inner_stop(&state, &state, 1e-12));
        assert!(outer_stop(&state, 1e-12));

        let mut off = state.clone();
        off.y[0] -= 2e-5;
        assert!(!outer_stop(&off, 1e-5));
        assert_abs_diff_eq!(consensus_residual(&off), 2e-5, epsilon = 1e-15);
    }

    #[test]
    fn pd_picks_the_better_unit_vector() {
        let data = ProblemData {
            covariance: vec![vec![0.04, 0.01], vec![0.01, 0.09]],
            mu: vec![0.08, 0.12],
            scenarios: vec![vec![0.05, -0.1], vec![0.1, 0.2], vec![-0.02, 0.05]],
            lower: vec![0.0, 0.0],
            upper: vec![1.0, 1.0],
            eta: Some(vec![1.0, 1.0]),
            lambda1: 0.5,
            lambda2: 0.2,
            beta: 0.6,
            delta: 0.01,
            k: 1,
            ..ProblemData::default()
        };
        let instance = build_problem(data).unwrap();
        let report = run_pd(&instance, &SolverOptions::default()).unwrap();
        assert_eq!(report.status, SolveStatus::Converged);

        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        let e2 = DVector::from_vec(vec![0.0, 1.0]);
        let f1 = objective_f(&instance, &e1, cvar_optimal(&instance, &e1).0);
        let f2 = objective_f(&instance, &e2, cvar_optimal(&instance, &e2).0);
        let f_pd = objective_f(&instance, &report.x_final, report.gamma_final);
        assert_abs_diff_eq!(f_pd, f1.min(f2), epsilon = 1e-6);
        let expected = if f1 <= f2 { &e1 } else { &e2 };
        for i in 0..2 {
            assert_abs_diff_eq!(report.x_final[i], expected[i], epsilon = 1e-6);
        }
    }

    #[test]
    fn pd_matches_the_direct_convex_solve_when_unconstrained() {
        let mut rng = ChaCha12Rng::seed_from_u64(54);
        let mut data = random_data(&mut rng, 5, 10, 5);
        data.delta = 0.0;
        data.lambda2 = 0.0;
        data.lambda1 = 0.55;
        data.eta = Some(vec![0.0; 5]);
        let instance = build_problem(data).unwrap();
        let report = run_pd(&instance, &SolverOptions::default()).unwrap();
        assert_eq!(report.status, SolveStatus::Converged);
        let f_pd = objective_f(&instance, &report.x_final, report.gamma_final);
        let (_, _, f_direct) = fixed_support_solve(&instance, &[0, 1, 2, 3, 4]);
        assert!(
            (f_pd - f_direct).abs() <= 1e-5 * (1.0 + f_direct.abs()),
            "{f_pd} vs {f_direct}, trace {:?}",
            report.trace
        );
    }

    #[test]
    fn pd_report_is_exactly_feasible_and_certified() {
        let mut rng = ChaCha12Rng::seed_from_u64(55);
        let data = random_data(&mut rng, 6, 15, 2);
        let instance = build_problem(data).unwrap();
        let report = run_pd(&instance, &SolverOptions::default()).unwrap();
        assert_eq!(report.status, SolveStatus::Converged);
        assert!(report.consensus_residual <= 1e-5);
        let x = &report.x_final;
        assert!((x.sum() - 1.0).abs() <= 1e-8);
        let nnz = x.iter().filter(|v| **v != 0.0).count();
        assert!(nnz <= 2);
        assert!(report.metrics.cardinality <= 2);
        for i in 0..6 {
            assert!(x[i] >= instance.lower[i] - 1e-8 && x[i] <= instance.upper[i] + 1e-8);
        }
        assert!(report.kkt_residual.feasibility_max <= 1e-8);
        assert!(report.upsilon.is_finite());
        assert!(report.max_iterate_inf_norm > 0.0);
        assert!(!report.trace.is_empty());
        // The penalty weight follows the geometric schedule from rho0.
        assert_abs_diff_eq!(report.trace[0].rho, 1.2);
        if report.trace.len() >= 2 {
            assert_abs_diff_eq!(report.trace[1].rho, 3.6, epsilon = 1e-12);
        }
    }
}
