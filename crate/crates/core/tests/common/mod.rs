//! Shared instance samplers for the integration suites.
//!
//! Every sampler takes the RNG by value reference so callers control the
//! seed stream, and every instance it returns is feasible by
//! construction: the top-k-by-|eta| support admits a budget allocation
//! and m(1-beta) stays away from integers, where the CVaR threshold
//! degenerates into an interval and blockwise optima stop being unique.

#![allow(dead_code)]

pub mod wg_oracle;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use sparse_mv_cvar::solver::feasible_point;
use sparse_mv_cvar::{build_problem, ProblemData, ProblemInstance};

/// Draws beta so that the fractional part of m(1-beta) lies in
/// [0.1, 0.9].
pub fn sample_beta(rng: &mut ChaCha12Rng, m: usize) -> f64 {
    loop {
        let beta = rng.gen_range(0.55..0.97);
        let target = m as f64 * (1.0 - beta);
        let frac = target - target.floor();
        if (0.1..=0.9).contains(&frac) {
            return beta;
        }
    }
}

/// Random dense problem data of the given shape. Covariance is a
/// two-factor model plus diagonal jitter; scenario returns are uniform.
pub fn sample_data(rng: &mut ChaCha12Rng, n: usize, m: usize, k: usize) -> ProblemData {
    let factors: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..2).map(|_| rng.gen_range(-0.3..0.3)).collect())
        .collect();
    let covariance: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let cross: f64 = (0..2).map(|f| factors[i][f] * factors[j][f]).sum();
                    if i == j {
                        cross + rng.gen_range(0.02..0.1)
                    } else {
                        cross
                    }
                })
                .collect()
        })
        .collect();
    let lambda1 = rng.gen_range(0.2..0.45);
    let lambda2 = rng.gen_range(0.1..0.35);
    let eta = if rng.gen_bool(0.4) {
        Some(
            (0..n)
                .map(|_| {
                    let roll: f64 = rng.gen();
                    if roll < 0.15 {
                        0.0
                    } else if roll < 0.35 {
                        -rng.gen_range(0.2..1.0)
                    } else {
                        rng.gen_range(0.2..1.0)
                    }
                })
                .collect(),
        )
    } else {
        None
    };
    ProblemData {
        covariance,
        mu: (0..n).map(|_| rng.gen_range(-0.05..0.15)).collect(),
        scenarios: (0..m)
            .map(|_| (0..n).map(|_| rng.gen_range(-0.4..0.5)).collect())
            .collect(),
        rc: if rng.gen_bool(0.5) {
            0.0
        } else {
            rng.gen_range(0.0..0.02)
        },
        eta,
        lower: vec![-0.4; n],
        // The ceiling scales with 1/k so a k-sparse budget allocation
        // always exists; a flat 0.8 would make every k = 1 draw infeasible.
        upper: vec![rng.gen_range(0.5..0.8f64).max(1.1 / k as f64); n],
        lambda1,
        lambda2,
        beta: sample_beta(rng, m),
        delta: rng.gen_range(0.0..0.008),
        k,
        ..ProblemData::default()
    }
}

/// Feasible random instance: resamples until the deterministic feasible
/// point exists, so solver-level suites never hit setup failures.
pub fn sample_instance(rng: &mut ChaCha12Rng, n: usize, m: usize, k: usize) -> ProblemInstance {
    for _ in 0..1000 {
        let data = sample_data(rng, n, m, k);
        if let Ok(instance) = build_problem(data) {
            if feasible_point(&instance).is_ok() {
                return instance;
            }
        }
    }
    panic!("sampler failed to draw a feasible instance for n={n} m={m} k={k}");
}

/// Convex-case instance: k = n, no l1 charge, no return term, free signs.
/// The problem is then a plain convex QP over the budgeted box.
pub fn sample_convex_instance(rng: &mut ChaCha12Rng, n: usize, m: usize) -> ProblemInstance {
    for _ in 0..1000 {
        let mut data = sample_data(rng, n, m, n);
        data.eta = Some(vec![0.0; n]);
        data.delta = 0.0;
        data.lambda2 = 0.0;
        data.lambda1 = rng.gen_range(0.25..0.6);
        if let Ok(instance) = build_problem(data) {
            if feasible_point(&instance).is_ok() {
                return instance;
            }
        }
    }
    panic!("sampler failed to draw a feasible convex instance for n={n} m={m}");
}
