//! Problem data, derived quantities, objective evaluation, and metrics.
//!
//! An instance couples the mean-variance data `(A, mu)` with a discrete
//! scenario set for CVaR. Derived quantities are fixed at build time:
//! `Psi = mu + rc*h`, excess scenario returns `d_j = b_j - rc*h`, and the
//! sign classes `gamma_plus/minus/zero` partitioning assets by `sgn(eta_i)`.
//! The portfolio objective is
//!
//! ```text
//! f(x, gamma) = lambda1 * x'Ax
//!             - lambda2 * (Psi'x - delta * ||x - phi||_1)
//!             + lambda3 * (gamma + (1/(m(1-beta))) * sum_j (-d_j'x - gamma)+ )
//! ```
//!
//! with `lambda3 = 1 - lambda1 - lambda2 > 0` and `beta` the CVaR
//! confidence level.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

/// Nonzero-counting tolerance for reported cardinality. Chosen well below
/// the 1e-5 consensus tolerance so hardened zeros are never miscounted.
pub const CARDINALITY_TOL: f64 = 1e-9;

/// Raw inputs to [`build_problem`]. Matrices are row-major nested vectors;
/// optional fields fall back to the documented defaults.
#[derive(Debug, Clone)]
pub struct ProblemData {
    /// n x n covariance of simple returns. Symmetrized on build; must be
    /// PSD up to -1e-10 on the smallest eigenvalue.
    pub covariance: Vec<Vec<f64>>,
    /// Expected simple returns, length n.
    pub mu: Vec<f64>,
    /// m scenario return rows, each length n.
    pub scenarios: Vec<Vec<f64>>,
    /// Risk-neutral rate, >= 0.
    pub rc: f64,
    /// Multiplier on `rc` per asset; defaults to the ones vector.
    pub h: Option<Vec<f64>>,
    /// Sign-class vector; defaults to `mu`. Assets with `eta_i > 0` must be
    /// held long, `eta_i < 0` short, `eta_i = 0` free.
    pub eta: Option<Vec<f64>>,
    /// Reference weights for the l1 deviation charge; defaults to zero.
    pub phi: Option<Vec<f64>>,
    /// Lower weight bounds, length n, elementwise below `upper`.
    pub lower: Vec<f64>,
    /// Upper weight bounds, length n.
    pub upper: Vec<f64>,
    /// Variance weight, >= 0.
    pub lambda1: f64,
    /// Return weight, >= 0. The CVaR weight is `1 - lambda1 - lambda2`.
    pub lambda2: f64,
    /// CVaR confidence level in (0,1).
    pub beta: f64,
    /// l1 deviation charge, >= 0.
    pub delta: f64,
    /// Cardinality bound, 1 <= k <= n.
    pub k: usize,
}

impl Default for ProblemData {
    fn default() -> Self {
        ProblemData {
            covariance: Vec::new(),
            mu: Vec::new(),
            scenarios: Vec::new(),
            rc: 0.0,
            h: None,
            eta: None,
            phi: None,
            lower: Vec::new(),
            upper: Vec::new(),
            lambda1: 1.0 / 3.0,
            lambda2: 1.0 / 3.0,
            beta: 0.95,
            delta: 0.002,
            k: 1,
        }
    }
}

/// Validated, immutable problem instance with all derived fields.
///
/// Safe to share read-only across threads; every operation on it is a
/// pure function.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    /// Asset count.
    pub n: usize,
    /// Scenario count.
    pub m: usize,
    /// Cardinality bound.
    pub k: usize,
    /// Symmetrized, PSD-clipped covariance.
    pub covariance: DMatrix<f64>,
    /// Expected returns.
    pub mu: DVector<f64>,
    /// Risk-neutral rate.
    pub rc: f64,
    /// Rate multiplier per asset.
    pub h: DVector<f64>,
    /// `mu + rc*h`.
    pub psi: DVector<f64>,
    /// Sign-class vector.
    pub eta: DVector<f64>,
    /// Scenario returns, m x n, row j = b_j.
    pub scenarios: DMatrix<f64>,
    /// Excess scenario returns, m x n, row j = b_j - rc*h.
    pub excess: DMatrix<f64>,
    /// Reference weights.
    pub phi: DVector<f64>,
    /// Lower bounds.
    pub lower: DVector<f64>,
    /// Upper bounds.
    pub upper: DVector<f64>,
    /// Variance weight.
    pub lambda1: f64,
    /// Return weight.
    pub lambda2: f64,
    /// CVaR weight, `1 - lambda1 - lambda2`.
    pub lambda3: f64,
    /// CVaR confidence level.
    pub beta: f64,
    /// l1 deviation charge.
    pub delta: f64,
    /// Indices with `eta_i > 0` (long-only).
    pub gamma_plus: Vec<usize>,
    /// Indices with `eta_i < 0` (short-only).
    pub gamma_minus: Vec<usize>,
    /// Indices with `eta_i = 0` (free sign).
    pub gamma_zero: Vec<usize>,
}

/// Portfolio metrics reported for a weight vector.
#[derive(Debug, Clone, Serialize)]
pub struct Metrics {
    /// Expected adjusted return `Psi'x`.
    pub ret: f64,
    /// Variance `x'Ax`.
    pub risk: f64,
    /// Ex-ante Sharpe ratio `(mu'x - rc)/sqrt(risk)`, 0 when risk < 1e-16.
    pub sharpe: f64,
    /// Optimal CVaR of the scenario losses `-d_j'x`.
    pub cvar: f64,
    /// Objective value at the CVaR-optimal gamma.
    pub objective_f: f64,
    /// Number of weights with `|x_i| > 1e-9`.
    pub cardinality: usize,
}

/// Validation failures for [`build_problem`].
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{what}: expected length {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("problem needs at least one asset and one scenario")]
    Empty,
    #[error("lower bound must be strictly below upper bound at index {index}")]
    BoundsOrder { index: usize },
    #[error("lambda1, lambda2 must be >= 0 with lambda1 + lambda2 < 1 (lambda3 = {lambda3})")]
    LambdaRange { lambda3: f64 },
    #[error("beta must lie in (0,1), got {0}")]
    BetaRange(f64),
    #[error("delta must be >= 0, got {0}")]
    DeltaRange(f64),
    #[error("rc must be >= 0, got {0}")]
    RcRange(f64),
    #[error("k must satisfy 1 <= k <= n, got k={k}, n={n}")]
    CardinalityRange { k: usize, n: usize },
    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },
    #[error("covariance is not PSD: min eigenvalue {min_eig:.3e} < -1e-10")]
    NotPsd { min_eig: f64 },
}

fn check_len(
    what: &'static str,
    got: usize,
    expected: usize,
) -> Result<(), ModelError> {
    if got != expected {
        return Err(ModelError::DimensionMismatch {
            what,
            expected,
            got,
        });
    }
    Ok(())
}

fn check_finite(what: &'static str, values: &[f64]) -> Result<(), ModelError> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite { what });
    }
    Ok(())
}

/// Validates raw inputs and derives `Psi`, `d_j`, and the sign classes.
///
/// The covariance is symmetrized as `(A + A')/2`; an eigenvalue in
/// `[-1e-10, 0)` is clipped to PSD by adding `-min_eig * I`, anything
/// lower is rejected.
pub fn build_problem(data: ProblemData) -> Result<ProblemInstance, ModelError> {
    let n = data.mu.len();
    let m = data.scenarios.len();
    if n == 0 || m == 0 {
        return Err(ModelError::Empty);
    }

    check_len("covariance rows", data.covariance.len(), n)?;
    for row in &data.covariance {
        check_len("covariance columns", row.len(), n)?;
        check_finite("covariance", row)?;
    }
    check_finite("mu", &data.mu)?;
    for row in &data.scenarios {
        check_len("scenario row", row.len(), n)?;
        check_finite("scenarios", row)?;
    }
    check_len("lower", data.lower.len(), n)?;
    check_len("upper", data.upper.len(), n)?;
    check_finite("lower", &data.lower)?;
    check_finite("upper", &data.upper)?;

    let h = data.h.unwrap_or_else(|| vec![1.0; n]);
    check_len("h", h.len(), n)?;
    check_finite("h", &h)?;
    let eta = data.eta.unwrap_or_else(|| data.mu.clone());
    check_len("eta", eta.len(), n)?;
    check_finite("eta", &eta)?;
    let phi = data.phi.unwrap_or_else(|| vec![0.0; n]);
    check_len("phi", phi.len(), n)?;
    check_finite("phi", &phi)?;

    for i in 0..n {
        if data.lower[i] >= data.upper[i] {
            return Err(ModelError::BoundsOrder { index: i });
        }
    }
    let lambda3 = 1.0 - data.lambda1 - data.lambda2;
    if data.lambda1 < 0.0 || data.lambda2 < 0.0 || lambda3 <= 0.0 {
        return Err(ModelError::LambdaRange { lambda3 });
    }
    if !(data.beta > 0.0 && data.beta < 1.0) {
        return Err(ModelError::BetaRange(data.beta));
    }
    if data.delta < 0.0 {
        return Err(ModelError::DeltaRange(data.delta));
    }
    if data.rc < 0.0 {
        return Err(ModelError::RcRange(data.rc));
    }
    if data.k < 1 || data.k > n {
        return Err(ModelError::CardinalityRange { k: data.k, n });
    }

    let raw = DMatrix::from_fn(n, n, |i, j| data.covariance[i][j]);
    let mut covariance = (&raw + raw.transpose()) * 0.5;
    let min_eig = covariance
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if min_eig < -1e-10 {
        return Err(ModelError::NotPsd { min_eig });
    }
    if min_eig < 0.0 {
        for i in 0..n {
            covariance[(i, i)] -= min_eig;
        }
    }

    let mu = DVector::from_vec(data.mu);
    let h = DVector::from_vec(h);
    let psi = &mu + &h * data.rc;
    let eta = DVector::from_vec(eta);
    let scenarios = DMatrix::from_fn(m, n, |j, i| data.scenarios[j][i]);
    let mut excess = scenarios.clone();
    for j in 0..m {
        for i in 0..n {
            excess[(j, i)] -= data.rc * h[i];
        }
    }

    let mut gamma_plus = Vec::new();
    let mut gamma_minus = Vec::new();
    let mut gamma_zero = Vec::new();
    for i in 0..n {
        if eta[i] > 0.0 {
            gamma_plus.push(i);
        } else if eta[i] < 0.0 {
            gamma_minus.push(i);
        } else {
            gamma_zero.push(i);
        }
    }

    Ok(ProblemInstance {
        n,
        m,
        k: data.k,
        covariance,
        mu,
        rc: data.rc,
        h,
        psi,
        eta,
        scenarios,
        excess,
        phi: DVector::from_vec(phi),
        lower: DVector::from_vec(data.lower),
        upper: DVector::from_vec(data.upper),
        lambda1: data.lambda1,
        lambda2: data.lambda2,
        lambda3,
        beta: data.beta,
        delta: data.delta,
        gamma_plus,
        gamma_minus,
        gamma_zero,
    })
}

impl ProblemInstance {
    /// CVaR averaging weight `1/(m(1-beta))`.
    pub fn cvar_weight(&self) -> f64 {
        1.0 / (self.m as f64 * (1.0 - self.beta))
    }

    /// Scenario losses `-d_j'x`, length m.
    pub fn losses(&self, x: &DVector<f64>) -> DVector<f64> {
        -(&self.excess * x)
    }

    /// Rockafellar-Uryasev CVaR expression at a fixed `gamma`.
    pub fn cvar_expression(&self, losses: &DVector<f64>, gamma: f64) -> f64 {
        let hinge: f64 = losses.iter().map(|l| (l - gamma).max(0.0)).sum();
        gamma + self.cvar_weight() * hinge
    }
}

/// Full objective `f(x, gamma)`; see the module docs for the formula.
pub fn objective_f(instance: &ProblemInstance, x: &DVector<f64>, gamma: f64) -> f64 {
    let quad = instance.lambda1 * (x.transpose() * &instance.covariance * x)[(0, 0)];
    let l1: f64 = (x - &instance.phi).iter().map(|v| v.abs()).sum();
    let ret_term = instance.lambda2 * (instance.psi.dot(x) - instance.delta * l1);
    let losses = instance.losses(x);
    quad - ret_term + instance.lambda3 * instance.cvar_expression(&losses, gamma)
}

/// Minimizes the CVaR expression over `gamma` and returns `(gamma*, min)`.
///
/// The expression is piecewise linear convex in `gamma`, so the minimum
/// sits at one of the m+1 breakpoints `{0} U {-d_j'x}`; candidates are
/// scanned in ascending order and the smallest minimizer is returned.
pub fn cvar_optimal(instance: &ProblemInstance, x: &DVector<f64>) -> (f64, f64) {
    let losses = instance.losses(x);
    let mut candidates: Vec<f64> = losses.iter().cloned().collect();
    candidates.push(0.0);
    candidates.sort_by(|a, b| a.total_cmp(b));

    let mut best_gamma = candidates[0];
    let mut best_value = instance.cvar_expression(&losses, best_gamma);
    for &gamma in &candidates[1..] {
        let value = instance.cvar_expression(&losses, gamma);
        if value < best_value {
            best_value = value;
            best_gamma = gamma;
        }
    }
    (best_gamma, best_value)
}

/// Evaluates reporting metrics at `x`; see [`Metrics`].
pub fn portfolio_metrics(instance: &ProblemInstance, x: &DVector<f64>) -> Metrics {
    let ret = instance.psi.dot(x);
    let risk = (x.transpose() * &instance.covariance * x)[(0, 0)];
    let (gamma_star, cvar) = cvar_optimal(instance, x);
    let sharpe = if risk < 1e-16 {
        0.0
    } else {
        (instance.mu.dot(x) - instance.rc) / risk.sqrt()
    };
    let cardinality = x.iter().filter(|v| v.abs() > CARDINALITY_TOL).count();
    Metrics {
        ret,
        risk,
        sharpe,
        cvar,
        objective_f: objective_f(instance, x, gamma_star),
        cardinality,
    }
}

/// Relative gap `|f_ref - f_alg| / (|f_ref| + 1)` between a reference
/// value and an algorithm's value.
///
/// # Panics
/// Panics if either input is non-finite.
pub fn gap(f_ref: f64, f_alg: f64) -> f64 {
    assert!(
        f_ref.is_finite() && f_alg.is_finite(),
        "gap requires finite inputs, got ({f_ref}, {f_alg})"
    );
    (f_ref - f_alg).abs() / (f_ref.abs() + 1.0)
}
