//! Sparse extended mean-variance-CVaR portfolio optimization.
//!
//! This crate selects a portfolio of at most `k` assets by minimizing a
//! weighted sum of variance, negative expected excess return with an l1
//! deviation charge, and scenario CVaR, subject to budget, box, and
//! per-asset sign constraints:
//!
//! ```text
//! min  lambda1 * x'Ax - lambda2 * (Psi'x - delta*||x - phi||_1)
//!      + lambda3 * CVaR_beta(-d_j'x)
//! s.t. e'x = 1,  L <= x <= U,  sign(eta_i)*x_i >= 0,  ||x||_0 <= k
//! ```
//!
//! The solver is a penalty decomposition: the cardinality, box, and
//! CVaR couplings are split onto auxiliary blocks `y`, `z`, `w` tied to
//! `x` by a quadratic penalty `rho`, each subproblem is minimized in
//! closed form or by the internal QP engine ([`qp`]), and `rho` grows
//! geometrically until the blocks agree ([`solver`]). Ground truth for
//! testing and gap studies comes from exhaustive support enumeration
//! ([`oracle`]). Market data ingestion and scenario simulation live in
//! [`data`].
//!
//! # Example
//!
//! ```
//! use sparse_mv_cvar::model::{build_problem, ProblemData};
//! use sparse_mv_cvar::solver::{run_pd, SolverOptions};
//!
//! // Two assets, two scenarios, long-only, pick one asset.
//! let data = ProblemData {
//!     covariance: vec![vec![0.04, 0.0], vec![0.0, 0.09]],
//!     mu: vec![0.10, 0.12],
//!     scenarios: vec![vec![0.08, 0.15], vec![-0.05, -0.20]],
//!     rc: 0.0,
//!     lambda1: 0.4,
//!     lambda2: 0.3,
//!     beta: 0.5,
//!     delta: 0.0,
//!     k: 1,
//!     lower: vec![0.0, 0.0],
//!     upper: vec![1.0, 1.0],
//!     ..ProblemData::default()
//! };
//! let instance = build_problem(data).unwrap();
//! let report = run_pd(&instance, &SolverOptions::default()).unwrap();
//! let weights = report.x_final;
//! assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-8);
//! assert!(weights.iter().filter(|v| v.abs() > 1e-9).count() <= 1);
//! ```

pub mod data;
pub mod model;
pub mod oracle;
pub mod qp;
pub mod solver;
pub mod subproblems;

pub use model::{build_problem, Metrics, ProblemData, ProblemInstance};
pub use solver::{run_pd, SolveReport, SolveStatus, SolverOptions};

#[cfg(doctest)]
mod book {
    //! Runs every fenced Rust snippet in the guide as a doctest, so the
    //! book cannot drift from the library.
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/penalty-decomposition.md")]
    mod penalty_decomposition {}
    #[doc = include_str!("../../../book/src/subproblems.md")]
    mod subproblems {}
    #[doc = include_str!("../../../book/src/qp-engine.md")]
    mod qp_engine {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
    #[doc = include_str!("../../../book/src/data-and-cli.md")]
    mod data_and_cli {}
}
