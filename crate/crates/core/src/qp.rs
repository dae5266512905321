//! Deterministic dense convex QP solver.
//!
//! Solves
//!
//! ```text
//! min  (1/2) u'Qu + c'u
//! s.t. E u = b,   G u <= h,   lo <= u <= up
//! ```
//!
//! with `Q` symmetric PSD, by a Mehrotra predictor-corrector interior
//! point method on the slack form `Gu + s = h, s >= 0`. Bounds are folded
//! into inequality rows internally. The solve is deterministic: identical
//! inputs produce identical outputs bit-for-bit on one platform.
//!
//! Numerical policy:
//! - Inputs are normalized by `scale = max(1, max|Q|, ||c||_inf)` before
//!   solving, so the returned point is exactly invariant under positive
//!   rescaling of `(Q, c)`. Residuals and tolerances refer to the
//!   normalized problem; [`kkt_residual_qp`] recomputes them on the
//!   problem as given.
//! - `Q` is regularized by `+1e-10 I` when its smallest eigenvalue is
//!   below 1e-12 (detected via a Cholesky probe on the normalized matrix).
//! - A merit function `mu + ||r_primal||_inf + ||r_dual||_inf` is forced
//!   nonincreasing by step backtracking; `debug_monotone` asserts it.
//!
//! Variables that carry no quadratic coupling, appear in no equality row,
//! and touch at most one inequality row apiece (the CVaR epigraph `t_j`
//! block) are eliminated from each Newton solve through a diagonal Schur
//! complement, which keeps per-iteration cost at `O(m n^2)` instead of
//! `O((n+m)^3)` for scenario-heavy problems.

use nalgebra::{DMatrix, DVector};

/// Infinity bound marker for [`QpProblem::set_bounds`].
pub const UNBOUNDED: f64 = f64::INFINITY;

/// A convex QP in the form documented at the module level.
///
/// `q` and `c` are public for direct assembly; constraint rows are added
/// through the builder methods, which keep rows sparse.
#[derive(Debug, Clone)]
pub struct QpProblem {
    /// Number of variables.
    n: usize,
    /// Symmetric PSD quadratic term (the objective uses `(1/2) u'Qu`).
    pub q: DMatrix<f64>,
    /// Linear term.
    pub c: DVector<f64>,
    eq_rows: Vec<SparseRow>,
    ineq_rows: Vec<SparseRow>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Debug, Clone)]
struct SparseRow {
    entries: Vec<(usize, f64)>,
    rhs: f64,
}

/// Solver outcome classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    /// All three KKT residuals of the normalized problem are <= tol.
    Optimal,
    /// Iteration cap reached before certification.
    MaxIter,
    /// Equality system inconsistent with the bounds, or contradictory
    /// bounds, or primal residual stalled above 1e-3.
    Infeasible,
}

/// Primal-dual solution with certified residuals.
#[derive(Debug, Clone)]
pub struct QpSolution {
    /// Primal point.
    pub u: DVector<f64>,
    /// Multipliers for the equality rows (free sign).
    pub eq_duals: DVector<f64>,
    /// Multipliers for the user inequality rows (>= 0).
    pub ineq_duals: DVector<f64>,
    /// Multipliers for active lower bounds (>= 0), length n.
    pub lower_duals: DVector<f64>,
    /// Multipliers for active upper bounds (>= 0), length n.
    pub upper_duals: DVector<f64>,
    /// Objective `(1/2) u'Qu + c'u` at `u`.
    pub objective: f64,
    /// Infinity norm of the primal constraint violation.
    pub primal_residual: f64,
    /// Infinity norm of the stationarity residual (normalized problem).
    pub dual_residual: f64,
    /// Largest complementarity product `s_i z_i`.
    pub complementarity_residual: f64,
    /// Interior-point iterations performed.
    pub iterations: usize,
    /// Outcome classification.
    pub status: QpStatus,
}

/// Tuning knobs for [`solve_qp_with`].
#[derive(Debug, Clone)]
pub struct QpOptions {
    /// Residual tolerance (normalized problem). Default 1e-8.
    pub tol: f64,
    /// Iteration cap. Default 20000.
    pub max_iter: usize,
    /// Assert the merit function never increases (debug runs).
    pub debug_monotone: bool,
    /// Additive shift on the initial slack/dual interior point; exposed so
    /// tests can verify independence from the starting point.
    pub start_shift: f64,
}

impl Default for QpOptions {
    fn default() -> Self {
        QpOptions {
            tol: 1e-8,
            max_iter: 20_000,
            debug_monotone: false,
            start_shift: 0.0,
        }
    }
}

impl QpProblem {
    /// Empty problem on `n` variables: zero objective, no constraints,
    /// free bounds.
    pub fn new(n: usize) -> Self {
        QpProblem {
            n,
            q: DMatrix::zeros(n, n),
            c: DVector::zeros(n),
            eq_rows: Vec::new(),
            ineq_rows: Vec::new(),
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    /// Number of variables.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Adds the equality row `sum entries_i * u_i = rhs`.
    pub fn add_eq_row(&mut self, entries: &[(usize, f64)], rhs: f64) {
        self.check_entries(entries);
        self.eq_rows.push(SparseRow {
            entries: entries.to_vec(),
            rhs,
        });
    }

    /// Adds the inequality row `sum entries_i * u_i <= rhs`.
    pub fn add_ineq_row(&mut self, entries: &[(usize, f64)], rhs: f64) {
        self.check_entries(entries);
        self.ineq_rows.push(SparseRow {
            entries: entries.to_vec(),
            rhs,
        });
    }

    /// Sets box bounds on variable `i`; use `-UNBOUNDED`/`UNBOUNDED` to
    /// leave a side open.
    pub fn set_bounds(&mut self, i: usize, lower: f64, upper: f64) {
        assert!(i < self.n, "bound index {i} out of range for n={}", self.n);
        self.lower[i] = lower;
        self.upper[i] = upper;
    }

    fn check_entries(&self, entries: &[(usize, f64)]) {
        for &(i, _) in entries {
            assert!(i < self.n, "row index {i} out of range for n={}", self.n);
        }
    }
}

/// Solves with default options at the given tolerance and iteration cap.
pub fn solve_qp(problem: &QpProblem, tol: f64, max_iter: usize) -> QpSolution {
    solve_qp_with(
        problem,
        &QpOptions {
            tol,
            max_iter,
            ..QpOptions::default()
        },
    )
}

/// Recomputes `(r_primal, r_dual, r_comp)` from scratch on the problem
/// exactly as given (no normalization, no regularization), in infinity
/// norms.
pub fn kkt_residual_qp(problem: &QpProblem, solution: &QpSolution) -> (f64, f64, f64) {
    let u = &solution.u;
    let mut r_primal: f64 = 0.0;
    for row in &problem.eq_rows {
        r_primal = r_primal.max((row_dot(row, u) - row.rhs).abs());
    }
    for row in &problem.ineq_rows {
        r_primal = r_primal.max((row_dot(row, u) - row.rhs).max(0.0));
    }
    for i in 0..problem.n {
        r_primal = r_primal.max(problem.lower[i] - u[i]).max(u[i] - problem.upper[i]);
    }
    r_primal = r_primal.max(0.0);

    let mut grad = &problem.q * u + &problem.c;
    for (row, &dual) in problem.eq_rows.iter().zip(solution.eq_duals.iter()) {
        for &(i, v) in &row.entries {
            grad[i] += dual * v;
        }
    }
    for (row, &dual) in problem.ineq_rows.iter().zip(solution.ineq_duals.iter()) {
        for &(i, v) in &row.entries {
            grad[i] += dual * v;
        }
    }
    for i in 0..problem.n {
        grad[i] += solution.upper_duals[i] - solution.lower_duals[i];
    }
    let r_dual = grad.amax();

    let mut r_comp: f64 = 0.0;
    for (row, &dual) in problem.ineq_rows.iter().zip(solution.ineq_duals.iter()) {
        r_comp = r_comp.max((dual * (problem.rhs_slack(row, u))).abs());
    }
    for i in 0..problem.n {
        if problem.lower[i].is_finite() {
            r_comp = r_comp.max((solution.lower_duals[i] * (u[i] - problem.lower[i])).abs());
        }
        if problem.upper[i].is_finite() {
            r_comp = r_comp.max((solution.upper_duals[i] * (problem.upper[i] - u[i])).abs());
        }
    }
    (r_primal, r_dual, r_comp)
}

impl QpProblem {
    fn rhs_slack(&self, row: &SparseRow, u: &DVector<f64>) -> f64 {
        row.rhs - row_dot(row, u)
    }
}

fn row_dot(row: &SparseRow, u: &DVector<f64>) -> f64 {
    row.entries.iter().map(|&(i, v)| v * u[i]).sum()
}

/// Which original constraint an internal inequality row came from.
#[derive(Clone, Copy)]
enum RowOrigin {
    User(usize),
    Lower(usize),
    Upper(usize),
}

/// Compiled internal form: normalized objective, all inequalities (user
/// rows then bound rows) in one list, and the local-variable partition.
struct Compiled {
    nv: usize,
    scale: f64,
    /// Normalized, regularized quadratic term.
    q: DMatrix<f64>,
    /// Normalized linear term.
    c: DVector<f64>,
    eq: Vec<SparseRow>,
    ineq: Vec<SparseRow>,
    origin: Vec<RowOrigin>,
    /// Variables eligible for diagonal Schur elimination.
    local: Vec<bool>,
}

fn compile(problem: &QpProblem) -> Compiled {
    let nv = problem.n;
    let max_q = problem.q.amax();
    let max_c = problem.c.amax();
    // Pure ratio normalization keeps the argmin invariant under objective
    // scaling; guard only the all-zero objective.
    let raw_scale = max_q.max(max_c);
    let scale = if raw_scale > 0.0 && raw_scale.is_finite() {
        raw_scale
    } else {
        1.0
    };

    let mut q = &problem.q / scale;
    let c = &problem.c / scale;

    // Regularize unless the Cholesky probe certifies lambda_min > ~1e-12.
    let needs_reg = (0..nv).any(|i| q[(i, i)] <= 1e-12) || {
        let mut shifted = q.clone();
        for i in 0..nv {
            shifted[(i, i)] -= 1e-12;
        }
        shifted.cholesky().is_none()
    };
    if needs_reg {
        for i in 0..nv {
            q[(i, i)] += 1e-10;
        }
    }

    let mut ineq = Vec::new();
    let mut origin = Vec::new();
    for (idx, row) in problem.ineq_rows.iter().enumerate() {
        ineq.push(row.clone());
        origin.push(RowOrigin::User(idx));
    }
    for i in 0..nv {
        if problem.lower[i].is_finite() {
            ineq.push(SparseRow {
                entries: vec![(i, -1.0)],
                rhs: -problem.lower[i],
            });
            origin.push(RowOrigin::Lower(i));
        }
        if problem.upper[i].is_finite() {
            ineq.push(SparseRow {
                entries: vec![(i, 1.0)],
                rhs: problem.upper[i],
            });
            origin.push(RowOrigin::Upper(i));
        }
    }

    // A variable is local when it has no quadratic coupling, sits in no
    // equality row, and no inequality row ties it to another local
    // candidate; such variables admit a diagonal Schur block.
    let mut local = vec![true; nv];
    for i in 0..nv {
        for j in 0..nv {
            if i != j && q[(i, j)] != 0.0 {
                local[i] = false;
                break;
            }
        }
    }
    for row in &problem.eq_rows {
        for &(i, _) in &row.entries {
            local[i] = false;
        }
    }
    // Each inequality row may tie at most one local, else the Schur block
    // is not diagonal. Demote greedily: in a conflicted row drop the
    // candidate appearing in the most inequality rows (ties to the lowest
    // index), so a shared variable is demoted before its row-mates.
    loop {
        let mut appearances = vec![0usize; nv];
        for row in &ineq {
            for &(i, _) in &row.entries {
                if local[i] {
                    appearances[i] += 1;
                }
            }
        }
        let mut demote = None;
        for row in &ineq {
            let locals_in_row: Vec<usize> = row
                .entries
                .iter()
                .map(|&(i, _)| i)
                .filter(|&i| local[i])
                .collect();
            if locals_in_row.len() > 1 {
                let pick = locals_in_row
                    .iter()
                    .copied()
                    .max_by(|&a, &b| appearances[a].cmp(&appearances[b]).then(b.cmp(&a)))
                    .unwrap();
                demote = Some(pick);
                break;
            }
        }
        match demote {
            Some(i) => local[i] = false,
            None => break,
        }
    }

    Compiled {
        nv,
        scale,
        q,
        c,
        eq: problem.eq_rows.clone(),
        ineq,
        origin,
        local,
    }
}

/// Presolve: detect contradictory bounds and equality rows whose
/// bound-implied value interval excludes the right-hand side.
fn presolve_infeasible(problem: &QpProblem) -> bool {
    for i in 0..problem.n {
        if problem.lower[i] > problem.upper[i] {
            return true;
        }
    }
    let margin = 1e-9;
    for row in &problem.eq_rows {
        let mut low = 0.0;
        let mut high = 0.0;
        for &(i, v) in &row.entries {
            let (a, b) = (v * problem.lower[i], v * problem.upper[i]);
            low += a.min(b);
            high += a.max(b);
        }
        let slack = margin * (1.0 + row.rhs.abs());
        if low.is_finite() && row.rhs < low - slack {
            return true;
        }
        if high.is_finite() && row.rhs > high + slack {
            return true;
        }
        if row.entries.is_empty() && row.rhs.abs() > slack {
            return true;
        }
    }
    for row in &problem.ineq_rows {
        if row.entries.is_empty() && row.rhs < -margin {
            return true;
        }
        let mut low = 0.0;
        for &(i, v) in &row.entries {
            let (a, b) = (v * problem.lower[i], v * problem.upper[i]);
            low += a.min(b);
        }
        if low.is_finite() && row.rhs < low - margin * (1.0 + row.rhs.abs()) {
            return true;
        }
    }
    false
}

/// Weight ceiling for folding an inequality row into the coupled block.
/// Folding sums `w g g'` into M, so a row's contribution can bury another
/// row's curvature once `w * eps` passes that curvature; rows above the
/// ceiling stay in the factorization as explicit constraint rows instead.
const W_FOLD: f64 = 1e6;

/// Newton KKT solver for one interior-point iteration, with the local
/// block eliminated. Factors once, then solves multiple right-hand sides.
///
/// The partition is per-factorization and weight-aware:
/// - multi-entry rows with `w > W_FOLD` ("stiff" rows) are kept as
///   augmented constraint rows with a `-1/w` diagonal, which preserves
///   their geometry at full precision where folding would round it away;
/// - a compiled local touched by a stiff row is pulled back into the
///   coupled block, because its elimination would run through that row;
/// - single-entry rows fold regardless of weight: a diagonal-only update
///   cannot cancel against other rows.
struct KktFactor<'a> {
    comp: &'a Compiled,
    /// Variables eliminated in this factorization.
    local_idx: Vec<usize>,
    /// Diagonal of the local block.
    local_diag: Vec<f64>,
    /// Coupling column for each local variable (dense over coupled vars).
    local_cols: Vec<DVector<f64>>,
    /// Coupled variable order for this factorization.
    coupled: Vec<usize>,
    /// Inequality rows kept in augmented form.
    stiff: Vec<usize>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl<'a> KktFactor<'a> {
    fn new(comp: &'a Compiled, w: &[f64], reg: f64) -> Self {
        let neq = comp.eq.len();
        let nin = comp.ineq.len();

        let mut is_stiff = vec![false; nin];
        let mut stiff = Vec::new();
        let mut local = comp.local.clone();
        for (r, (row, &wr)) in comp.ineq.iter().zip(w.iter()).enumerate() {
            if wr <= W_FOLD || row.entries.len() < 2 {
                continue;
            }
            is_stiff[r] = true;
            stiff.push(r);
            for &(i, _) in &row.entries {
                local[i] = false;
            }
        }
        let mut local_idx = Vec::new();
        let mut local_pos = vec![usize::MAX; comp.nv];
        let mut coupled = Vec::new();
        let mut coupled_pos = vec![usize::MAX; comp.nv];
        for i in 0..comp.nv {
            if local[i] {
                local_pos[i] = local_idx.len();
                local_idx.push(i);
            } else {
                coupled_pos[i] = coupled.len();
                coupled.push(i);
            }
        }
        let nc = coupled.len();
        let nl = local_idx.len();
        let mut local_diag = vec![reg; nl];
        for (pos, &i) in local_idx.iter().enumerate() {
            local_diag[pos] += comp.q[(i, i)];
        }
        let mut local_cols = vec![DVector::zeros(nc); nl];

        // M = Q + G' W G over the coupled block and the folded rows,
        // accumulating the local couplings separately.
        let mut m = DMatrix::zeros(nc, nc);
        for (a, &ia) in coupled.iter().enumerate() {
            for (b, &ib) in coupled.iter().enumerate() {
                m[(a, b)] = comp.q[(ia, ib)];
            }
        }
        for (r, (row, &wr)) in comp.ineq.iter().zip(w.iter()).enumerate() {
            if is_stiff[r] {
                continue;
            }
            let mut local_in_row: Option<(usize, f64)> = None;
            for &(i, v) in &row.entries {
                if local[i] {
                    local_in_row = Some((local_pos[i], v));
                }
            }
            match local_in_row {
                None => {
                    for &(i, vi) in &row.entries {
                        let a = coupled_pos[i];
                        for &(j, vj) in &row.entries {
                            m[(a, coupled_pos[j])] += wr * vi * vj;
                        }
                    }
                }
                Some((pos, vt)) => {
                    local_diag[pos] += wr * vt * vt;
                    let col = &mut local_cols[pos];
                    for &(i, vi) in &row.entries {
                        if !local[i] {
                            col[coupled_pos[i]] += wr * vt * vi;
                        }
                    }
                    for &(i, vi) in &row.entries {
                        if local[i] {
                            continue;
                        }
                        let a = coupled_pos[i];
                        for &(j, vj) in &row.entries {
                            if !local[j] {
                                m[(a, coupled_pos[j])] += wr * vi * vj;
                            }
                        }
                    }
                }
            }
        }
        // Schur complement of the diagonal local block.
        for pos in 0..nl {
            let d = local_diag[pos];
            let col = &local_cols[pos];
            if col.iter().all(|&v| v == 0.0) {
                continue;
            }
            for a in 0..nc {
                let ca = col[a];
                if ca == 0.0 {
                    continue;
                }
                let f = ca / d;
                for b in 0..nc {
                    m[(a, b)] -= f * col[b];
                }
            }
        }
        // Regularize after the elimination, relative to each diagonal: an
        // absolute shift applied beforehand would be absorbed into the
        // folded terms and lost below their rounding.
        for a in 0..nc {
            m[(a, a)] += reg * (1.0 + m[(a, a)].abs());
        }

        // Augmented system [M  Ec'  Gs'; Ec  -reg I  0; Gs  0  -1/W].
        let ns = stiff.len();
        let dim = nc + neq + ns;
        let mut k = DMatrix::zeros(dim, dim);
        k.view_mut((0, 0), (nc, nc)).copy_from(&m);
        for (r, row) in comp.eq.iter().enumerate() {
            for &(i, v) in &row.entries {
                let a = coupled_pos[i];
                k[(nc + r, a)] = v;
                k[(a, nc + r)] = v;
            }
            k[(nc + r, nc + r)] = -reg;
        }
        for (p, &r) in stiff.iter().enumerate() {
            for &(i, v) in &comp.ineq[r].entries {
                let a = coupled_pos[i];
                k[(nc + neq + p, a)] = v;
                k[(a, nc + neq + p)] = v;
            }
            k[(nc + neq + p, nc + neq + p)] = -1.0 / w[r];
        }

        KktFactor {
            comp,
            local_idx,
            local_diag,
            local_cols,
            coupled,
            stiff,
            lu: k.lu(),
        }
    }

    /// Solves the full Newton system given right-hand sides over all
    /// variables, equality rows, and stiff rows, returning
    /// `(du, dy, dz_stiff)`. `None` means the factorization hit an exactly
    /// singular pivot despite the regularization.
    fn solve(
        &self,
        rhs_u: &DVector<f64>,
        rhs_y: &DVector<f64>,
        rhs_s: &DVector<f64>,
    ) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>)> {
        let comp = self.comp;
        let nc = self.coupled.len();
        let neq = comp.eq.len();
        let ns = self.stiff.len();

        let mut rhs = DVector::zeros(nc + neq + ns);
        for (a, &i) in self.coupled.iter().enumerate() {
            rhs[a] = rhs_u[i];
        }
        // Fold the local rows into the coupled right-hand side.
        for (pos, &i) in self.local_idx.iter().enumerate() {
            let f = rhs_u[i] / self.local_diag[pos];
            let col = &self.local_cols[pos];
            for a in 0..nc {
                rhs[a] -= f * col[a];
            }
        }
        for r in 0..neq {
            rhs[nc + r] = rhs_y[r];
        }
        for p in 0..ns {
            rhs[nc + neq + p] = rhs_s[p];
        }

        // Every variable can be local (diagonal objective, bounds only),
        // leaving an empty coupled system.
        let sol = if rhs.is_empty() { rhs } else { self.lu.solve(&rhs)? };
        let mut du = DVector::zeros(comp.nv);
        for (a, &i) in self.coupled.iter().enumerate() {
            du[i] = sol[a];
        }
        for (pos, &i) in self.local_idx.iter().enumerate() {
            let col = &self.local_cols[pos];
            let mut dot = 0.0;
            for a in 0..nc {
                dot += col[a] * sol[a];
            }
            du[i] = (rhs_u[i] - dot) / self.local_diag[pos];
        }
        let mut dy = DVector::zeros(neq);
        for r in 0..neq {
            dy[r] = sol[nc + r];
        }
        let dz_stiff = DVector::from_fn(ns, |p, _| sol[nc + neq + p]);
        Some((du, dy, dz_stiff))
    }
}

/// Solves a QP with full control over options; see the module docs.
pub fn solve_qp_with(problem: &QpProblem, options: &QpOptions) -> QpSolution {
    if presolve_infeasible(problem) {
        return infeasible_solution(problem);
    }
    let comp = compile(problem);
    if comp.ineq.is_empty() {
        return solve_equality_only(problem, &comp, options);
    }
    interior_point(problem, &comp, options)
}

fn infeasible_solution(problem: &QpProblem) -> QpSolution {
    let n = problem.n;
    QpSolution {
        u: DVector::zeros(n),
        eq_duals: DVector::zeros(problem.eq_rows.len()),
        ineq_duals: DVector::zeros(problem.ineq_rows.len()),
        lower_duals: DVector::zeros(n),
        upper_duals: DVector::zeros(n),
        objective: f64::INFINITY,
        primal_residual: f64::INFINITY,
        dual_residual: f64::INFINITY,
        complementarity_residual: f64::INFINITY,
        iterations: 0,
        status: QpStatus::Infeasible,
    }
}

fn solve_equality_only(problem: &QpProblem, comp: &Compiled, options: &QpOptions) -> QpSolution {
    let nv = comp.nv;
    let neq = comp.eq.len();
    let dim = nv + neq;
    let reg = 1e-13;
    let mut k = DMatrix::zeros(dim, dim);
    k.view_mut((0, 0), (nv, nv)).copy_from(&comp.q);
    for i in 0..nv {
        k[(i, i)] += reg;
    }
    for (r, row) in comp.eq.iter().enumerate() {
        for &(i, v) in &row.entries {
            k[(nv + r, i)] = v;
            k[(i, nv + r)] = v;
        }
        k[(nv + r, nv + r)] = -reg;
    }
    let mut rhs = DVector::zeros(dim);
    for i in 0..nv {
        rhs[i] = -comp.c[i];
    }
    for (r, row) in comp.eq.iter().enumerate() {
        rhs[nv + r] = row.rhs;
    }
    let lu = k.clone().lu();
    let Some(mut sol) = lu.solve(&rhs) else {
        // Dependent equality rows despite the shift: report the zero point
        // with its true residuals rather than panic.
        let zeros = DVector::zeros(nv);
        let duals = DVector::zeros(neq);
        return finish(problem, comp, zeros, duals, &[], 1, options.tol, QpStatus::MaxIter);
    };
    // One iterative refinement pass sharpens the regularized solve.
    let resid = &rhs - &k * &sol;
    if let Some(corr) = lu.solve(&resid) {
        sol += corr;
    }

    let u = DVector::from_fn(nv, |i, _| sol[i]);
    let eq_duals_norm = DVector::from_fn(neq, |r, _| sol[nv + r]);
    finish(problem, comp, u, eq_duals_norm, &[], 1, options.tol, QpStatus::Optimal)
}

/// Builds the public solution from normalized internals, rescaling duals
/// and classifying the status from the certified residuals.
#[allow(clippy::too_many_arguments)]
fn finish(
    problem: &QpProblem,
    comp: &Compiled,
    u: DVector<f64>,
    eq_duals_norm: DVector<f64>,
    z_norm: &[f64],
    iterations: usize,
    tol: f64,
    fallback: QpStatus,
) -> QpSolution {
    let (r_p, r_d, r_c) = normalized_residuals(comp, &u, &eq_duals_norm, z_norm);
    let status = if r_p <= tol && r_d <= tol && r_c <= tol {
        QpStatus::Optimal
    } else {
        fallback
    };

    let n = problem.n;
    let mut ineq_duals = DVector::zeros(problem.ineq_rows.len());
    let mut lower_duals = DVector::zeros(n);
    let mut upper_duals = DVector::zeros(n);
    for (r, &z) in z_norm.iter().enumerate() {
        let v = z * comp.scale;
        match comp.origin[r] {
            RowOrigin::User(i) => ineq_duals[i] = v,
            RowOrigin::Lower(i) => lower_duals[i] = v,
            RowOrigin::Upper(i) => upper_duals[i] = v,
        }
    }
    let objective = 0.5 * (u.transpose() * &problem.q * &u)[(0, 0)] + problem.c.dot(&u);
    QpSolution {
        eq_duals: eq_duals_norm * comp.scale,
        ineq_duals,
        lower_duals,
        upper_duals,
        objective,
        primal_residual: r_p,
        dual_residual: r_d,
        complementarity_residual: r_c,
        iterations,
        status,
        u,
    }
}

/// Residuals of the normalized problem at `(u, y, z)` with slacks implied
/// by `s = h - Gu` for the complementarity term.
fn normalized_residuals(
    comp: &Compiled,
    u: &DVector<f64>,
    y: &DVector<f64>,
    z: &[f64],
) -> (f64, f64, f64) {
    let mut r_p: f64 = 0.0;
    for row in &comp.eq {
        r_p = r_p.max((row_dot(row, u) - row.rhs).abs());
    }
    for row in &comp.ineq {
        r_p = r_p.max(row_dot(row, u) - row.rhs);
    }
    r_p = r_p.max(0.0);

    let mut grad = &comp.q * u + &comp.c;
    for (row, &yi) in comp.eq.iter().zip(y.iter()) {
        for &(i, v) in &row.entries {
            grad[i] += yi * v;
        }
    }
    for (row, &zi) in comp.ineq.iter().zip(z.iter()) {
        for &(i, v) in &row.entries {
            grad[i] += zi * v;
        }
    }
    let r_d = grad.amax();

    let mut r_c: f64 = 0.0;
    for (row, &zi) in comp.ineq.iter().zip(z.iter()) {
        let slack = (row.rhs - row_dot(row, u)).max(0.0);
        r_c = r_c.max((zi * slack).abs());
    }
    (r_p, r_d, r_c)
}

fn interior_point(problem: &QpProblem, comp: &Compiled, options: &QpOptions) -> QpSolution {
    let neq = comp.eq.len();
    let nin = comp.ineq.len();
    let tol = options.tol;

    // Starting point: equality-regularized unconstrained solve, slacks
    // shifted into the interior.
    let w0 = vec![1.0; nin];
    let factor0 = KktFactor::new(comp, &w0, 1.0);
    let rhs_y0 = DVector::from_fn(neq, |r, _| comp.eq[r].rhs);
    let (mut u, mut y, _) = factor0
        .solve(&(-&comp.c), &rhs_y0, &DVector::zeros(0))
        .unwrap_or_else(|| (DVector::zeros(comp.nv), DVector::zeros(neq), DVector::zeros(0)));
    let shift = 1.0 + options.start_shift.max(0.0);
    let mut s = DVector::from_fn(nin, |r, _| {
        (comp.ineq[r].rhs - row_dot(&comp.ineq[r], &u)).max(shift)
    });
    let mut z = DVector::from_element(nin, shift);

    let mut iterations = 0;
    let mut best_rp = f64::INFINITY;
    let mut merit_prev = f64::INFINITY;

    while iterations < options.max_iter {
        // Residuals of the current iterate.
        let mut r_d = &comp.q * &u + &comp.c;
        for (row, &yi) in comp.eq.iter().zip(y.iter()) {
            for &(i, v) in &row.entries {
                r_d[i] += yi * v;
            }
        }
        for (row, &zi) in comp.ineq.iter().zip(z.iter()) {
            for &(i, v) in &row.entries {
                r_d[i] += zi * v;
            }
        }
        let r_p_eq = DVector::from_fn(neq, |r, _| row_dot(&comp.eq[r], &u) - comp.eq[r].rhs);
        let r_g = DVector::from_fn(nin, |r, _| row_dot(&comp.ineq[r], &u) + s[r] - comp.ineq[r].rhs);
        let mu = s.dot(&z) / nin as f64;

        let rp_norm = r_p_eq.amax().max(r_g.amax());
        let rd_norm = r_d.amax();
        let comp_norm = (0..nin).map(|r| s[r] * z[r]).fold(0.0f64, f64::max);
        best_rp = best_rp.min(rp_norm);
        log::trace!(
            "qp it={iterations} mu={mu:.3e} rp={rp_norm:.3e} rd={rd_norm:.3e} comp={comp_norm:.3e}"
        );

        if rp_norm <= tol && rd_norm <= tol && comp_norm <= tol {
            let zs: Vec<f64> = z.iter().cloned().collect();
            return finish(problem, comp, u, y, &zs, iterations, tol, QpStatus::Optimal);
        }
        // Primal residual stalled above 1e-3 with complementarity driven
        // out: no feasible point exists.
        if (mu < 1e-11 && rp_norm > 1e-3) || (iterations > 1000 && best_rp > 1e-3) {
            let mut sol = infeasible_solution(problem);
            sol.iterations = iterations;
            return sol;
        }
        if u.amax() > 1e12 {
            let mut sol = infeasible_solution(problem);
            sol.iterations = iterations;
            return sol;
        }

        // Barrier weights, guarded: a degenerate row with s and z both
        // near zero can produce 0/0. The wide clamp is an overflow guard
        // only: distorting a weight the factorization actually uses
        // desynchronizes the step recovery from the factored system and
        // corrupts the dual equation.
        let w: Vec<f64> = (0..nin)
            .map(|r| {
                let ratio = z[r] / s[r];
                if ratio.is_finite() {
                    ratio.clamp(1e-16, 1e16)
                } else {
                    1e16
                }
            })
            .collect();
        // Scale the regularization with Q only: the barrier weights grow
        // without bound near convergence and only add PSD mass, and a reg
        // tied to them would perturb the step at the order of Q itself.
        let reg = 1e-13 * (1.0 + comp.q.amax());
        let factor = KktFactor::new(comp, &w, reg);

        // Affine predictor: full complementarity target zero. A singular
        // factorization means no usable direction exists at this iterate;
        // stop and report the best certified point instead of panicking.
        let rc_aff = DVector::from_fn(nin, |r, _| s[r] * z[r]);
        let Some((_du_aff, _dz_aff, ds_aff, dza)) = newton_direction(
            comp, &factor, &r_d, &r_p_eq, &r_g, &s, &z, &rc_aff,
        ) else {
            log::trace!("qp stop: singular predictor system at it={iterations}");
            break;
        };
        let alpha_aff = step_length(&s, &ds_aff).min(step_length(&z, &dza));
        let mu_aff = {
            let a = alpha_aff;
            let mut acc = 0.0;
            for r in 0..nin {
                acc += (s[r] + a * ds_aff[r]) * (z[r] + a * dza[r]);
            }
            acc / nin as f64
        };
        let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);

        // Corrector with Mehrotra's second-order term. Each target product
        // is clamped into a wide neighborhood of the central path so an
        // extreme cross term cannot fling the step against the boundary,
        // which jams the line search on degenerate optimal faces.
        let rc_corr = DVector::from_fn(nin, |r, _| {
            let target =
                (sigma * mu - ds_aff[r] * dza[r]).clamp(0.1 * sigma * mu, 10.0 * mu);
            s[r] * z[r] - target
        });
        let Some((du, dy, ds, dz)) = newton_direction(
            comp, &factor, &r_d, &r_p_eq, &r_g, &s, &z, &rc_corr,
        ) else {
            log::trace!("qp stop: singular corrector system at it={iterations}");
            break;
        };
        let alpha0 = (0.995 * step_length(&s, &ds).min(step_length(&z, &dz))).min(1.0);

        // Monotone safeguard on mu + ||r_p|| + ||r_d||. If the corrector
        // direction cannot be accepted, retry with a pure centering step,
        // which rebalances the products and restores progress when strict
        // complementarity fails at the solution.
        let merit_now = mu + rp_norm + rd_norm;
        let step = backtrack(
            comp,
            (&u, &y, &s, &z),
            (&du, &dy, &ds, &dz),
            alpha0,
            merit_now * (1.0 + 1e-12) + 1e-300,
        )
        .or_else(|| {
            let rc_cent = DVector::from_fn(nin, |r, _| s[r] * z[r] - mu);
            let (du, dy, ds, dz) = newton_direction(
                comp, &factor, &r_d, &r_p_eq, &r_g, &s, &z, &rc_cent,
            )?;
            let alpha0 = (0.995 * step_length(&s, &ds).min(step_length(&z, &dz))).min(1.0);
            backtrack(
                comp,
                (&u, &y, &s, &z),
                (&du, &dy, &ds, &dz),
                alpha0,
                merit_now * (1.0 + 1e-9) + 1e-300,
            )
        });
        iterations += 1;
        match step {
            Some((un, yn, sn, zn)) => {
                u = un;
                y = yn;
                s = sn;
                z = zn;
            }
            None => {
                log::trace!("qp stop: line search exhausted at it={iterations}");
                break;
            }
        }
        if options.debug_monotone {
            let merit_new = merit_at(comp, &u, &y, &s, &z);
            assert!(
                merit_new <= merit_prev.min(merit_now) * (1.0 + 1e-9) + 1e-300,
                "merit increased: {merit_new} > {merit_now}"
            );
            merit_prev = merit_new;
        }
    }

    let zs: Vec<f64> = z.iter().cloned().collect();
    finish(problem, comp, u, y, &zs, iterations, tol, QpStatus::MaxIter)
}

/// One Newton solve for the given complementarity right-hand side.
/// Returns `(du, dy, ds, dz)`.
#[allow(clippy::too_many_arguments)]
fn newton_direction(
    comp: &Compiled,
    factor: &KktFactor,
    r_d: &DVector<f64>,
    r_p_eq: &DVector<f64>,
    r_g: &DVector<f64>,
    s: &DVector<f64>,
    z: &DVector<f64>,
    r_c: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)> {
    let nin = comp.ineq.len();
    let mut stiff_of = vec![false; nin];
    for &r in &factor.stiff {
        stiff_of[r] = true;
    }
    let mut rhs_u = -r_d.clone();
    for r in 0..nin {
        if stiff_of[r] {
            continue;
        }
        let coef = (z[r] * r_g[r] - r_c[r]) / s[r];
        for &(i, v) in &comp.ineq[r].entries {
            rhs_u[i] -= coef * v;
        }
    }
    let rhs_y = -r_p_eq.clone();
    // Stiff-row equation: g'du - dz/w = -r_g + r_c/z, all O(1) terms.
    let rhs_s = DVector::from_fn(factor.stiff.len(), |p, _| {
        let r = factor.stiff[p];
        -r_g[r] + r_c[r] / z[r].max(1e-300)
    });
    let (du, dy, dz_stiff) = factor.solve(&rhs_u, &rhs_y, &rhs_s)?;

    let mut ds = DVector::zeros(nin);
    let mut dz = DVector::zeros(nin);
    for r in 0..nin {
        let g_du = comp.ineq[r]
            .entries
            .iter()
            .map(|&(i, v)| v * du[i])
            .sum::<f64>();
        ds[r] = -r_g[r] - g_du;
        dz[r] = (-r_c[r] - z[r] * ds[r]) / s[r];
    }
    for (p, &r) in factor.stiff.iter().enumerate() {
        dz[r] = dz_stiff[p];
    }
    Some((du, dy, ds, dz))
}

/// Largest step in [0, 1e30] keeping `v + alpha dv` strictly positive.
fn step_length(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut alpha = f64::INFINITY;
    for i in 0..v.len() {
        if dv[i] < 0.0 {
            alpha = alpha.min(-v[i] / dv[i]);
        }
    }
    alpha.min(1e30)
}

/// Backtracks `alpha` from `alpha0` until the merit at the stepped point
/// drops below `merit_bound`, returning the accepted point.
type Point = (DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>);

fn backtrack(
    comp: &Compiled,
    cur: (&DVector<f64>, &DVector<f64>, &DVector<f64>, &DVector<f64>),
    dir: (&DVector<f64>, &DVector<f64>, &DVector<f64>, &DVector<f64>),
    alpha0: f64,
    merit_bound: f64,
) -> Option<Point> {
    let mut alpha = alpha0;
    for _ in 0..60 {
        let cand = (
            cur.0 + dir.0 * alpha,
            cur.1 + dir.1 * alpha,
            cur.2 + dir.2 * alpha,
            cur.3 + dir.3 * alpha,
        );
        if merit_at(comp, &cand.0, &cand.1, &cand.2, &cand.3) <= merit_bound {
            return Some(cand);
        }
        alpha *= 0.7;
        if alpha < 1e-10 {
            return None;
        }
    }
    None
}

fn merit_at(
    comp: &Compiled,
    u: &DVector<f64>,
    y: &DVector<f64>,
    s: &DVector<f64>,
    z: &DVector<f64>,
) -> f64 {
    let nin = comp.ineq.len();
    let mut r_d = &comp.q * u + &comp.c;
    for (row, &yi) in comp.eq.iter().zip(y.iter()) {
        for &(i, v) in &row.entries {
            r_d[i] += yi * v;
        }
    }
    for (row, &zi) in comp.ineq.iter().zip(z.iter()) {
        for &(i, v) in &row.entries {
            r_d[i] += zi * v;
        }
    }
    let mut r_p: f64 = 0.0;
    for row in &comp.eq {
        r_p = r_p.max((row_dot(row, u) - row.rhs).abs());
    }
    for (r, row) in comp.ineq.iter().enumerate() {
        r_p = r_p.max((row_dot(row, u) + s[r] - row.rhs).abs());
    }
    let mu = s.dot(z) / nin as f64;
    mu + r_p + r_d.amax()
}
