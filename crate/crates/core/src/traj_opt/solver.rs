//! Augmented-Lagrangian outer loop with a damped-Newton inner minimizer.
//!
//! The collocation problems this solver sees are smooth programs of a few
//! hundred variables whose constraints are affine or sums of squared affine
//! expressions, so exact dense Hessians are cheap; a regularized Newton step
//! with Armijo backtracking converges in a handful of iterations where
//! quasi-Newton methods crawl on the penalty ill-conditioning. Everything is
//! deterministic.

/// Dense symmetric matrix stored row-major.
pub struct DenseMat {
    pub n: usize,
    pub data: Vec<f64>,
}

impl DenseMat {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] += v;
    }
    /// Adds w · g gᵀ for a sparse vector g.
    pub fn add_outer(&mut self, g: &[(usize, f64)], w: f64) {
        for &(i, a) in g {
            for &(j, b) in g {
                self.data[i * self.n + j] += w * a * b;
            }
        }
    }
    fn reset(&mut self) {
        self.data.fill(0.0);
    }
}

/// In-place Cholesky factorization; returns false if not positive definite.
fn cholesky(a: &mut [f64], n: usize) -> bool {
    for k in 0..n {
        let mut d = a[k * n + k];
        for j in 0..k {
            d -= a[k * n + j] * a[k * n + j];
        }
        if d <= 0.0 || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        a[k * n + k] = d;
        for i in k + 1..n {
            let mut s = a[i * n + k];
            for j in 0..k {
                s -= a[i * n + j] * a[k * n + j];
            }
            a[i * n + k] = s / d;
        }
    }
    true
}

fn cholesky_solve(l: &[f64], n: usize, rhs: &mut [f64]) {
    for i in 0..n {
        let mut s = rhs[i];
        for j in 0..i {
            s -= l[i * n + j] * rhs[j];
        }
        rhs[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = rhs[i];
        for j in i + 1..n {
            s -= l[j * n + i] * rhs[j];
        }
        rhs[i] = s / l[i * n + i];
    }
}

/// A smooth NLP: minimize `objective` subject to `eq(x) = 0`, `ineq(x) <= 0`.
pub trait SmoothProblem {
    fn n_vars(&self) -> usize;
    fn n_eq(&self) -> usize;
    fn n_ineq(&self) -> usize;
    fn objective(&self, x: &[f64]) -> f64;
    /// Writes the objective gradient into `g` (overwrites).
    fn objective_grad(&self, x: &[f64], g: &mut [f64]);
    fn eval_eq(&self, x: &[f64], out: &mut [f64]);
    fn eval_ineq(&self, x: &[f64], out: &mut [f64]);
    /// Accumulates `sum_i w[i] * grad(eq_i)(x)` into `g`.
    fn eq_grad_accum(&self, x: &[f64], w: &[f64], g: &mut [f64]);
    /// Accumulates `sum_i w[i] * grad(ineq_i)(x)` into `g`.
    fn ineq_grad_accum(&self, x: &[f64], w: &[f64], g: &mut [f64]);
    /// Adds the objective Hessian into `h`.
    fn objective_hessian_accum(&self, x: &[f64], h: &mut DenseMat);
    /// For each equality i adds `w[i]·∇²c_i + rho[i]·∇c_i ∇c_iᵀ` into `h`.
    fn eq_hessian_accum(&self, x: &[f64], w: &[f64], rho: &[f64], h: &mut DenseMat);
    /// Same for inequalities.
    fn ineq_hessian_accum(&self, x: &[f64], w: &[f64], rho: &[f64], h: &mut DenseMat);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Feasible,
    Infeasible,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub x: Vec<f64>,
    pub objective: f64,
    pub max_violation: f64,
    pub stationarity: f64,
    /// Total inner (Newton) iterations across all outer iterations.
    pub iterations: u32,
    pub outer_iterations: u32,
    pub status: SolveStatus,
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub feas_tol: f64,
    pub stat_tol: f64,
    pub max_outer: u32,
    pub max_inner: u32,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    pub max_penalty: f64,
    /// Consecutive outer iterations without meaningful violation progress
    /// before declaring the problem infeasible.
    pub stall_limit: u32,
    /// Stall counting starts only once the penalty reached this level, so a
    /// still-ramping penalty is not mistaken for infeasibility.
    pub stall_penalty_min: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            feas_tol: 1e-6,
            stat_tol: 1e-4,
            max_outer: 40,
            max_inner: 40,
            initial_penalty: 1e3,
            penalty_growth: 10.0,
            max_penalty: 1e9,
            stall_limit: 3,
            stall_penalty_min: 1e7,
        }
    }
}

struct AugmentedState {
    lambda_eq: Vec<f64>,
    mu_ineq: Vec<f64>,
    rho: f64,
}

struct Workspace {
    c_eq: Vec<f64>,
    c_ineq: Vec<f64>,
    w_eq: Vec<f64>,
    w_ineq: Vec<f64>,
    rho_eq: Vec<f64>,
    rho_ineq: Vec<f64>,
    grad: Vec<f64>,
    hess: DenseMat,
    factor: Vec<f64>,
    dir: Vec<f64>,
}

impl Workspace {
    fn new(n: usize, m_eq: usize, m_ineq: usize) -> Self {
        Self {
            c_eq: vec![0.0; m_eq],
            c_ineq: vec![0.0; m_ineq],
            w_eq: vec![0.0; m_eq],
            w_ineq: vec![0.0; m_ineq],
            rho_eq: vec![0.0; m_eq],
            rho_ineq: vec![0.0; m_ineq],
            grad: vec![0.0; n],
            hess: DenseMat::zeros(n),
            factor: vec![0.0; n * n],
            dir: vec![0.0; n],
        }
    }
}

/// Value and gradient of the augmented Lagrangian at `x`; fills the weight
/// vectors used by gradient and Hessian accumulation.
fn augmented<P: SmoothProblem>(p: &P, st: &AugmentedState, x: &[f64], ws: &mut Workspace) -> f64 {
    let mut val = p.objective(x);
    p.objective_grad(x, &mut ws.grad);
    p.eval_eq(x, &mut ws.c_eq);
    p.eval_ineq(x, &mut ws.c_ineq);
    for i in 0..ws.c_eq.len() {
        let c = ws.c_eq[i];
        val += st.lambda_eq[i] * c + 0.5 * st.rho * c * c;
        ws.w_eq[i] = st.lambda_eq[i] + st.rho * c;
        ws.rho_eq[i] = st.rho;
    }
    for i in 0..ws.c_ineq.len() {
        let c = ws.c_ineq[i];
        let t = st.mu_ineq[i] + st.rho * c;
        if t > 0.0 {
            val += (t * t - st.mu_ineq[i] * st.mu_ineq[i]) / (2.0 * st.rho);
            ws.w_ineq[i] = t;
            ws.rho_ineq[i] = st.rho;
        } else {
            val -= st.mu_ineq[i] * st.mu_ineq[i] / (2.0 * st.rho);
            ws.w_ineq[i] = 0.0;
            ws.rho_ineq[i] = 0.0;
        }
    }
    p.eq_grad_accum(x, &ws.w_eq, &mut ws.grad);
    p.ineq_grad_accum(x, &ws.w_ineq, &mut ws.grad);
    val
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, &x| m.max(x.abs()))
}

fn max_violation(c_eq: &[f64], c_ineq: &[f64]) -> f64 {
    let e = c_eq.iter().fold(0.0f64, |m, &c| m.max(c.abs()));
    let i = c_ineq.iter().fold(0.0f64, |m, &c| m.max(c.max(0.0)));
    e.max(i)
}

/// Damped-Newton minimization of the augmented Lagrangian from `x`.
fn newton_inner<P: SmoothProblem>(
    p: &P,
    st: &AugmentedState,
    x: &mut Vec<f64>,
    tol: f64,
    max_iter: u32,
    ws: &mut Workspace,
) -> u32 {
    let n = x.len();
    let mut val = augmented(p, st, x, ws);
    let mut iters = 0;
    let mut damping = 0.0f64;
    while iters < max_iter {
        if inf_norm(&ws.grad) <= tol {
            break;
        }
        // Assemble the exact augmented Hessian.
        ws.hess.reset();
        p.objective_hessian_accum(x, &mut ws.hess);
        p.eq_hessian_accum(x, &ws.w_eq, &ws.rho_eq, &mut ws.hess);
        p.ineq_hessian_accum(x, &ws.w_ineq, &ws.rho_ineq, &mut ws.hess);

        let g0 = ws.grad.clone();
        let v0 = val;
        let mut accepted = false;
        // Regularize until the factorization succeeds and the step descends.
        for _ in 0..18 {
            ws.factor.copy_from_slice(&ws.hess.data);
            if damping > 0.0 {
                for k in 0..n {
                    ws.factor[k * n + k] += damping;
                }
            }
            if !cholesky(&mut ws.factor, n) {
                damping = (damping * 10.0).max(1e-8);
                continue;
            }
            for k in 0..n {
                ws.dir[k] = -g0[k];
            }
            cholesky_solve(&ws.factor, n, &mut ws.dir);
            let dir_deriv: f64 = ws.dir.iter().zip(&g0).map(|(d, g)| d * g).sum();
            if dir_deriv >= 0.0 {
                damping = (damping * 10.0).max(1e-8);
                continue;
            }
            // Armijo backtracking.
            let x0 = x.clone();
            let mut step = 1.0;
            for _ in 0..30 {
                for k in 0..n {
                    x[k] = x0[k] + step * ws.dir[k];
                }
                let v = augmented(p, st, x, ws);
                if v <= v0 + 1e-4 * step * dir_deriv && v.is_finite() {
                    val = v;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if accepted {
                damping = (damping / 10.0).max(0.0);
                if damping < 1e-12 {
                    damping = 0.0;
                }
                break;
            }
            x.copy_from_slice(&x0);
            val = augmented(p, st, x, ws);
            damping = (damping * 10.0).max(1e-8);
        }
        iters += 1;
        if !accepted {
            break;
        }
    }
    iters
}

/// Solves a smooth NLP with the augmented-Lagrangian method.
pub fn solve<P: SmoothProblem>(p: &P, x0: Vec<f64>, opts: &SolverOptions) -> SolveResult {
    let n = p.n_vars();
    assert_eq!(x0.len(), n, "initial point dimension mismatch");
    let mut x = x0;
    let mut st = AugmentedState {
        lambda_eq: vec![0.0; p.n_eq()],
        mu_ineq: vec![0.0; p.n_ineq()],
        rho: opts.initial_penalty,
    };
    let mut ws = Workspace::new(n, p.n_eq(), p.n_ineq());

    let mut total_inner = 0;
    let mut prev_viol = f64::INFINITY;
    let mut stall = 0u32;

    // Stationarity is measured relative to the objective gradient scale.
    let grad_scale = |p: &P, x: &[f64], g: &mut Vec<f64>| -> f64 {
        p.objective_grad(x, g);
        inf_norm(g).max(1.0)
    };

    for outer in 0..opts.max_outer {
        let scale = {
            let mut g = vec![0.0; n];
            grad_scale(p, &x, &mut g)
        };
        let inner_tol = scale * 0.5 * opts.stat_tol;
        total_inner += newton_inner(p, &st, &mut x, inner_tol, opts.max_inner, &mut ws);
        let viol = max_violation(&ws.c_eq, &ws.c_ineq);
        let stat = {
            let mut g = vec![0.0; n];
            let scale = grad_scale(p, &x, &mut g);
            augmented(p, &st, &x, &mut ws);
            inf_norm(&ws.grad) / scale
        };
        if viol <= opts.feas_tol && stat <= opts.stat_tol {
            return SolveResult {
                objective: p.objective(&x),
                max_violation: viol,
                stationarity: stat,
                iterations: total_inner,
                outer_iterations: outer + 1,
                status: SolveStatus::Feasible,
                x,
            };
        }
        // Violation-progress bookkeeping for the infeasibility heuristic.
        if viol > opts.feas_tol && st.rho >= opts.stall_penalty_min {
            if viol > prev_viol * 0.99 {
                stall += 1;
            } else {
                stall = 0;
            }
            if stall >= opts.stall_limit {
                return SolveResult {
                    objective: p.objective(&x),
                    max_violation: viol,
                    stationarity: stat,
                    iterations: total_inner,
                    outer_iterations: outer + 1,
                    status: SolveStatus::Infeasible,
                    x,
                };
            }
        }
        // Multiplier updates; the penalty only grows while the constraints
        // are genuinely violated.
        for i in 0..ws.c_eq.len() {
            st.lambda_eq[i] += st.rho * ws.c_eq[i];
        }
        for i in 0..ws.c_ineq.len() {
            st.mu_ineq[i] = (st.mu_ineq[i] + st.rho * ws.c_ineq[i]).max(0.0);
        }
        if viol > opts.feas_tol && viol > 0.25 * prev_viol {
            st.rho = (st.rho * opts.penalty_growth).min(opts.max_penalty);
        }
        prev_viol = viol;
    }
    let viol = {
        p.eval_eq(&x, &mut ws.c_eq);
        p.eval_ineq(&x, &mut ws.c_ineq);
        max_violation(&ws.c_eq, &ws.c_ineq)
    };
    let stat = {
        let mut g = vec![0.0; n];
        let scale = grad_scale(p, &x, &mut g);
        augmented(p, &st, &x, &mut ws);
        inf_norm(&ws.grad) / scale
    };
    SolveResult {
        objective: p.objective(&x),
        max_violation: viol,
        stationarity: stat,
        iterations: total_inner,
        outer_iterations: opts.max_outer,
        status: SolveStatus::MaxIterations,
        x,
    }
}
