//! Augmented-Lagrangian solver for smooth NLPs.
//!
//! Equalities enter through the classical augmented term and inequalities
//! through the squared-hinge (Powell-Hestenes-Rockafellar) form. Each outer
//! iteration minimizes the augmented Lagrangian over the variable box and then
//! either updates the multipliers or raises the penalty, depending on how much
//! the constraint violation decreased.
//!
//! The inner minimization uses projected Newton steps when the problem
//! supplies Lagrangian Hessians and projected L-BFGS otherwise.

mod check;
mod lbfgs;
mod newton;
mod nlp;

use std::io::Write;
use std::time::Instant;

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use check::{check_derivatives, DerivativeCheck};
pub use lbfgs::{InnerResult, InnerStop, Lbfgs};
pub use newton::ProjectedNewton;
pub use nlp::{project, NlpProblem};

use nalgebra::DMatrix;

use nlp::{add_jt_times, inf_norm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerMethod {
    /// Projected Newton with exact Hessians; falls back to L-BFGS when the
    /// problem has none.
    Newton,
    Lbfgs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub kkt_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub penalty_init: f64,
    pub penalty_growth: f64,
    pub penalty_max: f64,
    /// Multipliers are clipped to `[-bound, bound]`.
    pub multiplier_bound: f64,
    pub lbfgs_memory: usize,
    pub inner: InnerMethod,
    /// Relative step for finite-difference derivative checks.
    pub fd_step: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            kkt_tol: 1e-6,
            max_outer: 50,
            max_inner: 500,
            penalty_init: 10.0,
            penalty_growth: 10.0,
            penalty_max: 1e10,
            multiplier_bound: 1e12,
            lbfgs_memory: 20,
            inner: InnerMethod::Newton,
            fd_step: 1e-6,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("kkt_tol", self.kkt_tol),
            ("penalty_init", self.penalty_init),
            ("penalty_max", self.penalty_max),
            ("multiplier_bound", self.multiplier_bound),
            ("fd_step", self.fd_step),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::validation(format!("solver.{name}"), "must be > 0"));
            }
        }
        if self.kkt_tol >= 1.0 {
            return Err(Error::validation("solver.kkt_tol", "must be < 1"));
        }
        if !(self.penalty_growth > 1.0) {
            return Err(Error::validation("solver.penalty_growth", "must be > 1"));
        }
        if self.max_outer == 0 || self.max_inner == 0 || self.lbfgs_memory == 0 {
            return Err(Error::validation("solver", "iteration limits and memory must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    InfeasibleStationary,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::MaxIter => "max_iter",
            SolveStatus::InfeasibleStationary => "infeasible_stationary",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Multipliers {
    pub eq: Vec<f64>,
    pub ineq: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// One line of the outer-iteration log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    pub iter: usize,
    pub objective: f64,
    pub eq_viol: f64,
    pub ineq_viol: f64,
    pub kkt: f64,
    pub penalty: f64,
    pub inner_iterations: usize,
    /// Multipliers were updated (as opposed to a penalty increase).
    pub accepted: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NlpResult {
    pub z: Vec<f64>,
    pub multipliers: Multipliers,
    pub status: SolveStatus,
    pub objective: f64,
    pub kkt_residual: f64,
    pub penalty: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub wall_time_s: f64,
    pub history: Vec<OuterRecord>,
}

impl NlpResult {
    /// Write the outer-iteration log, one line per iteration.
    pub fn write_log<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iter, f, ||ceq||_inf, ||cineq_viol||_inf, kkt, penalty")?;
        for r in &self.history {
            writeln!(
                w,
                "{}, {:.10e}, {:.3e}, {:.3e}, {:.3e}, {:.1e}",
                r.iter, r.objective, r.eq_viol, r.ineq_viol, r.kkt, r.penalty
            )?;
        }
        Ok(())
    }

    /// Compact diagnostics without the iterate.
    pub fn diagnostics(&self) -> SolveDiagnostics {
        SolveDiagnostics {
            status: self.status,
            kkt_residual: self.kkt_residual,
            objective_scaled: self.objective,
            outer_iterations: self.outer_iterations,
            inner_iterations: self.inner_iterations,
            final_penalty: self.penalty,
            wall_time_s: self.wall_time_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub status: SolveStatus,
    pub kkt_residual: f64,
    pub objective_scaled: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub final_penalty: f64,
    pub wall_time_s: f64,
}

/// Starting point and optional multipliers from an earlier solve.
#[derive(Debug, Clone, Default)]
pub struct WarmStart {
    pub z: Vec<f64>,
    pub eq: Option<Vec<f64>>,
    pub ineq: Option<Vec<f64>>,
    pub penalty: Option<f64>,
}

/// Derivative workspace for one problem.
struct Workspace<'a, P: NlpProblem + ?Sized> {
    p: &'a P,
    jc_s: Vec<(usize, usize)>,
    jg_s: Vec<(usize, usize)>,
    jc_v: Vec<f64>,
    jg_v: Vec<f64>,
    c: Vec<f64>,
    g: Vec<f64>,
    w: Vec<f64>,
    hess_s: Option<Vec<(usize, usize)>>,
    hess_v: Vec<f64>,
    /// Positions of each constraint row's entries in the triplet arrays.
    eq_rows: Vec<Vec<usize>>,
    in_rows: Vec<Vec<usize>>,
}

fn rows_of(structure: &[(usize, usize)], m: usize) -> Vec<Vec<usize>> {
    let mut rows = vec![Vec::new(); m];
    for (k, &(r, _)) in structure.iter().enumerate() {
        rows[r].push(k);
    }
    rows
}

fn check_finite(v: &[f64], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

impl<'a, P: NlpProblem + ?Sized> Workspace<'a, P> {
    fn new(p: &'a P) -> Self {
        let jc_s = p.eq_jacobian_structure();
        let jg_s = p.ineq_jacobian_structure();
        let hess_s = p.hessian_structure();
        Workspace {
            hess_v: vec![0.0; hess_s.as_ref().map_or(0, |h| h.len())],
            hess_s,
            eq_rows: rows_of(&jc_s, p.n_eq()),
            in_rows: rows_of(&jg_s, p.n_ineq()),
            jc_v: vec![0.0; jc_s.len()],
            jg_v: vec![0.0; jg_s.len()],
            jc_s,
            jg_s,
            c: vec![0.0; p.n_eq()],
            g: vec![0.0; p.n_ineq()],
            w: vec![0.0; p.n_eq().max(p.n_ineq())],
            p,
        }
    }

    fn constraints(&mut self, z: &[f64]) -> Result<()> {
        self.p.eq_constraints(z, &mut self.c)?;
        self.p.ineq_constraints(z, &mut self.g)?;
        check_finite(&self.c, "equality constraints")?;
        check_finite(&self.g, "inequality constraints")
    }

    /// Augmented Lagrangian value and gradient.
    fn al(&mut self, z: &[f64], grad: &mut [f64], lam: &[f64], mu: &[f64], rho: f64) -> Result<f64> {
        let f = self.p.objective(z)?;
        if !f.is_finite() {
            return Err(Error::NonFinite("objective".into()));
        }
        self.constraints(z)?;
        self.p.objective_grad(z, grad)?;
        self.p.eq_jacobian(z, &mut self.jc_v)?;
        self.p.ineq_jacobian(z, &mut self.jg_v)?;
        let mut val = f;
        for i in 0..self.c.len() {
            let ci = self.c[i];
            val += lam[i] * ci + 0.5 * rho * ci * ci;
            self.w[i] = lam[i] + rho * ci;
        }
        add_jt_times(&self.jc_s, &self.jc_v, &self.w[..self.c.len()], grad);
        for j in 0..self.g.len() {
            let shifted = (mu[j] + rho * self.g[j]).max(0.0);
            val += (shifted * shifted - mu[j] * mu[j]) / (2.0 * rho);
            self.w[j] = shifted;
        }
        add_jt_times(&self.jg_s, &self.jg_v, &self.w[..self.g.len()], grad);
        check_finite(grad, "gradient")?;
        Ok(val)
    }

    /// Dense Hessian of the augmented Lagrangian: the Lagrangian Hessian at the
    /// first-order multiplier estimates plus the Gauss-Newton penalty terms.
    fn al_hessian(&mut self, z: &[f64], lam: &[f64], mu: &[f64], rho: f64) -> Result<DMatrix<f64>> {
        let n = z.len();
        self.constraints(z)?;
        self.p.eq_jacobian(z, &mut self.jc_v)?;
        self.p.ineq_jacobian(z, &mut self.jg_v)?;
        let w_eq: Vec<f64> = lam.iter().zip(&self.c).map(|(l, c)| l + rho * c).collect();
        let w_in: Vec<f64> = mu.iter().zip(&self.g).map(|(m, g)| (m + rho * g).max(0.0)).collect();
        let mut h = DMatrix::zeros(n, n);
        if let Some(hs) = &self.hess_s {
            self.p.lagrangian_hessian(z, 1.0, &w_eq, &w_in, &mut self.hess_v)?;
            for (&(i, j), v) in hs.iter().zip(&self.hess_v) {
                h[(i, j)] += v;
            }
        }
        let mut add_outer = |entries: &[usize], s: &[(usize, usize)], v: &[f64]| {
            for &a in entries {
                for &b in entries {
                    h[(s[a].1, s[b].1)] += rho * v[a] * v[b];
                }
            }
        };
        for row in &self.eq_rows {
            add_outer(row, &self.jc_s, &self.jc_v);
        }
        for (r, row) in self.in_rows.iter().enumerate() {
            if w_in[r] > 0.0 {
                add_outer(row, &self.jg_s, &self.jg_v);
            }
        }
        check_finite(h.as_slice(), "Hessian")?;
        Ok(h)
    }

    /// Gradient of the Lagrangian `f + lam^T c + mu^T g`.
    fn lagrangian_grad(&mut self, z: &[f64], lam: &[f64], mu: &[f64], grad: &mut [f64]) -> Result<()> {
        self.p.objective_grad(z, grad)?;
        self.p.eq_jacobian(z, &mut self.jc_v)?;
        self.p.ineq_jacobian(z, &mut self.jg_v)?;
        add_jt_times(&self.jc_s, &self.jc_v, lam, grad);
        add_jt_times(&self.jg_s, &self.jg_v, mu, grad);
        check_finite(grad, "gradient")
    }

    fn kkt(&mut self, z: &[f64], lam: &[f64], mu: &[f64]) -> Result<f64> {
        let mut grad = vec![0.0; z.len()];
        self.lagrangian_grad(z, lam, mu, &mut grad)?;
        self.constraints(z)?;
        let stat = lbfgs::proj_grad_norm(z, &grad, self.p.lower_bounds(), self.p.upper_bounds());
        let feas_eq = inf_norm(&self.c);
        let feas_in = self.g.iter().fold(0.0f64, |m, &x| m.max(x));
        let compl = self
            .g
            .iter()
            .zip(mu)
            .fold(0.0f64, |m, (&gi, &mi)| m.max(mi.min(-gi).abs()));
        Ok(stat.max(feas_eq).max(feas_in).max(compl))
    }
}

/// KKT residual: the largest of projected stationarity, equality violation,
/// inequality violation and complementarity, all in the infinity norm.
pub fn kkt_residual<P: NlpProblem + ?Sized>(problem: &P, z: &[f64], eq: &[f64], ineq: &[f64]) -> Result<f64> {
    Workspace::new(problem).kkt(z, eq, ineq)
}

/// Objective gradient and constraint Jacobians (triplet values) at `z`.
pub fn gradients<P: NlpProblem + ?Sized>(problem: &P, z: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let mut zp = z.to_vec();
    project(&mut zp, problem.lower_bounds(), problem.upper_bounds());
    let mut grad = vec![0.0; problem.n()];
    problem.objective_grad(&zp, &mut grad)?;
    let mut jc = vec![0.0; problem.eq_jacobian_structure().len()];
    let mut jg = vec![0.0; problem.ineq_jacobian_structure().len()];
    problem.eq_jacobian(&zp, &mut jc)?;
    problem.ineq_jacobian(&zp, &mut jg)?;
    check_finite(&grad, "objective gradient")?;
    check_finite(&jc, "equality Jacobian")?;
    check_finite(&jg, "inequality Jacobian")?;
    Ok((grad, jc, jg))
}

fn violation(c: &[f64], g: &[f64], mu: &[f64], rho: f64) -> (f64, f64, f64) {
    let eq = inf_norm(c);
    let ineq = g.iter().fold(0.0f64, |m, &x| m.max(x));
    // inequality measure used for progress: distance to the shifted hinge
    let shifted = g
        .iter()
        .zip(mu)
        .fold(0.0f64, |m, (&gi, &mi)| m.max(gi.max(-mi / rho).abs()));
    (eq, ineq, eq.max(shifted))
}

/// Solve from the problem's own initial point.
pub fn solve<P: NlpProblem + ?Sized>(problem: &P, opts: &SolverOptions) -> Result<NlpResult> {
    solve_warm(problem, opts, &WarmStart { z: problem.initial_point(), ..Default::default() })
}

pub fn solve_warm<P: NlpProblem + ?Sized>(problem: &P, opts: &SolverOptions, warm: &WarmStart) -> Result<NlpResult> {
    opts.validate()?;
    let start = Instant::now();
    let n = problem.n();
    if warm.z.len() != n {
        return Err(Error::LayoutMismatch { expected: n, got: warm.z.len() });
    }
    check_finite(&warm.z, "initial point")?;
    let (lower, upper) = (problem.lower_bounds(), problem.upper_bounds());
    let mut ws = Workspace::new(problem);
    let mut z = warm.z.clone();
    project(&mut z, lower, upper);

    let bound = opts.multiplier_bound;
    let clip = |v: f64| v.clamp(-bound, bound);
    let mut lam = match &warm.eq {
        Some(l) if l.len() == problem.n_eq() => l.iter().map(|&v| clip(v)).collect(),
        _ => vec![0.0; problem.n_eq()],
    };
    let mut mu: Vec<f64> = match &warm.ineq {
        Some(m) if m.len() == problem.n_ineq() => m.iter().map(|&v| clip(v).max(0.0)).collect(),
        _ => vec![0.0; problem.n_ineq()],
    };
    let mut rho = warm.penalty.unwrap_or(opts.penalty_init).clamp(opts.penalty_init, opts.penalty_max);

    ws.constraints(&z)?;
    let (mut c_ref, _, mut v_ref) = violation(&ws.c, &ws.g, &mu, rho);
    let warm_multipliers = warm.eq.is_some() || warm.ineq.is_some();
    if warm_multipliers {
        // a warm point is usually feasible for a neighbouring problem; measuring
        // progress against it would reject every multiplier update
        c_ref = f64::INFINITY;
        v_ref = f64::INFINITY;
    }
    let mut omega: f64 = if warm_multipliers { (10.0 * opts.kkt_tol).max(1e-5) } else { 1e-2 };

    let mut history = Vec::new();
    let mut inner_total = 0;
    let mut status = SolveStatus::MaxIter;
    let mut kkt = f64::INFINITY;
    let mut grad = vec![0.0; n];
    let mut stalled_at_max = 0;
    let use_newton = opts.inner == InnerMethod::Newton && ws.hess_s.is_some();

    for iter in 1..=opts.max_outer {
        let tol = omega.max(0.2 * opts.kkt_tol);
        let (lam_c, mu_c) = (lam.clone(), mu.clone());
        let res = if use_newton {
            // both closures need the workspace; evaluate derivatives through a second one
            let mut ws_h = Workspace::new(problem);
            ProjectedNewton { max_iter: opts.max_inner, tol }.minimize(
                &mut z,
                lower,
                upper,
                |x, gr| {
                    gr.iter_mut().for_each(|v| *v = 0.0);
                    ws.al(x, gr, &lam_c, &mu_c, rho)
                },
                |x| ws_h.al_hessian(x, &lam_c, &mu_c, rho),
            )?
        } else {
            Lbfgs { memory: opts.lbfgs_memory, max_iter: opts.max_inner, tol }.minimize(&mut z, lower, upper, |x, gr| {
                gr.iter_mut().for_each(|v| *v = 0.0);
                ws.al(x, gr, &lam_c, &mu_c, rho)
            })?
        };
        inner_total += res.iterations;

        ws.constraints(&z)?;
        let (eq_viol, ineq_viol, v) = violation(&ws.c, &ws.g, &mu, rho);
        let lam_new: Vec<f64> = lam.iter().zip(&ws.c).map(|(l, c)| clip(l + rho * c)).collect();
        let mu_new: Vec<f64> = mu.iter().zip(&ws.g).map(|(m, g)| clip((m + rho * g).max(0.0))).collect();
        kkt = ws.kkt(&z, &lam_new, &mu_new)?;
        let objective = problem.objective(&z)?;

        let converged = kkt <= opts.kkt_tol;
        let progress = v <= 0.25 * v_ref || v <= 0.5 * opts.kkt_tol;
        let accepted = converged || (progress && eq_viol <= c_ref);
        let record = OuterRecord {
            iter,
            objective,
            eq_viol,
            ineq_viol,
            kkt,
            penalty: rho,
            inner_iterations: res.iterations,
            accepted,
        };
        info!(
            "{}, {:.10e}, {:.3e}, {:.3e}, {:.3e}, {:.1e}",
            iter, objective, eq_viol, ineq_viol, kkt, rho
        );
        debug!("inner: {:?} after {} iterations, |pg| = {:.3e}", res.stop, res.iterations, res.proj_grad);
        history.push(record);

        if accepted {
            lam = lam_new;
            mu = mu_new;
            c_ref = eq_viol;
            v_ref = v;
            omega = (0.1 * omega).max(0.2 * opts.kkt_tol);
        } else if rho < opts.penalty_max {
            rho = (rho * opts.penalty_growth).min(opts.penalty_max);
        } else if res.stop != InnerStop::MaxIter {
            stalled_at_max += 1;
        }
        if converged {
            status = SolveStatus::Optimal;
            break;
        }
        if stalled_at_max >= 2 {
            status = SolveStatus::InfeasibleStationary;
            break;
        }
    }

    ws.lagrangian_grad(&z, &lam, &mu, &mut grad)?;
    let mut lower_m = vec![0.0; n];
    let mut upper_m = vec![0.0; n];
    for i in 0..n {
        if z[i] <= lower[i] {
            lower_m[i] = grad[i].max(0.0);
        }
        if z[i] >= upper[i] {
            upper_m[i] = (-grad[i]).max(0.0);
        }
    }
    let objective = problem.objective(&z)?;
    Ok(NlpResult {
        z,
        multipliers: Multipliers { eq: lam, ineq: mu, lower: lower_m, upper: upper_m },
        status,
        objective,
        kkt_residual: kkt,
        penalty: rho,
        outer_iterations: history.len(),
        inner_iterations: inner_total,
        wall_time_s: start.elapsed().as_secs_f64(),
        history,
    })
}
