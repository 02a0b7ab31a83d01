//! Primal-dual interior-point solver for smooth nonlinear programs
//!
//! ```text
//! min f(x)  s.t.  c_E(x) = 0,  d_L ≤ d(x) ≤ d_U,  x_L ≤ x ≤ x_U
//! ```
//!
//! Inequalities get slacks, bounds get a logarithmic barrier, and Newton steps
//! on the perturbed KKT system are globalized by a filter line search on
//! (constraint violation, barrier objective). Variables with equal bounds are
//! eliminated. A Gauss-Newton feasibility phase takes over when the line
//! search stalls.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::sparse::{CscMatrix, SparseLu, Triplets};

/// Callbacks describing a nonlinear program.
pub trait NlpProblem {
    fn n_vars(&self) -> usize;
    fn n_eq(&self) -> usize;
    fn n_ineq(&self) -> usize;
    fn var_bounds(&self) -> (Vec<f64>, Vec<f64>);
    fn ineq_bounds(&self) -> (Vec<f64>, Vec<f64>);
    fn initial_point(&self) -> Vec<f64>;
    fn objective(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    /// Equality residuals followed by inequality function values.
    fn constraints(&self, x: &[f64]) -> Vec<f64>;
    /// Jacobian of [`constraints`](Self::constraints).
    fn jacobian(&self, x: &[f64]) -> Triplets;
    /// Lower triangle of `obj_factor·∇²f + Σ_j mult_j ∇²c_j`.
    fn hessian(&self, x: &[f64], obj_factor: f64, mult: &[f64]) -> Triplets;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NlpStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NlpOptions {
    pub max_iter: usize,
    /// Scaled KKT error at which the solve stops.
    pub tol: f64,
    /// Unscaled primal feasibility also required at termination.
    pub feas_tol: f64,
    pub mu_init: f64,
    /// Relative distance an initial point is pushed into the box.
    pub bound_push: f64,
    /// Gradient-norm cap used for objective and constraint scaling.
    pub scale_cap: f64,
    pub keep_log: bool,
}

impl Default for NlpOptions {
    fn default() -> Self {
        Self {
            max_iter: 300,
            tol: 1e-8,
            feas_tol: 1e-6,
            mu_init: 0.1,
            bound_push: 1e-2,
            scale_cap: 100.0,
            keep_log: false,
        }
    }
}

/// One accepted iterate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub objective: f64,
    pub inf_pr: f64,
    pub inf_du: f64,
    pub mu: f64,
    pub alpha_pr: f64,
    pub restoration: bool,
    /// Scaled violation and barrier value before and after the step, both
    /// measured with the same barrier parameter.
    pub theta_before: f64,
    pub phi_before: f64,
    pub theta_after: f64,
    pub phi_after: f64,
}

/// An inequality of the solved problem in the form h ≥ 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintRef {
    VarLower(usize),
    VarUpper(usize),
    IneqLower(usize),
    IneqUpper(usize),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NlpSolution {
    pub status: NlpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Multipliers of the equalities (unscaled, L = f + μᵀc_E − ...).
    pub eq_mult: Vec<f64>,
    /// Nonnegative multipliers of d ≥ d_L and d ≤ d_U.
    pub ineq_mult_lower: Vec<f64>,
    pub ineq_mult_upper: Vec<f64>,
    /// Nonnegative multipliers of the variable bounds (0 for fixed variables).
    pub bound_mult_lower: Vec<f64>,
    pub bound_mult_upper: Vec<f64>,
    pub ineq_values: Vec<f64>,
    pub var_lower: Vec<f64>,
    pub var_upper: Vec<f64>,
    pub ineq_lower: Vec<f64>,
    pub ineq_upper: Vec<f64>,
    /// max |c_E| and max bound violation of d, unscaled.
    pub primal_infeasibility: f64,
    /// Scaled stationarity residual at the returned point.
    pub dual_infeasibility: f64,
    pub message: String,
    #[serde(skip)]
    pub log: Vec<IterRecord>,
}

impl NlpSolution {
    /// Every finite, non-degenerate inequality with its value h ≥ 0 and
    /// multiplier ρ ≥ 0. Fixed variables are excluded.
    pub fn inequalities(&self) -> Vec<(ConstraintRef, f64, f64)> {
        let mut out = Vec::new();
        for j in 0..self.x.len() {
            let (l, u) = (self.var_lower[j], self.var_upper[j]);
            if l == u {
                continue;
            }
            if l.is_finite() {
                out.push((ConstraintRef::VarLower(j), self.x[j] - l, self.bound_mult_lower[j]));
            }
            if u.is_finite() {
                out.push((ConstraintRef::VarUpper(j), u - self.x[j], self.bound_mult_upper[j]));
            }
        }
        for j in 0..self.ineq_values.len() {
            let (l, u) = (self.ineq_lower[j], self.ineq_upper[j]);
            if l.is_finite() {
                out.push((ConstraintRef::IneqLower(j), self.ineq_values[j] - l, self.ineq_mult_lower[j]));
            }
            if u.is_finite() {
                out.push((ConstraintRef::IneqUpper(j), u - self.ineq_values[j], self.ineq_mult_upper[j]));
            }
        }
        out
    }

    /// Inequalities with |h| ≤ tol.
    pub fn active_set(&self, tol: f64) -> Vec<ConstraintRef> {
        self.inequalities()
            .into_iter()
            .filter(|(_, h, _)| h.abs() <= tol)
            .map(|(c, _, _)| c)
            .collect()
    }

    /// Writes the iteration log as CSV.
    pub fn write_log_csv<W: Write>(&self, out: W) -> crate::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iter", "objective", "inf_pr", "inf_du", "mu"])?;
        for r in &self.log {
            w.write_record(&[
                r.iter.to_string(),
                format!("{:e}", r.objective),
                format!("{:e}", r.inf_pr),
                format!("{:e}", r.inf_du),
                format!("{:e}", r.mu),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

// Algorithm constants.
const KAPPA_EPS: f64 = 10.0;
const KAPPA_MU: f64 = 0.2;
const THETA_MU: f64 = 1.5;
const TAU_MIN: f64 = 0.99;
const GAMMA_THETA: f64 = 1e-5;
const GAMMA_PHI: f64 = 1e-8;
const DELTA_SWITCH: f64 = 1.0;
const S_THETA: f64 = 1.1;
const S_PHI: f64 = 2.3;
const ETA_PHI: f64 = 1e-8;
const GAMMA_ALPHA: f64 = 0.05;
const KAPPA_SIGMA: f64 = 1e10;
const S_MAX: f64 = 100.0;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn norm1(a: &[f64]) -> f64 {
    a.iter().map(|v| v.abs()).sum()
}

/// Problem data after fixed-variable elimination and scaling.
struct Scaled<'a, P: NlpProblem + ?Sized> {
    p: &'a P,
    n: usize,
    me: usize,
    mi: usize,
    free: Vec<usize>,
    /// Position of each original variable in `free`, if free.
    free_pos: Vec<Option<usize>>,
    x_fixed: Vec<f64>,
    nw: usize,
    wl: Vec<f64>,
    wu: Vec<f64>,
    obj_scale: f64,
    con_scale: Vec<f64>,
}

struct Eval {
    f: f64,
    grad: Vec<f64>,
    c: Vec<f64>,
    jac: CscMatrix,
}

impl<'a, P: NlpProblem + ?Sized> Scaled<'a, P> {
    fn x_full(&self, w: &[f64]) -> Vec<f64> {
        let mut x = self.x_fixed.clone();
        for (k, &j) in self.free.iter().enumerate() {
            x[j] = w[k];
        }
        x
    }

    fn m(&self) -> usize {
        self.me + self.mi
    }

    fn nf(&self) -> usize {
        self.free.len()
    }

    fn constraints(&self, w: &[f64]) -> Vec<f64> {
        let x = self.x_full(w);
        let mut c = self.p.constraints(&x);
        let nf = self.nf();
        for j in 0..self.mi {
            c[self.me + j] -= w[nf + j];
        }
        for (cj, s) in c.iter_mut().zip(&self.con_scale) {
            *cj *= s;
        }
        c
    }

    fn objective(&self, w: &[f64]) -> f64 {
        self.obj_scale * self.p.objective(&self.x_full(w))
    }

    fn eval(&self, w: &[f64]) -> Eval {
        let x = self.x_full(w);
        let nf = self.nf();
        let f = self.obj_scale * self.p.objective(&x);
        let g = self.p.gradient(&x);
        let mut grad = vec![0.0; self.nw];
        for (k, &j) in self.free.iter().enumerate() {
            grad[k] = self.obj_scale * g[j];
        }
        let c = self.constraints(w);
        let raw = self.p.jacobian(&x);
        let mut t = Triplets::with_capacity(self.m(), self.nw, raw.len() + self.mi);
        for (r, col, v) in raw.iter() {
            if let Some(k) = self.free_pos[col] {
                t.push(r, k, v * self.con_scale[r]);
            }
        }
        for j in 0..self.mi {
            t.push(self.me + j, nf + j, -self.con_scale[self.me + j]);
        }
        Eval {
            f,
            grad,
            c,
            jac: t.to_csc(),
        }
    }

    /// Full symmetric Hessian of the scaled Lagrangian over w.
    fn hessian(&self, w: &[f64], y: &[f64]) -> CscMatrix {
        let x = self.x_full(w);
        let mult: Vec<f64> = y.iter().zip(&self.con_scale).map(|(a, b)| a * b).collect();
        let lower = self.p.hessian(&x, self.obj_scale, &mult);
        let mut t = Triplets::with_capacity(self.nw, self.nw, 2 * lower.len());
        for (r, c, v) in lower.iter() {
            let (Some(i), Some(j)) = (self.free_pos[r], self.free_pos[c]) else {
                continue;
            };
            t.push(i, j, v);
            if i != j {
                t.push(j, i, v);
            }
        }
        t.to_csc()
    }
}

/// Barrier state for one primal point.
struct BarrierEval {
    theta: f64,
    phi: f64,
}

fn barrier(sc: &Scaled<'_, impl NlpProblem + ?Sized>, w: &[f64], f: f64, c: &[f64], mu: f64) -> BarrierEval {
    let mut phi = f;
    for j in 0..sc.nw {
        if sc.wl[j].is_finite() {
            phi -= mu * (w[j] - sc.wl[j]).ln();
        }
        if sc.wu[j].is_finite() {
            phi -= mu * (sc.wu[j] - w[j]).ln();
        }
    }
    BarrierEval { theta: norm1(c), phi }
}

fn push_into_box(v: f64, l: f64, u: f64, push: f64) -> f64 {
    let mut pl = if l.is_finite() { push * l.abs().max(1.0) } else { 0.0 };
    let mut pu = if u.is_finite() { push * u.abs().max(1.0) } else { 0.0 };
    if l.is_finite() && u.is_finite() {
        pl = pl.min(push * (u - l));
        pu = pu.min(push * (u - l));
    }
    let mut out = v;
    if l.is_finite() {
        out = out.max(l + pl);
    }
    if u.is_finite() {
        out = out.min(u - pu);
    }
    if l.is_finite() && u.is_finite() && !(out > l && out < u) {
        out = 0.5 * (l + u);
    }
    out
}

fn infeasible_box(n: usize, message: String, x: Vec<f64>, xl: Vec<f64>, xu: Vec<f64>, dl: Vec<f64>, du: Vec<f64>) -> NlpSolution {
    let mi = dl.len();
    NlpSolution {
        status: NlpStatus::Infeasible,
        x,
        objective: f64::NAN,
        iterations: 0,
        eq_mult: Vec::new(),
        ineq_mult_lower: vec![0.0; mi],
        ineq_mult_upper: vec![0.0; mi],
        bound_mult_lower: vec![0.0; n],
        bound_mult_upper: vec![0.0; n],
        ineq_values: vec![f64::NAN; mi],
        var_lower: xl,
        var_upper: xu,
        ineq_lower: dl,
        ineq_upper: du,
        primal_infeasibility: f64::INFINITY,
        dual_infeasibility: f64::INFINITY,
        message,
        log: Vec::new(),
    }
}

/// Solves `problem` from its initial point.
pub fn solve_nlp<P: NlpProblem + ?Sized>(problem: &P, opts: &NlpOptions) -> NlpSolution {
    let n = problem.n_vars();
    let me = problem.n_eq();
    let mi = problem.n_ineq();
    let (xl, xu) = problem.var_bounds();
    let (dl, du) = problem.ineq_bounds();
    let x0 = problem.initial_point();
    assert_eq!(xl.len(), n);
    assert_eq!(xu.len(), n);
    assert_eq!(x0.len(), n);
    assert_eq!(dl.len(), mi);

    // Crossed boxes cannot be repaired by any step.
    if let Some(j) = (0..n).find(|&j| !(xl[j] <= xu[j])) {
        let msg = format!("variable {j} has crossed bounds [{}, {}]", xl[j], xu[j]);
        return infeasible_box(n, msg, x0, xl, xu, dl, du);
    }
    if let Some(j) = (0..mi).find(|&j| !(dl[j] <= du[j])) {
        let msg = format!("inequality {j} has crossed bounds [{}, {}]", dl[j], du[j]);
        return infeasible_box(n, msg, x0, xl, xu, dl, du);
    }

    let mut x_fixed = x0.clone();
    let mut free = Vec::new();
    let mut free_pos = vec![None; n];
    for j in 0..n {
        if xl[j] == xu[j] {
            x_fixed[j] = xl[j];
        } else {
            free_pos[j] = Some(free.len());
            free.push(j);
        }
    }
    let nf = free.len();
    let nw = nf + mi;
    let mut wl: Vec<f64> = free.iter().map(|&j| xl[j]).collect();
    let mut wu: Vec<f64> = free.iter().map(|&j| xu[j]).collect();
    wl.extend_from_slice(&dl);
    wu.extend_from_slice(&du);

    // Initial primal point pushed into the interior.
    let mut xs = x_fixed.clone();
    for &j in &free {
        xs[j] = push_into_box(x0[j], xl[j], xu[j], opts.bound_push);
    }
    let c0 = problem.constraints(&xs);
    let mut w: Vec<f64> = free.iter().map(|&j| xs[j]).collect();
    for j in 0..mi {
        w.push(push_into_box(c0[me + j], dl[j], du[j], opts.bound_push));
    }

    // Gradient-based scaling at the starting point.
    let g0 = problem.gradient(&xs);
    let gmax = free.iter().fold(0.0f64, |m, &j| m.max(g0[j].abs()));
    let obj_scale = if gmax > 0.0 { (opts.scale_cap / gmax).min(1.0) } else { 1.0 };
    let j0 = problem.jacobian(&xs);
    let mut row_max = vec![0.0f64; me + mi];
    for (r, c, v) in j0.iter() {
        if free_pos[c].is_some() {
            row_max[r] = row_max[r].max(v.abs());
        }
    }
    for r in me..me + mi {
        row_max[r] = row_max[r].max(1.0);
    }
    let con_scale: Vec<f64> = row_max
        .iter()
        .map(|&g| if g > 0.0 { (opts.scale_cap / g).min(1.0) } else { 1.0 })
        .collect();

    let sc = Scaled {
        p: problem,
        n,
        me,
        mi,
        free,
        free_pos,
        x_fixed,
        nw,
        wl,
        wu,
        obj_scale,
        con_scale,
    };
    Ipm::new(sc, w, opts).run()
}

struct Ipm<'a, P: NlpProblem + ?Sized> {
    sc: Scaled<'a, P>,
    opts: NlpOptions,
    w: Vec<f64>,
    y: Vec<f64>,
    zl: Vec<f64>,
    zu: Vec<f64>,
    mu: f64,
    filter: Vec<(f64, f64)>,
    theta_max: f64,
    theta_min: f64,
    last_delta_w: f64,
    log: Vec<IterRecord>,
}

enum StepOutcome {
    Accepted,
    Restore,
}

impl<'a, P: NlpProblem + ?Sized> Ipm<'a, P> {
    fn new(sc: Scaled<'a, P>, w: Vec<f64>, opts: &NlpOptions) -> Self {
        let nw = sc.nw;
        let m = sc.m();
        let zl = (0..nw).map(|j| if sc.wl[j].is_finite() { 1.0 } else { 0.0 }).collect();
        let zu = (0..nw).map(|j| if sc.wu[j].is_finite() { 1.0 } else { 0.0 }).collect();
        Self {
            sc,
            opts: opts.clone(),
            w,
            y: vec![0.0; m],
            zl,
            zu,
            mu: opts.mu_init,
            filter: Vec::new(),
            theta_max: 0.0,
            theta_min: 0.0,
            last_delta_w: 0.0,
            log: Vec::new(),
        }
    }

    fn slack_l(&self, j: usize, w: &[f64]) -> f64 {
        w[j] - self.sc.wl[j]
    }

    fn slack_u(&self, j: usize, w: &[f64]) -> f64 {
        self.sc.wu[j] - w[j]
    }

    /// Stationarity residual ∇f + Jᵀy − z_L + z_U.
    fn dual_residual(&self, ev: &Eval) -> Vec<f64> {
        let jty = ev.jac.tr_mul_vec(&self.y);
        (0..self.sc.nw)
            .map(|j| ev.grad[j] + jty[j] - self.zl[j] + self.zu[j])
            .collect()
    }

    /// Scaled optimality error for barrier parameter `mu`.
    fn kkt_error(&self, ev: &Eval, rd: &[f64], mu: f64) -> f64 {
        let nw = self.sc.nw;
        let nb = (0..nw)
            .map(|j| self.sc.wl[j].is_finite() as usize + self.sc.wu[j].is_finite() as usize)
            .sum::<usize>();
        let zsum = norm1(&self.zl) + norm1(&self.zu);
        let sd = if nb + self.y.len() > 0 {
            (S_MAX.max((norm1(&self.y) + zsum) / (nb + self.y.len()) as f64)) / S_MAX
        } else {
            1.0
        };
        let scc = if nb > 0 { (S_MAX.max(zsum / nb as f64)) / S_MAX } else { 1.0 };
        let mut comp: f64 = 0.0;
        for j in 0..nw {
            if self.sc.wl[j].is_finite() {
                comp = comp.max((self.slack_l(j, &self.w) * self.zl[j] - mu).abs());
            }
            if self.sc.wu[j].is_finite() {
                comp = comp.max((self.slack_u(j, &self.w) * self.zu[j] - mu).abs());
            }
        }
        (norm_inf(rd) / sd).max(norm_inf(&ev.c)).max(comp / scc)
    }

    /// Unscaled max |c_E| and bound violation of the inequality functions.
    fn unscaled_infeasibility(&self, w: &[f64]) -> f64 {
        let x = self.sc.x_full(w);
        let c = self.sc.p.constraints(&x);
        let me = self.sc.me;
        let nf = self.sc.nf();
        let mut v = norm_inf(&c[..me]);
        for j in 0..self.sc.mi {
            let d = c[me + j];
            let (l, u) = (self.sc.wl[nf + j], self.sc.wu[nf + j]);
            v = v.max(l - d).max(d - u);
        }
        v
    }

    fn reset_filter(&mut self) {
        self.filter.clear();
    }

    fn filter_blocks(&self, theta: f64, phi: f64) -> bool {
        theta > self.theta_max || self.filter.iter().any(|&(tf, pf)| theta >= tf && phi >= pf)
    }

    fn run(mut self) -> NlpSolution {
        let mut iter = 0;
        let mut status = NlpStatus::MaxIter;
        let mut message = String::new();
        let mut ev = self.sc.eval(&self.w);
        let theta0 = norm1(&ev.c);
        self.theta_max = 1e4 * theta0.max(1.0);
        self.theta_min = 1e-4 * theta0.max(1.0);
        let mut tau = TAU_MIN.max(1.0 - self.mu);
        let mut rd = self.dual_residual(&ev);

        loop {
            let e0 = self.kkt_error(&ev, &rd, 0.0);
            if !e0.is_finite() {
                status = NlpStatus::Infeasible;
                message = "non-finite values in the iterate".into();
                break;
            }
            if e0 <= self.opts.tol && self.unscaled_infeasibility(&self.w) <= self.opts.feas_tol {
                status = NlpStatus::Optimal;
                break;
            }
            if iter >= self.opts.max_iter {
                message = format!("iteration limit reached (KKT error {e0:.3e})");
                break;
            }

            // Monotone barrier update.
            let mut changed = false;
            while self.mu > self.opts.tol / 10.0 && self.kkt_error(&ev, &rd, self.mu) <= KAPPA_EPS * self.mu {
                self.mu = (self.opts.tol / 10.0).max((KAPPA_MU * self.mu).min(self.mu.powf(THETA_MU)));
                changed = true;
            }
            if changed {
                tau = TAU_MIN.max(1.0 - self.mu);
                self.reset_filter();
            }

            let step = match self.newton_step(&ev) {
                Some(s) => s,
                None => {
                    message = "KKT system could not be regularized".into();
                    status = NlpStatus::Infeasible;
                    break;
                }
            };
            iter += 1;
            match self.line_search(&ev, &step, tau, iter) {
                StepOutcome::Accepted => {}
                StepOutcome::Restore => {
                    if !self.restore(iter) {
                        let (worst, val) = self.worst_constraint();
                        message = format!(
                            "feasibility restoration failed: max violation {val:.3e} at constraint {worst}"
                        );
                        status = NlpStatus::Infeasible;
                        break;
                    }
                }
            }
            ev = self.sc.eval(&self.w);
            rd = self.dual_residual(&ev);
        }
        self.finish(status, iter, message, &rd)
    }

    fn worst_constraint(&self) -> (usize, f64) {
        let c = self.sc.constraints(&self.w);
        c.iter()
            .enumerate()
            .map(|(j, v)| (j, v.abs() / self.sc.con_scale[j]))
            .fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a })
    }

    fn sigma_diag(&self) -> Vec<f64> {
        (0..self.sc.nw)
            .map(|j| {
                let mut s = 0.0;
                if self.sc.wl[j].is_finite() {
                    s += self.zl[j] / self.slack_l(j, &self.w);
                }
                if self.sc.wu[j].is_finite() {
                    s += self.zu[j] / self.slack_u(j, &self.w);
                }
                s
            })
            .collect()
    }

    fn barrier_gradient(&self, ev: &Eval) -> Vec<f64> {
        (0..self.sc.nw)
            .map(|j| {
                let mut g = ev.grad[j];
                if self.sc.wl[j].is_finite() {
                    g -= self.mu / self.slack_l(j, &self.w);
                }
                if self.sc.wu[j].is_finite() {
                    g += self.mu / self.slack_u(j, &self.w);
                }
                g
            })
            .collect()
    }

    /// Solves the regularized primal-dual system; returns (dw, dy, dzl, dzu).
    fn newton_step(&mut self, ev: &Eval) -> Option<Step> {
        let nw = self.sc.nw;
        let m = self.sc.m();
        let hess = self.sc.hessian(&self.w, &self.y);
        let sigma = self.sigma_diag();
        let gphi = self.barrier_gradient(ev);
        let jty = ev.jac.tr_mul_vec(&self.y);
        let mut rhs = vec![0.0; nw + m];
        for j in 0..nw {
            rhs[j] = -(gphi[j] + jty[j]);
        }
        for r in 0..m {
            rhs[nw + r] = -ev.c[r];
        }

        let mut delta_w = 0.0;
        let mut delta_c = 0.0;
        for _attempt in 0..60 {
            let kkt = assemble_kkt(&hess, &sigma, &ev.jac, delta_w, delta_c);
            let sol = SparseLu::factor_relaxed(&kkt).ok().map(|lu| lu.solve(&rhs));
            let usable = sol.as_ref().is_some_and(|s| s.iter().all(|v| v.is_finite()));
            if usable {
                let s = sol.unwrap();
                let dw = &s[..nw];
                let hdw = hess.mul_vec(dw);
                let mut curv = dot(dw, &hdw) + delta_w * dot(dw, dw);
                for j in 0..nw {
                    curv += sigma[j] * dw[j] * dw[j];
                }
                let dy = &s[nw..];
                curv += delta_c * dot(dy, dy);
                if curv >= 1e-10 * dot(dw, dw) {
                    if delta_w > 0.0 {
                        self.last_delta_w = delta_w;
                    }
                    return Some(self.complete_step(s));
                }
            } else if delta_c == 0.0 && m > 0 {
                delta_c = 1e-8 * self.mu.powf(0.25);
                continue;
            }
            delta_w = if delta_w == 0.0 {
                if self.last_delta_w == 0.0 {
                    1e-4
                } else {
                    (self.last_delta_w / 3.0).max(1e-20)
                }
            } else if self.last_delta_w == 0.0 {
                delta_w * 100.0
            } else {
                delta_w * 8.0
            };
            if delta_w > 1e40 {
                return None;
            }
        }
        None
    }

    fn complete_step(&self, s: Vec<f64>) -> Step {
        let nw = self.sc.nw;
        let dw = s[..nw].to_vec();
        let dy = s[nw..].to_vec();
        let mut dzl = vec![0.0; nw];
        let mut dzu = vec![0.0; nw];
        for j in 0..nw {
            if self.sc.wl[j].is_finite() {
                let sl = self.slack_l(j, &self.w);
                dzl[j] = self.mu / sl - self.zl[j] - self.zl[j] / sl * dw[j];
            }
            if self.sc.wu[j].is_finite() {
                let su = self.slack_u(j, &self.w);
                dzu[j] = self.mu / su - self.zu[j] + self.zu[j] / su * dw[j];
            }
        }
        Step { dw, dy, dzl, dzu }
    }

    fn max_step(&self, dw: &[f64], tau: f64) -> f64 {
        let mut a: f64 = 1.0;
        for j in 0..self.sc.nw {
            if dw[j] < 0.0 && self.sc.wl[j].is_finite() {
                a = a.min(-tau * self.slack_l(j, &self.w) / dw[j]);
            }
            if dw[j] > 0.0 && self.sc.wu[j].is_finite() {
                a = a.min(tau * self.slack_u(j, &self.w) / dw[j]);
            }
        }
        a
    }

    fn max_dual_step(&self, st: &Step, tau: f64) -> f64 {
        let mut a: f64 = 1.0;
        for j in 0..self.sc.nw {
            if st.dzl[j] < 0.0 && self.zl[j] > 0.0 {
                a = a.min(-tau * self.zl[j] / st.dzl[j]);
            }
            if st.dzu[j] < 0.0 && self.zu[j] > 0.0 {
                a = a.min(-tau * self.zu[j] / st.dzu[j]);
            }
        }
        a
    }

    fn line_search(&mut self, ev: &Eval, st: &Step, tau: f64, iter: usize) -> StepOutcome {
        let cur = barrier(&self.sc, &self.w, ev.f, &ev.c, self.mu);
        let gphi = self.barrier_gradient(ev);
        let gd = dot(&gphi, &st.dw);
        let alpha_max = self.max_step(&st.dw, tau);
        let alpha_z = self.max_dual_step(st, tau);
        let alpha_min = if gd < 0.0 {
            GAMMA_ALPHA
                * GAMMA_THETA
                    .min(GAMMA_PHI * cur.theta / -gd)
                    .min(DELTA_SWITCH * cur.theta.powf(S_THETA) / (-gd).powf(S_PHI))
        } else {
            GAMMA_ALPHA * GAMMA_THETA
        }
        .max(1e-14);

        let mut alpha = alpha_max;
        while alpha >= alpha_min {
            let wt: Vec<f64> = self.w.iter().zip(&st.dw).map(|(a, b)| a + alpha * b).collect();
            let ft = self.sc.objective(&wt);
            let ct = self.sc.constraints(&wt);
            let tr = barrier(&self.sc, &wt, ft, &ct, self.mu);
            if tr.phi.is_finite() && tr.theta.is_finite() && !self.filter_blocks(tr.theta, tr.phi) {
                let switching = gd < 0.0
                    && alpha * (-gd).powf(S_PHI) > DELTA_SWITCH * cur.theta.powf(S_THETA);
                let (accept, f_type) = if cur.theta <= self.theta_min && switching {
                    (tr.phi <= cur.phi + ETA_PHI * alpha * gd, true)
                } else {
                    (
                        tr.theta <= (1.0 - GAMMA_THETA) * cur.theta || tr.phi <= cur.phi - GAMMA_PHI * cur.theta,
                        false,
                    )
                };
                if accept {
                    if !f_type {
                        self.filter
                            .push(((1.0 - GAMMA_THETA) * cur.theta, cur.phi - GAMMA_PHI * cur.theta));
                    }
                    self.accept(wt, st, alpha, alpha_z);
                    self.record(iter, alpha, false, &cur, &tr);
                    return StepOutcome::Accepted;
                }
            }
            alpha *= 0.5;
        }
        StepOutcome::Restore
    }

    fn accept(&mut self, wt: Vec<f64>, st: &Step, alpha: f64, alpha_z: f64) {
        self.w = wt;
        for (y, dy) in self.y.iter_mut().zip(&st.dy) {
            *y += alpha * dy;
        }
        for j in 0..self.sc.nw {
            if self.sc.wl[j].is_finite() {
                let z = self.zl[j] + alpha_z * st.dzl[j];
                let sl = self.slack_l(j, &self.w);
                self.zl[j] = z.clamp(self.mu / (KAPPA_SIGMA * sl), KAPPA_SIGMA * self.mu / sl);
            }
            if self.sc.wu[j].is_finite() {
                let z = self.zu[j] + alpha_z * st.dzu[j];
                let su = self.slack_u(j, &self.w);
                self.zu[j] = z.clamp(self.mu / (KAPPA_SIGMA * su), KAPPA_SIGMA * self.mu / su);
            }
        }
    }

    fn record(&mut self, iter: usize, alpha: f64, restoration: bool, before: &BarrierEval, after: &BarrierEval) {
        if !self.opts.keep_log {
            return;
        }
        let x = self.sc.x_full(&self.w);
        let obj = self.sc.p.objective(&x);
        let inf_pr = self.unscaled_infeasibility(&self.w);
        let ev = self.sc.eval(&self.w);
        let inf_du = norm_inf(&self.dual_residual(&ev));
        self.log.push(IterRecord {
            iter,
            objective: obj,
            inf_pr,
            inf_du,
            mu: self.mu,
            alpha_pr: alpha,
            restoration,
            theta_before: before.theta,
            phi_before: before.phi,
            theta_after: after.theta,
            phi_after: after.phi,
        });
    }

    /// Gauss-Newton steps on ½‖c‖² inside the box. Returns true once an
    /// iterate acceptable to the filter with sufficiently reduced violation
    /// has been found.
    fn restore(&mut self, iter: usize) -> bool {
        let nw = self.sc.nw;
        let tau = TAU_MIN.max(1.0 - self.mu);
        let start = {
            let ev = self.sc.eval(&self.w);
            barrier(&self.sc, &self.w, ev.f, &ev.c, self.mu)
        };
        // The current point must not block its own successors.
        self.filter
            .push(((1.0 - GAMMA_THETA) * start.theta, start.phi - GAMMA_PHI * start.theta));
        let mut theta = start.theta;
        for _ in 0..100 {
            let ev = self.sc.eval(&self.w);
            theta = norm1(&ev.c);
            let d: Vec<f64> = (0..nw)
                .map(|j| {
                    let mut v = 1e-8;
                    if self.sc.wl[j].is_finite() {
                        v += 1.0 / self.slack_l(j, &self.w).powi(2);
                    }
                    if self.sc.wu[j].is_finite() {
                        v += 1.0 / self.slack_u(j, &self.w).powi(2);
                    }
                    v.min(1e12)
                })
                .collect();
            let empty = Triplets::new(nw, nw).to_csc();
            let kkt = assemble_kkt(&empty, &d, &ev.jac, 0.0, 1e-10);
            let Ok(lu) = SparseLu::factor_relaxed(&kkt) else {
                return false;
            };
            let mut rhs = vec![0.0; nw + ev.c.len()];
            for (r, cr) in ev.c.iter().enumerate() {
                rhs[nw + r] = -cr;
            }
            let s = lu.solve(&rhs);
            let dw = &s[..nw];
            let mut alpha = self.max_step(dw, tau);
            let mut moved = false;
            while alpha > 1e-8 {
                let wt: Vec<f64> = self.w.iter().zip(dw).map(|(a, b)| a + alpha * b).collect();
                let ct = self.sc.constraints(&wt);
                let tt = norm1(&ct);
                if tt.is_finite() && tt < (1.0 - 1e-4 * alpha) * theta {
                    let ft = self.sc.objective(&wt);
                    let tr = barrier(&self.sc, &wt, ft, &ct, self.mu);
                    let before = BarrierEval { theta, phi: f64::NAN };
                    self.w = wt;
                    // Keep bound multipliers consistent with the barrier.
                    for j in 0..nw {
                        if self.sc.wl[j].is_finite() {
                            let sl = self.slack_l(j, &self.w);
                            self.zl[j] = self.zl[j].clamp(self.mu / (KAPPA_SIGMA * sl), KAPPA_SIGMA * self.mu / sl);
                        }
                        if self.sc.wu[j].is_finite() {
                            let su = self.slack_u(j, &self.w);
                            self.zu[j] = self.zu[j].clamp(self.mu / (KAPPA_SIGMA * su), KAPPA_SIGMA * self.mu / su);
                        }
                    }
                    self.record(iter, alpha, true, &before, &tr);
                    moved = true;
                    if tt <= 0.9 * start.theta && !self.filter_blocks(tr.theta, tr.phi) {
                        self.y.iter_mut().for_each(|v| *v = 0.0);
                        return true;
                    }
                    break;
                }
                alpha *= 0.5;
            }
            if !moved {
                break;
            }
        }
        log::debug!("restoration stalled at violation {theta:.3e}");
        false
    }

    fn finish(self, status: NlpStatus, iterations: usize, message: String, rd: &[f64]) -> NlpSolution {
        let sc = &self.sc;
        let x = sc.x_full(&self.w);
        let nf = sc.nf();
        let c = sc.p.constraints(&x);
        let s_f = sc.obj_scale;
        let eq_mult = (0..sc.me).map(|r| self.y[r] * sc.con_scale[r] / s_f).collect();
        let mut bl = vec![0.0; sc.n];
        let mut bu = vec![0.0; sc.n];
        for (k, &j) in sc.free.iter().enumerate() {
            bl[j] = self.zl[k] / s_f;
            bu[j] = self.zu[k] / s_f;
        }
        let il = (0..sc.mi).map(|j| self.zl[nf + j] / s_f).collect();
        let iu = (0..sc.mi).map(|j| self.zu[nf + j] / s_f).collect();
        let (xl, xu) = sc.p.var_bounds();
        NlpSolution {
            status,
            objective: sc.p.objective(&x),
            iterations,
            eq_mult,
            ineq_mult_lower: il,
            ineq_mult_upper: iu,
            bound_mult_lower: bl,
            bound_mult_upper: bu,
            ineq_values: c[sc.me..].to_vec(),
            var_lower: xl,
            var_upper: xu,
            ineq_lower: sc.wl[nf..].to_vec(),
            ineq_upper: sc.wu[nf..].to_vec(),
            primal_infeasibility: self.unscaled_infeasibility(&self.w),
            dual_infeasibility: norm_inf(rd),
            message,
            log: self.log,
            x,
        }
    }
}

struct Step {
    dw: Vec<f64>,
    dy: Vec<f64>,
    dzl: Vec<f64>,
    dzu: Vec<f64>,
}

/// [H + diag(σ) + δ_w I, Jᵀ; J, −δ_c I]
fn assemble_kkt(hess: &CscMatrix, sigma: &[f64], jac: &CscMatrix, delta_w: f64, delta_c: f64) -> CscMatrix {
    let nw = sigma.len();
    let m = jac.nrows();
    let mut t = Triplets::with_capacity(nw + m, nw + m, hess.nnz() + 2 * jac.nnz() + nw + m);
    for j in 0..nw {
        for (i, v) in hess.col(j) {
            t.push(i, j, v);
        }
        t.push(j, j, sigma[j] + delta_w);
    }
    for j in 0..nw {
        for (r, v) in jac.col(j) {
            t.push(nw + r, j, v);
            t.push(j, nw + r, v);
        }
    }
    for r in 0..m {
        t.push(nw + r, nw + r, -delta_c);
    }
    t.to_csc()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// min (x0 − 1)² + (x1 − 2)²  s.t.  x0 + x1 = 1,  x0 ≥ 0, x1 ∈ [0, 0.8],
    /// x0·x1 ≥ -1
    struct Toy {
        upper1: f64,
    }

    impl NlpProblem for Toy {
        fn n_vars(&self) -> usize {
            2
        }
        fn n_eq(&self) -> usize {
            1
        }
        fn n_ineq(&self) -> usize {
            1
        }
        fn var_bounds(&self) -> (Vec<f64>, Vec<f64>) {
            (vec![0.0, 0.0], vec![f64::INFINITY, self.upper1])
        }
        fn ineq_bounds(&self) -> (Vec<f64>, Vec<f64>) {
            (vec![-1.0], vec![f64::INFINITY])
        }
        fn initial_point(&self) -> Vec<f64> {
            vec![0.5, 0.5]
        }
        fn objective(&self, x: &[f64]) -> f64 {
            (x[0] - 1.0).powi(2) + (x[1] - 2.0).powi(2)
        }
        fn gradient(&self, x: &[f64]) -> Vec<f64> {
            vec![2.0 * (x[0] - 1.0), 2.0 * (x[1] - 2.0)]
        }
        fn constraints(&self, x: &[f64]) -> Vec<f64> {
            vec![x[0] + x[1] - 1.0, x[0] * x[1]]
        }
        fn jacobian(&self, x: &[f64]) -> Triplets {
            let mut t = Triplets::new(2, 2);
            t.push(0, 0, 1.0);
            t.push(0, 1, 1.0);
            t.push(1, 0, x[1]);
            t.push(1, 1, x[0]);
            t
        }
        fn hessian(&self, _x: &[f64], s: f64, mult: &[f64]) -> Triplets {
            let mut t = Triplets::new(2, 2);
            t.push(0, 0, 2.0 * s);
            t.push(1, 1, 2.0 * s);
            t.push(1, 0, mult[1]);
            t
        }
    }

    #[test]
    fn solves_toy_with_active_bound() {
        let sol = solve_nlp(&Toy { upper1: 0.8 }, &NlpOptions { keep_log: true, ..Default::default() });
        assert_eq!(sol.status, NlpStatus::Optimal, "{}", sol.message);
        // On x0 + x1 = 1 the minimizer is (0, 1); the cap x1 ≤ 0.8 binds.
        assert!((sol.x[0] - 0.2).abs() < 1e-7, "{:?}", sol.x);
        assert!((sol.x[1] - 0.8).abs() < 1e-7);
        assert!((sol.objective - 2.08).abs() < 1e-7);
        for (_, h, rho) in sol.inequalities() {
            assert!(rho >= -1e-10);
            assert!(rho * h <= 1e-6);
        }
        for r in sol.log.iter().filter(|r| !r.restoration) {
            assert!(r.theta_after < r.theta_before || r.phi_after < r.phi_before);
        }
    }

    #[test]
    fn crossed_box_reports_infeasible() {
        let sol = solve_nlp(&Toy { upper1: -1.0 }, &NlpOptions::default());
        assert_eq!(sol.status, NlpStatus::Infeasible);
        assert!(sol.message.contains("crossed"));
    }

    #[test]
    fn deterministic() {
        let a = solve_nlp(&Toy { upper1: 0.8 }, &NlpOptions::default());
        let b = solve_nlp(&Toy { upper1: 0.8 }, &NlpOptions::default());
        assert_eq!(a.status, b.status);
        assert_eq!(a.objective.to_bits(), b.objective.to_bits());
    }

    #[test]
    fn active_set_monotone_in_tol() {
        let sol = solve_nlp(&Toy { upper1: 0.8 }, &NlpOptions::default());
        let all = sol.inequalities().len();
        assert_eq!(sol.active_set(f64::INFINITY).len(), all);
        assert!(sol.active_set(1e-6).len() <= all);
        assert_eq!(sol.active_set(1e-6), vec![ConstraintRef::VarUpper(1)]);
    }
}
