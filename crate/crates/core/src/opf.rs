//! The (tightened) AC-OPF as an [`NlpProblem`].
//!
//! Variables are laid out as `[θ (N), v (N), p_G (N_G), q_G (N_G)]`, so the
//! first 2N columns coincide with the full state used in [`crate::acpf`].

use crate::acpf::{
    add_line_hessian, add_power_balance_hessian, line_jacobian, power_balance_jacobian, residual_f, residual_g,
    OperatingPoint,
};
use crate::netcase::Network;
use crate::nlp::{ConstraintRef, NlpProblem, NlpSolution};
use crate::sparse::Triplets;

#[derive(Debug, Clone, Copy)]
pub struct VarLayout {
    pub n: usize,
    pub ng: usize,
}

impl VarLayout {
    pub fn new(net: &Network) -> Self {
        Self {
            n: net.n_bus(),
            ng: net.n_gen(),
        }
    }

    pub fn len(&self) -> usize {
        2 * self.n + 2 * self.ng
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn theta(&self, bus: usize) -> usize {
        bus
    }

    pub fn v(&self, bus: usize) -> usize {
        self.n + bus
    }

    pub fn p(&self, gen: usize) -> usize {
        2 * self.n + gen
    }

    pub fn q(&self, gen: usize) -> usize {
        2 * self.n + self.ng + gen
    }

    /// Bus whose voltage magnitude is variable `j`.
    pub fn bus_of_v(&self, j: usize) -> Option<usize> {
        (self.n..2 * self.n).contains(&j).then(|| j - self.n)
    }

    pub fn is_p(&self, j: usize) -> bool {
        (2 * self.n..2 * self.n + self.ng).contains(&j)
    }

    pub fn point_of(&self, net: &Network, x: &[f64]) -> OperatingPoint {
        let mut p = OperatingPoint::flat(self.n);
        p.theta.copy_from_slice(&x[..self.n]);
        p.v.copy_from_slice(&x[self.n..2 * self.n]);
        for (g, gen) in net.case.generators.iter().enumerate() {
            p.p_g[gen.bus] = x[self.p(g)];
            p.q_g[gen.bus] = x[self.q(g)];
        }
        p
    }

    pub fn vars_of(&self, net: &Network, p: &OperatingPoint) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.len());
        x.extend_from_slice(&p.theta);
        x.extend_from_slice(&p.v);
        x.extend(net.case.generators.iter().map(|g| p.p_g[g.bus]));
        x.extend(net.case.generators.iter().map(|g| p.q_g[g.bus]));
        x
    }
}

/// Variable bounds straight from the case data.
pub fn case_bounds(net: &Network) -> (Vec<f64>, Vec<f64>) {
    let lay = VarLayout::new(net);
    let mut l = vec![0.0; lay.len()];
    let mut u = vec![0.0; lay.len()];
    for (i, b) in net.case.buses.iter().enumerate() {
        l[lay.theta(i)] = b.theta_min;
        u[lay.theta(i)] = b.theta_max;
        l[lay.v(i)] = b.v_min;
        u[lay.v(i)] = b.v_max;
    }
    for (g, gen) in net.case.generators.iter().enumerate() {
        l[lay.p(g)] = gen.p_min;
        u[lay.p(g)] = gen.p_max;
        l[lay.q(g)] = gen.q_min;
        u[lay.q(g)] = gen.q_max;
    }
    (l, u)
}

/// Midpoint of the bounds (0 where a side is infinite).
pub fn midpoint(l: &[f64], u: &[f64]) -> Vec<f64> {
    l.iter()
        .zip(u)
        .map(|(&a, &b)| match (a.is_finite(), b.is_finite()) {
            (true, true) => 0.5 * (a + b),
            (true, false) => a.max(0.0),
            (false, true) => b.min(0.0),
            (false, false) => 0.0,
        })
        .collect()
}

/// AC-OPF with given variable bounds and lower limits `line_lower` on the
/// branch constraints (one per limited branch; zeros give the plain OPF).
pub struct OpfProblem<'a> {
    pub net: &'a Network,
    pub layout: VarLayout,
    pub demand: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub line_lower: Vec<f64>,
    pub start: Vec<f64>,
}

impl<'a> OpfProblem<'a> {
    /// Plain AC-OPF from the midpoint start.
    pub fn plain(net: &'a Network) -> Self {
        let (l, u) = case_bounds(net);
        let start = midpoint(&l, &u);
        Self {
            net,
            layout: VarLayout::new(net),
            demand: net.case.demand(),
            lower: l,
            upper: u,
            line_lower: vec![0.0; net.limited.len()],
            start,
        }
    }

    pub fn point_of(&self, x: &[f64]) -> OperatingPoint {
        self.layout.point_of(self.net, x)
    }
}

impl NlpProblem for OpfProblem<'_> {
    fn n_vars(&self) -> usize {
        self.layout.len()
    }

    fn n_eq(&self) -> usize {
        2 * self.layout.n
    }

    fn n_ineq(&self) -> usize {
        self.net.limited.len()
    }

    fn var_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (self.lower.clone(), self.upper.clone())
    }

    fn ineq_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (self.line_lower.clone(), vec![f64::INFINITY; self.line_lower.len()])
    }

    fn initial_point(&self) -> Vec<f64> {
        self.start.clone()
    }

    fn objective(&self, x: &[f64]) -> f64 {
        self.net
            .case
            .cost
            .iter()
            .enumerate()
            .map(|(g, c)| c.eval(x[self.layout.p(g)]))
            .sum()
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.layout.len()];
        for (k, c) in self.net.case.cost.iter().enumerate() {
            let j = self.layout.p(k);
            g[j] = c.derivative(x[j]);
        }
        g
    }

    fn constraints(&self, x: &[f64]) -> Vec<f64> {
        let p = self.point_of(x);
        let mut c = residual_f(self.net, &p, &self.demand);
        c.extend(residual_g(self.net, &p));
        c
    }

    fn jacobian(&self, x: &[f64]) -> Triplets {
        let p = self.point_of(x);
        let n = self.layout.n;
        let m = 2 * n + self.net.limited.len();
        let pf = power_balance_jacobian(self.net, &p);
        let lj = line_jacobian(self.net, &p);
        let mut t = Triplets::with_capacity(m, self.layout.len(), pf.len() + lj.len() + 2 * self.layout.ng);
        t.extend_offset(&pf, 0, 0);
        t.extend_offset(&lj, 2 * n, 0);
        for (g, gen) in self.net.case.generators.iter().enumerate() {
            t.push(gen.bus, self.layout.p(g), -1.0);
            t.push(n + gen.bus, self.layout.q(g), -1.0);
        }
        t
    }

    fn hessian(&self, x: &[f64], obj_factor: f64, mult: &[f64]) -> Triplets {
        let p = self.point_of(x);
        let n = self.layout.n;
        let mut t = Triplets::new(self.layout.len(), self.layout.len());
        for (g, c) in self.net.case.cost.iter().enumerate() {
            let j = self.layout.p(g);
            t.push(j, j, 2.0 * c.q_ii * obj_factor);
        }
        add_power_balance_hessian(self.net, &p, &mult[..n], &mult[n..2 * n], &mut t);
        add_line_hessian(self.net, &p, &mult[2 * n..], &mut t);
        t
    }
}

/// Active inequalities of an OPF solution, excluding bounds on the
/// variables that stay deterministic under demand errors: p_G and the
/// generator-bus voltages (fixed variables are never listed).
pub fn active_set(net: &Network, sol: &NlpSolution, tol: f64) -> Vec<ConstraintRef> {
    let lay = VarLayout::new(net);
    let deterministic = |j: usize| lay.is_p(j) || lay.bus_of_v(j).is_some_and(|b| net.gen_of_bus[b].is_some());
    sol.active_set(tol)
        .into_iter()
        .filter(|c| match *c {
            ConstraintRef::VarLower(j) | ConstraintRef::VarUpper(j) => !deterministic(j),
            _ => true,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcase::ParseOptions;
    use crate::nlp::{solve_nlp, NlpOptions, NlpStatus};

    /// Sums the lower-triangle Hessian into a dense symmetric matrix.
    fn dense_sym(t: &Triplets, n: usize) -> nalgebra::DMatrix<f64> {
        let mut h = nalgebra::DMatrix::zeros(n, n);
        for (r, c, v) in t.iter() {
            h[(r, c)] += v;
            if r != c {
                h[(c, r)] += v;
            }
        }
        h
    }

    #[test]
    fn hessian_matches_jacobian_differences() {
        let net = Network::load("case9", &ParseOptions::default()).unwrap();
        let prob = OpfProblem::plain(&net);
        let n = prob.layout.len();
        let m = prob.n_eq() + prob.n_ineq();
        let mut x = prob.start.clone();
        for (j, xj) in x.iter_mut().enumerate() {
            *xj += 0.03 * ((j * 7919 % 13) as f64 / 13.0 - 0.5);
        }
        let mult: Vec<f64> = (0..m).map(|k| ((k * 31 % 17) as f64 - 8.0) / 8.0).collect();
        let h = dense_sym(&prob.hessian(&x, 0.7, &mult), n);
        // ∇(0.7 ∇f + Jᵀ mult) by central differences.
        let grad_l = |x: &[f64]| {
            let jt = prob.jacobian(x).to_csc().tr_mul_vec(&mult);
            prob.gradient(x).iter().zip(jt).map(|(g, j)| 0.7 * g + j).collect::<Vec<f64>>()
        };
        let step = 1e-6;
        for j in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += step;
            xm[j] -= step;
            let (gp, gm) = (grad_l(&xp), grad_l(&xm));
            for i in 0..n {
                let fd = (gp[i] - gm[i]) / (2.0 * step);
                assert!((fd - h[(i, j)]).abs() <= 1e-5 * (1.0 + fd.abs()), "H[{i},{j}] {} vs {fd}", h[(i, j)]);
            }
        }
    }

    #[test]
    fn case9_plain_opf() {
        let net = Network::load("case9", &ParseOptions::default()).unwrap();
        let sol = solve_nlp(&OpfProblem::plain(&net), &NlpOptions::default());
        assert_eq!(sol.status, NlpStatus::Optimal, "{}", sol.message);
        assert!((sol.objective - 5296.6862039917).abs() / 5296.69 < 1e-6, "{}", sol.objective);
    }
}
