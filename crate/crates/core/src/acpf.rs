//! Power flow equations in polar form, branch voltage-difference constraints,
//! their first and second derivatives, and a Newton power-flow solver.
//!
//! Two coordinate systems are used:
//! * the *full state* `(θ_0..θ_{N-1}, v_0..v_{N-1})` used by the OPF, and
//! * the stochastic response vector `x` of length 2N described by
//!   [`XYPartition`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netcase::Network;
use crate::sparse::{SparseLu, Triplets};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    /// Zero at load buses.
    pub p_g: Vec<f64>,
    pub q_g: Vec<f64>,
}

impl OperatingPoint {
    /// v = 1, θ = 0, no generation.
    pub fn flat(n: usize) -> Self {
        Self {
            v: vec![1.0; n],
            theta: vec![0.0; n],
            p_g: vec![0.0; n],
            q_g: vec![0.0; n],
        }
    }

    pub fn is_finite(&self) -> bool {
        [&self.v, &self.theta, &self.p_g, &self.q_g]
            .iter()
            .all(|s| s.iter().all(|x| x.is_finite()))
    }
}

/// Meaning of one entry of `x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XSlot {
    ReactiveGen { gen: usize, bus: usize },
    LoadVoltage { bus: usize },
    Angle { bus: usize },
    /// Real power of the reference-bus generator. It occupies the slot of the
    /// reference angle, which stays pinned at zero; this absorbs the power
    /// imbalance and keeps J nonsingular.
    SlackPower { gen: usize, bus: usize },
}

/// Split of the operating point into the stochastic response `x`
/// (q at generator buses, v at load buses, angles) and the deterministic
/// dispatch `y` (p at generator buses). Generator voltages belong to neither.
#[derive(Debug, Clone)]
pub struct XYPartition {
    n: usize,
    n_gen: usize,
    slots: Vec<XSlot>,
    load_slot: Vec<Option<usize>>,
    angle_slot: Vec<Option<usize>>,
    slack_slot: usize,
}

impl XYPartition {
    pub fn new(net: &Network) -> Self {
        let n = net.n_bus();
        let ng = net.n_gen();
        let nl = net.n_load();
        let ref_bus = net.ref_bus();
        let mut slots = Vec::with_capacity(2 * n);
        for (g, gen) in net.case.generators.iter().enumerate() {
            slots.push(XSlot::ReactiveGen { gen: g, bus: gen.bus });
        }
        let mut load_slot = vec![None; n];
        for (k, &b) in net.load_buses.iter().enumerate() {
            load_slot[b] = Some(ng + k);
            slots.push(XSlot::LoadVoltage { bus: b });
        }
        let mut angle_slot = vec![None; n];
        for i in 0..n {
            if i == ref_bus {
                slots.push(XSlot::SlackPower { gen: net.ref_gen(), bus: i });
            } else {
                angle_slot[i] = Some(ng + nl + i);
                slots.push(XSlot::Angle { bus: i });
            }
        }
        Self {
            n,
            n_gen: ng,
            slots,
            load_slot,
            angle_slot,
            slack_slot: ng + nl + ref_bus,
        }
    }

    pub fn dim_x(&self) -> usize {
        2 * self.n
    }

    pub fn dim_y(&self) -> usize {
        self.n_gen
    }

    pub fn slots(&self) -> &[XSlot] {
        &self.slots
    }

    pub fn slot(&self, r: usize) -> XSlot {
        self.slots[r]
    }

    pub fn load_voltage_slot(&self, bus: usize) -> Option<usize> {
        self.load_slot[bus]
    }

    pub fn angle_slot(&self, bus: usize) -> Option<usize> {
        self.angle_slot[bus]
    }

    pub fn slack_slot(&self) -> usize {
        self.slack_slot
    }

    pub fn x_of(&self, net: &Network, p: &OperatingPoint) -> Vec<f64> {
        self.slots
            .iter()
            .map(|s| match *s {
                XSlot::ReactiveGen { bus, .. } => p.q_g[bus],
                XSlot::LoadVoltage { bus } => p.v[bus],
                XSlot::Angle { bus } => p.theta[bus],
                XSlot::SlackPower { bus, .. } => {
                    debug_assert_eq!(bus, net.ref_bus());
                    p.p_g[bus]
                }
            })
            .collect()
    }

    /// p at generator buses, in generator order.
    pub fn y_of(&self, net: &Network, p: &OperatingPoint) -> Vec<f64> {
        net.case.generators.iter().map(|g| p.p_g[g.bus]).collect()
    }

    /// Replaces the x-entries of `base`; v_G, θ_ref and the non-slack
    /// dispatch are kept.
    pub fn apply_x(&self, base: &OperatingPoint, x: &[f64]) -> OperatingPoint {
        assert_eq!(x.len(), self.dim_x());
        let mut p = base.clone();
        for (s, &val) in self.slots.iter().zip(x) {
            match *s {
                XSlot::ReactiveGen { bus, .. } => p.q_g[bus] = val,
                XSlot::LoadVoltage { bus } => p.v[bus] = val,
                XSlot::Angle { bus } => p.theta[bus] = val,
                XSlot::SlackPower { bus, .. } => p.p_g[bus] = val,
            }
        }
        p
    }

    /// Rebuilds a point from (x, y, v_G). The reference angle is 0 and the
    /// slack dispatch is taken from x, overriding its entry in y.
    pub fn assemble(&self, net: &Network, x: &[f64], y: &[f64], v_gen: &[f64]) -> OperatingPoint {
        assert_eq!(y.len(), self.n_gen);
        assert_eq!(v_gen.len(), self.n_gen);
        let mut base = OperatingPoint::flat(self.n);
        for (g, gen) in net.case.generators.iter().enumerate() {
            base.p_g[gen.bus] = y[g];
            base.v[gen.bus] = v_gen[g];
        }
        self.apply_x(&base, x)
    }
}

/// Net injections (P_i, Q_i) drawn by the network at each bus.
pub fn injections(net: &Network, v: &[f64], theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let y = &net.ybus;
    let n = y.n();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for i in 0..n {
        let (gii, bii) = y.diag[i];
        let (mut sp, mut sq) = (0.0, 0.0);
        for &(k, g, b) in &y.off_diag[i] {
            let (s, c) = (theta[i] - theta[k]).sin_cos();
            sp += v[k] * (g * c + b * s);
            sq += v[k] * (g * s - b * c);
        }
        p[i] = v[i] * (v[i] * gii + sp);
        q[i] = v[i] * (-v[i] * bii + sq);
    }
    (p, q)
}

/// Power balance residuals: entry i is P_i − (p_g − p_d), entry N+i is
/// Q_i − (q_g − q_d). `d` stacks (p_d, q_d).
pub fn residual_f(net: &Network, point: &OperatingPoint, d: &[f64]) -> Vec<f64> {
    let n = net.n_bus();
    assert_eq!(d.len(), 2 * n, "demand vector must have length 2N");
    let (p, q) = injections(net, &point.v, &point.theta);
    let mut f = vec![0.0; 2 * n];
    for i in 0..n {
        f[i] = p[i] - (point.p_g[i] - d[i]);
        f[n + i] = q[i] - (point.q_g[i] - d[n + i]);
    }
    f
}

/// D² − |V_i − V_k|² for every limited branch (≥ 0 is feasible).
pub fn residual_g(net: &Network, point: &OperatingPoint) -> Vec<f64> {
    let (v, th) = (&point.v, &point.theta);
    net.limited
        .iter()
        .map(|&l| {
            let br = &net.case.branches[l];
            let (i, k) = (br.from, br.to);
            let d = br.d_max.expect("limited branch");
            let re = v[i] * th[i].cos() - v[k] * th[k].cos();
            let im = v[i] * th[i].sin() - v[k] * th[k].sin();
            d * d - re * re - im * im
        })
        .collect()
}

#[inline]
fn theta_col(bus: usize) -> usize {
    bus
}

#[inline]
fn v_col(n: usize, bus: usize) -> usize {
    n + bus
}

/// ∂(P, Q)/∂(θ, v) over the full state: 2N × 2N, rows P then Q.
pub fn power_balance_jacobian(net: &Network, point: &OperatingPoint) -> Triplets {
    let y = &net.ybus;
    let n = y.n();
    let (v, th) = (&point.v, &point.theta);
    let nnz: usize = y.off_diag.iter().map(Vec::len).sum::<usize>() * 4 + 4 * n;
    let mut t = Triplets::with_capacity(2 * n, 2 * n, nnz);
    for i in 0..n {
        let (gii, bii) = y.diag[i];
        let (mut sp, mut sq) = (0.0, 0.0);
        for &(k, g, b) in &y.off_diag[i] {
            let (s, c) = (th[i] - th[k]).sin_cos();
            let a = g * c + b * s;
            let bb = g * s - b * c;
            sp += v[k] * a;
            sq += v[k] * bb;
            t.push(i, v_col(n, k), v[i] * a);
            t.push(n + i, v_col(n, k), v[i] * bb);
            t.push(i, theta_col(k), v[i] * v[k] * bb);
            t.push(n + i, theta_col(k), -v[i] * v[k] * a);
        }
        t.push(i, v_col(n, i), sp + 2.0 * v[i] * gii);
        t.push(n + i, v_col(n, i), sq - 2.0 * v[i] * bii);
        t.push(i, theta_col(i), -v[i] * sq);
        t.push(n + i, theta_col(i), v[i] * sp);
    }
    t
}

/// ∂g/∂(θ, v) over the full state: one row per limited branch.
pub fn line_jacobian(net: &Network, point: &OperatingPoint) -> Triplets {
    let n = net.n_bus();
    let (v, th) = (&point.v, &point.theta);
    let mut t = Triplets::with_capacity(net.limited.len(), 2 * n, 4 * net.limited.len());
    for (row, &l) in net.limited.iter().enumerate() {
        let br = &net.case.branches[l];
        let (i, k) = (br.from, br.to);
        let (s, c) = (th[i] - th[k]).sin_cos();
        t.push(row, v_col(n, i), -2.0 * v[i] + 2.0 * v[k] * c);
        t.push(row, v_col(n, k), -2.0 * v[k] + 2.0 * v[i] * c);
        t.push(row, theta_col(i), -2.0 * v[i] * v[k] * s);
        t.push(row, theta_col(k), 2.0 * v[i] * v[k] * s);
    }
    t
}

/// Pushes a symmetric-matrix entry into a lower-triangle triplet list.
#[inline]
fn push_lower(t: &mut Triplets, r: usize, c: usize, val: f64) {
    if r >= c {
        t.push(r, c, val);
    } else {
        t.push(c, r, val);
    }
}

/// Adds Σ_i (mult_p[i] ∇²P_i + mult_q[i] ∇²Q_i) over the full state to `t`
/// (lower triangle).
pub fn add_power_balance_hessian(
    net: &Network,
    point: &OperatingPoint,
    mult_p: &[f64],
    mult_q: &[f64],
    t: &mut Triplets,
) {
    let y = &net.ybus;
    let n = y.n();
    let (v, th) = (&point.v, &point.theta);
    for i in 0..n {
        let (lp, lq) = (mult_p[i], mult_q[i]);
        if lp == 0.0 && lq == 0.0 {
            continue;
        }
        let (gii, bii) = y.diag[i];
        push_lower(t, v_col(n, i), v_col(n, i), 2.0 * (lp * gii - lq * bii));
        for &(k, g, b) in &y.off_diag[i] {
            let (s, c) = (th[i] - th[k]).sin_cos();
            let a = g * c + b * s;
            let bb = g * s - b * c;
            let alpha = lp * a + lq * bb;
            let beta = lq * a - lp * bb;
            let (vi, vk, ti, tk) = (v_col(n, i), v_col(n, k), theta_col(i), theta_col(k));
            let vv = v[i] * v[k];
            push_lower(t, vi, vk, alpha);
            push_lower(t, vi, ti, v[k] * beta);
            push_lower(t, vi, tk, -v[k] * beta);
            push_lower(t, vk, ti, v[i] * beta);
            push_lower(t, vk, tk, -v[i] * beta);
            push_lower(t, ti, ti, -vv * alpha);
            push_lower(t, ti, tk, vv * alpha);
            push_lower(t, tk, tk, -vv * alpha);
        }
    }
}

/// Adds Σ_l mult[l] ∇²g_l over the full state to `t` (lower triangle).
pub fn add_line_hessian(net: &Network, point: &OperatingPoint, mult: &[f64], t: &mut Triplets) {
    let n = net.n_bus();
    let (v, th) = (&point.v, &point.theta);
    for (row, &l) in net.limited.iter().enumerate() {
        let m = mult[row];
        if m == 0.0 {
            continue;
        }
        let br = &net.case.branches[l];
        let (i, k) = (br.from, br.to);
        let (s, c) = (th[i] - th[k]).sin_cos();
        let (vi, vk, ti, tk) = (v_col(n, i), v_col(n, k), theta_col(i), theta_col(k));
        let vv = v[i] * v[k];
        push_lower(t, vi, vi, -2.0 * m);
        push_lower(t, vk, vk, -2.0 * m);
        push_lower(t, vi, vk, 2.0 * c * m);
        push_lower(t, vi, ti, -2.0 * v[k] * s * m);
        push_lower(t, vi, tk, 2.0 * v[k] * s * m);
        push_lower(t, vk, ti, -2.0 * v[i] * s * m);
        push_lower(t, vk, tk, 2.0 * v[i] * s * m);
        push_lower(t, ti, ti, -2.0 * vv * c * m);
        push_lower(t, ti, tk, 2.0 * vv * c * m);
        push_lower(t, tk, tk, -2.0 * vv * c * m);
    }
}

/// Maps a full-state column (θ or v) to its x slot, if any.
fn full_to_x(part: &XYPartition, n: usize, col: usize) -> Option<usize> {
    if col < n {
        part.angle_slot(col)
    } else {
        part.load_voltage_slot(col - n)
    }
}

/// J = ∂f/∂x, 2N × 2N with columns ordered (q_G, v_L, angles/slack).
pub fn jacobian_j(net: &Network, part: &XYPartition, point: &OperatingPoint) -> Triplets {
    let n = net.n_bus();
    let full = power_balance_jacobian(net, point);
    let mut t = Triplets::with_capacity(2 * n, 2 * n, full.len() + n);
    for (r, c, val) in full.iter() {
        if let Some(xc) = full_to_x(part, n, c) {
            t.push(r, xc, val);
        }
    }
    for (r, s) in part.slots().iter().enumerate() {
        match *s {
            XSlot::ReactiveGen { bus, .. } => t.push(n + bus, r, -1.0),
            XSlot::SlackPower { bus, .. } => t.push(bus, r, -1.0),
            _ => {}
        }
    }
    t
}

/// ∂g/∂x: one row per limited branch, 2N columns (q_G and slack columns
/// are structurally zero).
pub fn jacobian_g_x(net: &Network, part: &XYPartition, point: &OperatingPoint) -> Triplets {
    let n = net.n_bus();
    let full = line_jacobian(net, point);
    let mut t = Triplets::with_capacity(full.nrows(), 2 * n, full.len());
    for (r, c, val) in full.iter() {
        if let Some(xc) = full_to_x(part, n, c) {
            t.push(r, xc, val);
        }
    }
    t
}

#[derive(Debug, Clone, Copy)]
pub struct PfOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for PfOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 30,
            max_halvings: 6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PfSolution {
    pub x: Vec<f64>,
    pub point: OperatingPoint,
    pub iterations: usize,
    pub residual_inf: f64,
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Solves f(x, y; d) = 0 for x by damped Newton, starting from the x-part of
/// `base`; y, v_G and θ_ref are taken from `base` and held fixed.
pub fn solve_pf(
    net: &Network,
    part: &XYPartition,
    base: &OperatingPoint,
    d: &[f64],
    opts: &PfOptions,
) -> Result<PfSolution> {
    let mut x = part.x_of(net, base);
    let mut point = base.clone();
    let mut f = residual_f(net, &point, d);
    let mut res2 = norm2(&f);
    for it in 0..=opts.max_iter {
        let res = norm_inf(&f);
        if !res.is_finite() {
            return Err(Error::PowerFlow(format!("non-finite residual at step {it}")));
        }
        if res <= opts.tol {
            return Ok(PfSolution {
                x,
                point,
                iterations: it,
                residual_inf: res,
            });
        }
        if it == opts.max_iter {
            break;
        }
        let jac = jacobian_j(net, part, &point).to_csc();
        let lu = SparseLu::factor_with_shift(&jac)?;
        let mut dx: Vec<f64> = f.iter().map(|v| -v).collect();
        lu.solve_in_place(&mut dx);

        let mut step = 1.0;
        let mut accepted = None;
        for h in 0..=opts.max_halvings {
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + step * b).collect();
            let tp = part.apply_x(&point, &trial);
            let tf = residual_f(net, &tp, d);
            let t2 = norm2(&tf);
            let ok = t2.is_finite() && tp.v.iter().all(|&v| v > 0.0);
            if ok && (t2 < res2 || h == opts.max_halvings) {
                accepted = Some((trial, tp, tf, t2));
                break;
            }
            step *= 0.5;
        }
        let Some((nx, np, nf, n2)) = accepted else {
            return Err(Error::PowerFlow(format!(
                "Newton step left the domain at step {it} (residual {res:.3e})"
            )));
        };
        x = nx;
        point = np;
        f = nf;
        res2 = n2;
    }
    Err(Error::PowerFlow(format!(
        "no convergence in {} Newton steps (residual {:.3e})",
        opts.max_iter,
        norm_inf(&f)
    )))
}
