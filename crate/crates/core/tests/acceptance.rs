//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL ...` line
//! straight to stdout (bypassing the test harness capture) and then asserts.

mod common;

use std::io::Write;
use std::time::Instant;

use ccopf::acpf::{jacobian_j, line_jacobian, power_balance_jacobian, residual_f, residual_g, XYPartition};
use ccopf::bounds::k_gamma_norm_product;
use ccopf::fixedpoint::{run_fixed_point, FpConfig};
use ccopf::mcvalidate::{run_mc, MCConfig};
use ccopf::netcase::Network;
use ccopf::tighten::{compute_tightening, inv_norm_cdf, GammaOperator, UncertaintyModel};
use common::*;

fn report(n: u32, pass: bool, detail: &str) {
    let line = format!("criterion {n}: {} {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

fn check(n: u32, failures: &[String], summary: &str) {
    let pass = failures.is_empty();
    let detail = if pass { summary.to_string() } else { format!("{summary}; {}", failures.join("; ")) };
    report(n, pass, &detail);
    assert!(pass, "criterion {n}: {}", failures.join("; "));
}

fn no_lines() -> FpConfig {
    FpConfig {
        line_tightening: false,
        ..Default::default()
    }
}

#[test]
fn criterion_1_reference_objectives() {
    let mut fails = Vec::new();
    let mut parts = Vec::new();
    for (name, target, limit) in [("case9", 5297.928, 10.0), ("case30", 577.6665, 60.0)] {
        let net = network(name);
        let t0 = Instant::now();
        let r = run_fixed_point(&net, &UncertaintyModel::defaults(&net), &no_lines()).unwrap();
        let secs = t0.elapsed().as_secs_f64();
        let rel = (r.objective - target).abs() / target;
        parts.push(format!("{name} {:.4} ({:.3}% off) in {} iterations, {secs:.2}s", r.objective, 100.0 * rel, r.iterations));
        if !r.converged() {
            fails.push(format!("{name} not converged: {}", r.message));
        }
        if rel > 0.005 {
            fails.push(format!("{name} objective {:.4} vs {target}", r.objective));
        }
        if r.iterations > 10 {
            fails.push(format!("{name} took {} iterations", r.iterations));
        }
        if secs >= limit {
            fails.push(format!("{name} took {secs:.1}s"));
        }
    }
    check(1, &fails, &parts.join(", "));
}

#[test]
fn criterion_2_eps_monotonicity() {
    let cfg = FpConfig {
        auto_rescale_sigma: false,
        ..no_lines()
    };
    let mut fails = Vec::new();
    let mut parts = Vec::new();
    for name in ["case9", "case30"] {
        let net = network(name);
        let mut objs = Vec::new();
        for k in 0..16 {
            let mut unc = UncertaintyModel::defaults(&net);
            unc.eps.v = 0.05 + 0.01 * k as f64;
            let r = run_fixed_point(&net, &unc, &cfg).unwrap();
            if !r.converged() {
                fails.push(format!("{name} ε_v = {} not converged", unc.eps.v));
            }
            objs.push(r.objective);
        }
        let worst = objs.windows(2).map(|w| (w[1] - w[0]) / w[0].abs()).fold(f64::NEG_INFINITY, f64::max);
        if worst > 1e-6 {
            fails.push(format!("{name} objective rises by {worst:.2e} relative"));
        }
        parts.push(format!("{name} {:.4} → {:.4} (largest step {worst:.2e})", objs[0], objs[15]));
    }
    check(2, &fails, &parts.join(", "));
}

#[test]
fn criterion_3_deterministic_limit() {
    let fixture: serde_json::Value =
        serde_json::from_str(include_str!("fixtures/reference_opf.json")).unwrap();
    let mut fails = Vec::new();
    let mut parts = Vec::new();
    for name in ["case9", "case30"] {
        let target = fixture["objective"][name].as_f64().unwrap();
        let net = network(name);
        let unc = UncertaintyModel::defaults(&net).with_sigma(0.0);
        let r = run_fixed_point(&net, &unc, &FpConfig::default()).unwrap();
        let rel = (r.objective - target).abs() / target;
        parts.push(format!("{name} {:.6} vs {target:.6} ({rel:.1e})", r.objective));
        if !r.converged() || r.iterations != 1 {
            fails.push(format!("{name}: {:?} after {} iterations", r.status, r.iterations));
        }
        if rel > 1e-3 {
            fails.push(format!("{name} off by {rel:.2e}"));
        }
    }
    check(3, &fails, &parts.join(", "));
}

#[test]
fn criterion_4_sigma_sweep() {
    let net = network("case9");
    let cfg = FpConfig {
        auto_rescale_sigma: false,
        ..Default::default()
    };
    let alphas = [1.0, 10.0, 1e4, 1e6];
    let mut conv = Vec::new();
    let mut kp_per_alpha = Vec::new();
    for &a in &alphas {
        let unc = UncertaintyModel::defaults(&net).with_sigma(a / 81.0);
        let r = run_fixed_point(&net, &unc, &cfg).unwrap();
        conv.push(r.converged());
        kp_per_alpha.push(r.bound.map_or(f64::NAN, |b| b.k_p) / a);
    }
    let mut fails = Vec::new();
    if !conv[0] {
        fails.push("α = 1 did not converge".into());
    }
    if conv[3] {
        fails.push("α = 1e6 converged".into());
    }
    for k in 1..conv.len() {
        if conv[k] && !conv[k - 1] {
            fails.push(format!("α = {} converged but α = {} did not", alphas[k], alphas[k - 1]));
        }
    }
    let spread = kp_per_alpha.iter().map(|v| (v - kp_per_alpha[0]).abs() / kp_per_alpha[0]).fold(0.0, f64::max);
    if !(spread <= 1e-12) {
        fails.push(format!("K_P/α varies by {spread:.2e}"));
    }
    let flags: String = conv.iter().map(|&c| if c { 'Y' } else { 'N' }).collect();
    check(4, &fails, &format!("flags {flags} over α = 1, 10, 1e4, 1e6; K_P/α = {:.4e}", kp_per_alpha[0]));
}

fn max_rel_diff(a: &nalgebra::DMatrix<f64>, b: &nalgebra::DMatrix<f64>) -> f64 {
    (a - b).amax() / a.amax().max(1.0)
}

fn fd_jacobians(net: &Network, seed: u64) -> (f64, f64, f64) {
    let p = random_point(net, seed);
    let n = net.n_bus();
    let d = net.case.demand();
    let h = 1e-6;
    let ana_f = power_balance_jacobian(net, &p).to_csc().to_dense();
    let ana_g = line_jacobian(net, &p).to_csc().to_dense();
    let mut fd_f = nalgebra::DMatrix::zeros(2 * n, 2 * n);
    let mut fd_g = nalgebra::DMatrix::zeros(net.limited.len(), 2 * n);
    for j in 0..2 * n {
        let mut pp = p.clone();
        let mut pm = p.clone();
        if j < n {
            pp.theta[j] += h;
            pm.theta[j] -= h;
        } else {
            pp.v[j - n] += h;
            pm.v[j - n] -= h;
        }
        let (fp, fm) = (residual_f(net, &pp, &d), residual_f(net, &pm, &d));
        let (gp, gm) = (residual_g(net, &pp), residual_g(net, &pm));
        for i in 0..2 * n {
            fd_f[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
        for i in 0..gp.len() {
            fd_g[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
        }
    }
    // x-space Jacobian through the slot map.
    let part = XYPartition::new(net);
    let x = part.x_of(net, &p);
    let ana_j = jacobian_j(net, &part, &p).to_csc().to_dense();
    let mut fd_j = nalgebra::DMatrix::zeros(2 * n, 2 * n);
    for j in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let fp = residual_f(net, &part.apply_x(&p, &xp), &d);
        let fm = residual_f(net, &part.apply_x(&p, &xm), &d);
        for i in 0..2 * n {
            fd_j[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    (max_rel_diff(&fd_f, &ana_f), max_rel_diff(&fd_g, &ana_g), max_rel_diff(&fd_j, &ana_j))
}

#[test]
fn criterion_5_property_suite() {
    let mut fails = Vec::new();

    // Jacobians against central differences.
    let mut worst_fd: f64 = 0.0;
    for name in ["case9", "case30"] {
        let net = network(name);
        for seed in 0..10 {
            let (a, b, c) = fd_jacobians(&net, seed);
            worst_fd = worst_fd.max(a).max(b).max(c);
        }
    }
    if worst_fd >= 1e-6 {
        fails.push(format!("finite-difference Jacobian error {worst_fd:.2e}"));
    }

    // J·(−Γ) = I on case9.
    let net = network("case9");
    let part = XYPartition::new(&net);
    let point = plain_point(&net);
    let gamma = GammaOperator::new(&net, &part, &point).unwrap();
    let jd = gamma.jacobian().to_dense();
    let dim = gamma.dim();
    let mut inv_err: f64 = 0.0;
    for j in 0..dim {
        let mut e = vec![0.0; dim];
        e[j] = 1.0;
        let col = nalgebra::DVector::from_vec(gamma.apply(&e));
        let prod = -(&jd * col);
        for i in 0..dim {
            inv_err = inv_err.max((prod[i] - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    if inv_err > 1e-8 {
        fails.push(format!("J·(−Γ) − I = {inv_err:.2e}"));
    }

    // Homogeneity in Σ and nonnegativity.
    let unc = UncertaintyModel::defaults(&net);
    let (lam1, _, _) = compute_tightening(&net, &part, &point, &unc, true).unwrap();
    let scaled = UncertaintyModel {
        sigma: unc.sigma.scaled(3.7),
        ..unc.clone()
    };
    let (lam2, _, _) = compute_tightening(&net, &part, &point, &scaled, true).unwrap();
    let pairs = [
        (&lam1.lam_q, &lam2.lam_q),
        (&lam1.lam_v, &lam2.lam_v),
        (&lam1.lam_theta, &lam2.lam_theta),
        (&lam1.lam_g, &lam2.lam_g),
    ];
    let mut homog: f64 = 0.0;
    for (a, b) in pairs {
        for (x, y) in a.iter().zip(b.iter()) {
            if *x != 0.0 {
                homog = homog.max((y / (3.7 * x) - 1.0).abs());
            }
        }
    }
    if homog > 1e-12 {
        fails.push(format!("λ homogeneity error {homog:.2e}"));
    }
    for e in [0.01, 0.1, 0.3, 0.5] {
        let mut u = unc.clone();
        u.eps = ccopf::tighten::EpsilonSet { q: e, v: e, theta: e, g: e };
        let (l, _, _) = compute_tightening(&net, &part, &point, &u, true).unwrap();
        if !l.is_nonnegative() {
            fails.push(format!("negative λ at ε = {e}"));
        }
    }

    // Quantile against the series oracle on a 1e4 grid.
    let mut q_err: f64 = 0.0;
    for k in 1..10_000 {
        let p = k as f64 / 10_000.0;
        q_err = q_err.max((inv_norm_cdf(p).unwrap() - quantile_oracle(p)).abs());
    }
    if q_err > 1e-8 {
        fails.push(format!("quantile error {q_err:.2e}"));
    }

    // Sparse λ against dense oracles, and the norm-product bound against SVD.
    let mut lam_err: f64 = 0.0;
    let mut bound_gap = f64::INFINITY;
    for name in ["case9", "case30"] {
        let net = network(name);
        let part = XYPartition::new(&net);
        let point = plain_point(&net);
        let unc = UncertaintyModel::defaults(&net);
        let (lam, _, gamma) = compute_tightening(&net, &part, &point, &unc, true).unwrap();
        let g = dense_gamma(&net, &part, &point);
        let sig = unc.sigma.to_dense();
        let rows = row_norms_times(&g, &sig);
        let z = inv_norm_cdf(0.9).unwrap();
        for (r, target) in slot_targets(&net, &part).into_iter().enumerate() {
            let Some((class, idx)) = target else { continue };
            let got = [&lam.lam_q, &lam.lam_v, &lam.lam_theta][class][idx];
            lam_err = lam_err.max((got - z * rows[r]).abs());
        }
        let gx = dense_g_x(&net, &part, &point);
        let line_rows = row_norms_times(&(&gx * &g), &sig);
        let zg = inv_norm_cdf(0.8).unwrap();
        for (k, &b) in net.limited.iter().enumerate() {
            lam_err = lam_err.max((lam.lam_g[b] - unc.gamma_g * zg * line_rows[k]).abs());
        }
        let svd = jacobian_j(&net, &part, &point).to_csc().to_dense().singular_values();
        let inv_norm = 1.0 / svd.min();
        bound_gap = bound_gap.min(k_gamma_norm_product(&gamma) - inv_norm);
    }
    if lam_err > 1e-10 {
        fails.push(format!("sparse vs dense λ {lam_err:.2e}"));
    }
    if bound_gap < 0.0 {
        fails.push(format!("norm-product K_Γ below ‖J⁻¹‖₂ by {:.2e}", -bound_gap));
    }

    check(
        5,
        &fails,
        &format!(
            "FD {worst_fd:.1e}, J·(−Γ)−I {inv_err:.1e}, homogeneity {homog:.1e}, quantile {q_err:.1e}, dense λ {lam_err:.1e}, K_Γ − ‖J⁻¹‖₂ ≥ {bound_gap:.2e}"
        ),
    );
}

#[test]
fn criterion_6_monte_carlo() {
    let net = network("case9");
    let sol = run_fixed_point(&net, &UncertaintyModel::defaults(&net), &FpConfig::default()).unwrap();
    let mut fails = Vec::new();
    if !sol.converged() {
        fails.push(format!("solution not converged: {}", sol.message));
    }
    let cfg = MCConfig::defaults(&net, 2024).unwrap();
    let a = run_mc(&net, &sol.point, &cfg).unwrap();
    let b = run_mc(&net, &sol.point, &cfg).unwrap();
    if a.marginals.iter().any(|&m| a.joint > m) {
        fails.push("joint exceeds a marginal".into());
    }
    if a.joint <= a.product_of_marginals {
        fails.push(format!("joint {} not above product {}", a.joint, a.product_of_marginals));
    }
    if serde_json::to_string(&a).unwrap() != serde_json::to_string(&b).unwrap() {
        fails.push("repeated run differs".into());
    }
    check(
        6,
        &fails,
        &format!(
            "joint {:.3}, product {:.3}, {} of {} samples solved",
            a.joint, a.product_of_marginals, a.n_successful, a.n_samples
        ),
    );
}

#[test]
fn criterion_7_load_perturbation() {
    let t0 = Instant::now();
    let base = network("case9");
    let cfg = FpConfig::default();
    let reference = run_fixed_point(&base, &UncertaintyModel::defaults(&base), &cfg).unwrap();
    let mut fails = Vec::new();
    let mut pts = Vec::new();
    for k in 0..9 {
        let s = 0.8 + 0.05 * k as f64;
        let net = base.scaled_demand(s).unwrap();
        let r = run_fixed_point(&net, &UncertaintyModel::defaults(&net), &cfg).unwrap();
        if !r.converged() {
            fails.push(format!("scale {s:.2} not converged"));
        }
        pts.push((s, if r.converged() { r.objective / reference.objective } else { 0.0 }));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let r2 = sxy * sxy / (sxx * syy);
    if !(r2 > 0.95) {
        fails.push(format!("R² = {r2:.4}"));
    }
    let secs = t0.elapsed().as_secs_f64();
    if secs >= 120.0 {
        fails.push(format!("took {secs:.1}s"));
    }
    check(7, &fails, &format!("9 scales, R² = {r2:.5}, {secs:.2}s"));
}
