//! Independent oracles shared by the integration tests: a Maclaurin-series
//! normal CDF with bisection, and dense-matrix versions of Γ and λ.
#![allow(dead_code)]

use ccopf::acpf::{jacobian_g_x, jacobian_j, OperatingPoint, XSlot, XYPartition};
use ccopf::netcase::{Network, ParseOptions};
use ccopf::nlp::{solve_nlp, NlpOptions};
use ccopf::opf::OpfProblem;
use nalgebra::DMatrix;

pub fn network(name: &str) -> Network {
    Network::load(name, &ParseOptions::default()).unwrap()
}

/// erf by its Maclaurin series, summed until the terms vanish.
pub fn erf_series(z: f64) -> f64 {
    let mut sum = 0.0;
    let mut power = z; // z^(2n+1) / n!
    for n in 0..400 {
        let term = power / (2 * n + 1) as f64;
        sum += if n % 2 == 0 { term } else { -term };
        if term.abs() < 1e-18 * sum.abs().max(1e-300) {
            break;
        }
        power *= z * z / (n + 1) as f64;
    }
    2.0 / std::f64::consts::PI.sqrt() * sum
}

pub fn cdf_oracle(x: f64) -> f64 {
    0.5 * (1.0 + erf_series(x / std::f64::consts::SQRT_2))
}

/// Quantile by bisection on the series CDF.
pub fn quantile_oracle(p: f64) -> f64 {
    let (mut lo, mut hi) = (-9.0, 9.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf_oracle(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Deterministic OPF solution point.
pub fn plain_point(net: &Network) -> OperatingPoint {
    let prob = OpfProblem::plain(net);
    let sol = solve_nlp(&prob, &NlpOptions::default());
    prob.point_of(&sol.x)
}

pub fn dense_gamma(net: &Network, part: &XYPartition, point: &OperatingPoint) -> DMatrix<f64> {
    let j = jacobian_j(net, part, point).to_csc().to_dense();
    -j.try_inverse().expect("J invertible")
}

pub fn dense_g_x(net: &Network, part: &XYPartition, point: &OperatingPoint) -> DMatrix<f64> {
    jacobian_g_x(net, part, point).to_csc().to_dense()
}

/// Row norms of M Σ for a dense Σ.
pub fn row_norms_times(m: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Vec<f64> {
    let p = m * sigma;
    (0..p.nrows()).map(|r| p.row(r).norm()).collect()
}

/// Position of each x slot's class index, for comparing against the
/// tightening vector: (class, index) with class 0 = q, 1 = v, 2 = θ.
pub fn slot_targets(net: &Network, part: &XYPartition) -> Vec<Option<(usize, usize)>> {
    part.slots()
        .iter()
        .map(|s| match *s {
            XSlot::ReactiveGen { gen, .. } => Some((0, gen)),
            XSlot::LoadVoltage { bus } => Some((1, net.load_buses.iter().position(|&b| b == bus).unwrap())),
            XSlot::Angle { bus } if bus != net.ref_bus() => Some((2, bus)),
            _ => None,
        })
        .collect()
}

/// Point with voltages and angles spread inside their bounds, from a simple
/// deterministic generator.
pub fn random_point(net: &Network, seed: u64) -> OperatingPoint {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut next = move || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    let n = net.n_bus();
    let mut p = OperatingPoint::flat(n);
    for (i, b) in net.case.buses.iter().enumerate() {
        p.v[i] = b.v_min + (b.v_max - b.v_min) * next();
        p.theta[i] = if i == net.ref_bus() { 0.0 } else { 0.6 * (next() - 0.5) };
    }
    for g in &net.case.generators {
        p.p_g[g.bus] = g.p_min + (g.p_max - g.p_min) * next();
        p.q_g[g.bus] = g.q_min + (g.q_max - g.q_min) * next();
    }
    p
}
