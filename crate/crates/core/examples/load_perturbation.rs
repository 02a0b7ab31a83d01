//! Scales every demand between 80% and 120% and reports the optimal cost
//! relative to the unscaled case, with a least-squares line through it.
//!
//!     cargo run --release --example load_perturbation [case]

use ccopf::fixedpoint::{run_fixed_point, FpConfig};
use ccopf::netcase::{Network, ParseOptions};
use ccopf::tighten::UncertaintyModel;

/// (scale, normalized objective) pairs (0 when not converged) and R² of the fit.
pub fn run_example(name: &str, scales: &[f64]) -> anyhow::Result<(Vec<(f64, f64)>, f64)> {
    let base = Network::load(name, &ParseOptions::default())?;
    let cfg = FpConfig::default();
    let reference = run_fixed_point(&base, &UncertaintyModel::defaults(&base), &cfg)?;
    anyhow::ensure!(reference.converged(), "{}", reference.message);
    let mut pts = Vec::new();
    for &s in scales {
        let net = base.scaled_demand(s)?;
        let res = run_fixed_point(&net, &UncertaintyModel::defaults(&net), &cfg)?;
        let y = if res.converged() { res.objective / reference.objective } else { 0.0 };
        println!("  scale {s:.2}  normalized objective {y:.5}");
        pts.push((s, y));
    }
    let r2 = r_squared(&pts);
    println!("{name}: linear fit R² = {r2:.5}");
    Ok((pts, r2))
}

pub fn r_squared(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    sxy * sxy / (sxx * syy)
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "case9".into());
    let scales: Vec<f64> = (0..9).map(|k| 0.8 + 0.05 * k as f64).collect();
    run_example(&name, &scales)?;
    Ok(())
}
