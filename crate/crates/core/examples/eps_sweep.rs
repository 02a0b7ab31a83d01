//! Optimal cost as the voltage violation probability ε_v varies, with line
//! tightening and Σ rescaling off.
//!
//!     cargo run --release --example eps_sweep [case]

use ccopf::fixedpoint::{run_fixed_point, FpConfig};
use ccopf::netcase::{Network, ParseOptions};
use ccopf::tighten::UncertaintyModel;

/// (ε_v, objective) pairs.
pub fn run_example(name: &str, grid: &[f64]) -> anyhow::Result<Vec<(f64, f64)>> {
    let net = Network::load(name, &ParseOptions::default())?;
    let cfg = FpConfig {
        line_tightening: false,
        auto_rescale_sigma: false,
        ..Default::default()
    };
    let mut out = Vec::new();
    println!("{name}");
    for &e in grid {
        let mut unc = UncertaintyModel::defaults(&net);
        unc.eps.v = e;
        let res = run_fixed_point(&net, &unc, &cfg)?;
        anyhow::ensure!(res.converged(), "ε_v = {e}: {}", res.message);
        println!("  1 - ε_v = {:.2}  objective {:.6}", 1.0 - e, res.objective);
        out.push((e, res.objective));
    }
    Ok(out)
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "case9".into());
    let grid: Vec<f64> = (0..16).map(|k| 0.05 + 0.01 * k as f64).collect();
    run_example(&name, &grid)?;
    Ok(())
}
