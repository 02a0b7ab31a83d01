//! Bound estimate on the fixed-point map at the first subproblem, and how
//! convergence changes when σ grows by factors α (Σ rescaling disabled).
//!
//!     cargo run --release --example convergence_bound [case]

use ccopf::bounds::BoundReport;
use ccopf::fixedpoint::{run_fixed_point, FpConfig};
use ccopf::netcase::{Network, ParseOptions};
use ccopf::tighten::UncertaintyModel;

/// Returns the bound report at α = 1 and the converged flag per α.
pub fn run_example(name: &str, alphas: &[f64]) -> anyhow::Result<(BoundReport, Vec<bool>)> {
    let net = Network::load(name, &ParseOptions::default())?;
    let n2 = (net.n_bus() * net.n_bus()) as f64;
    let cfg = FpConfig {
        auto_rescale_sigma: false,
        ..Default::default()
    };
    let base = run_fixed_point(&net, &UncertaintyModel::defaults(&net), &cfg)?;
    let report = base.bound.clone().ok_or_else(|| anyhow::anyhow!("no bound: {}", base.message))?;
    println!("{name} at σ = 1/N²:");
    println!("  K1 {:.4}  K_Γ {:.4e}  N_A {}  ‖Σ‖ {:.4e}", report.k1, report.k_gamma, report.n_active, report.sigma_norm);
    println!("  K_P {:.4e}  B0 {:.4e}  (contraction guaranteed: {})", report.k_p, report.b0, report.convergence_guaranteed);

    let mut flags = Vec::new();
    println!("  {:>8} {:>11} {:>11}  converged", "α", "σ", "K_P");
    for &alpha in alphas {
        let unc = UncertaintyModel::defaults(&net).with_sigma(alpha / n2);
        let res = run_fixed_point(&net, &unc, &cfg)?;
        let kp = res.bound.as_ref().map_or(f64::NAN, |b| b.k_p);
        println!("  {alpha:>8e} {:>11.4e} {kp:>11.4e}  {}", alpha / n2, if res.converged() { "Y" } else { "N" });
        flags.push(res.converged());
    }
    Ok((report, flags))
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "case9".into());
    run_example(&name, &[1.0, 10.0, 1e4, 1e6])?;
    Ok(())
}
