//! Computes the constraint tightenings at the deterministic optimum: the
//! sensitivity of the stochastic variables to demand errors, scaled by the
//! normal quantile of each violation probability.
//!
//!     cargo run --release --example tightenings [case]

use ccopf::acpf::XYPartition;
use ccopf::bounds::{k1, k_gamma_norm_product};
use ccopf::netcase::{Network, ParseOptions};
use ccopf::nlp::{solve_nlp, NlpOptions};
use ccopf::opf::OpfProblem;
use ccopf::tighten::{compute_tightening, TighteningVector, UncertaintyModel};

fn max(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m: f64, x| m.max(*x))
}

pub fn run_example(name: &str) -> anyhow::Result<TighteningVector> {
    let net = Network::load(name, &ParseOptions::default())?;
    let prob = OpfProblem::plain(&net);
    let sol = solve_nlp(&prob, &NlpOptions::default());
    let point = prob.point_of(&sol.x);
    let unc = UncertaintyModel::defaults(&net);
    let part = XYPartition::new(&net);
    let (lam, rows, gamma) = compute_tightening(&net, &part, &point, &unc, true)?;

    println!("{name}: Σ = {:.4e}·I, quantile bound K1 = {:.4}", 1.0 / (net.n_bus() as f64).powi(2), k1(&unc));
    println!("  sqrt(‖Γ‖₁‖Γ‖∞) = {:.4e}, |det J| = {:.4e}", k_gamma_norm_product(&gamma), gamma.abs_det());
    println!("  max λ_q {:.3e}  λ_v {:.3e}  λ_θ {:.3e}  λ_g {:.3e}", max(&lam.lam_q), max(&lam.lam_v), max(&lam.lam_theta), max(&lam.lam_g));
    let mut top: Vec<_> = rows.iter().collect();
    top.sort_by(|a, b| b.lambda.total_cmp(&a.lambda));
    println!("  largest tightenings:");
    for r in top.iter().take(5) {
        println!("    {:>5} #{:<3} z {:.3} row norm {:.3e} λ {:.3e}", r.class.label(), r.index, r.z, r.row_norm, r.lambda);
    }
    Ok(lam)
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example(&std::env::args().nth(1).unwrap_or_else(|| "case9".into()))?;
    Ok(())
}
