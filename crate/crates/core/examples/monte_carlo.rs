//! Solves case9 without Σ rescaling, then samples correlated demand errors
//! and counts how often the voltage caps v ≤ 1.1 hold, one at a time and
//! jointly.
//!
//!     cargo run --release --example monte_carlo [samples] [seed]

use ccopf::fixedpoint::{run_fixed_point, FpConfig};
use ccopf::mcvalidate::{run_mc, MCConfig, MCReport};
use ccopf::netcase::{Network, ParseOptions};
use ccopf::tighten::UncertaintyModel;

pub fn run_example(samples: usize, seed: u64) -> anyhow::Result<MCReport> {
    let net = Network::load("case9", &ParseOptions::default())?;
    let cfg = FpConfig {
        auto_rescale_sigma: false,
        ..Default::default()
    };
    let sol = run_fixed_point(&net, &UncertaintyModel::defaults(&net), &cfg)?;
    anyhow::ensure!(sol.converged(), "{}", sol.message);
    let mut mc = MCConfig::defaults(&net, seed)?;
    mc.n_samples = samples;
    let rep = run_mc(&net, &sol.point, &mc)?;
    println!("covariance: {}", rep.covariance_note);
    println!("{} samples, {} power-flow failures", rep.n_samples, rep.n_failed);
    for (c, m) in rep.audit.iter().zip(&rep.marginals) {
        println!("  v[{}] ≤ {}: {:.3}", net.case.buses[c.bus].id, c.upper, m);
    }
    println!("joint {:.4}, product of marginals {:.4}", rep.joint, rep.product_of_marginals);
    println!("satisfied-count histogram {:?}", rep.histogram);
    Ok(rep)
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let samples = args.next().map(|s| s.parse()).transpose()?.unwrap_or(500);
    let seed = args.next().map(|s| s.parse()).transpose()?.unwrap_or(42);
    run_example(samples, seed)?;
    Ok(())
}
