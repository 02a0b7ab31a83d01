//! Runs the fixed-point iteration with line tightening off at the default
//! uncertainty (σ = 1/N², ε = 0.1 for q, v, θ and 0.2 for lines) and prints
//! the per-iteration trace.
//!
//!     cargo run --release --example fixed_point [case ...]

use std::time::Instant;

use ccopf::fixedpoint::{run_fixed_point, FpConfig, FpResult};
use ccopf::netcase::{Network, ParseOptions};
use ccopf::tighten::UncertaintyModel;

pub fn run_example(cases: &[&str]) -> anyhow::Result<Vec<FpResult>> {
    let cfg = FpConfig {
        line_tightening: false,
        ..Default::default()
    };
    let mut out = Vec::new();
    for name in cases {
        let net = Network::load(name, &ParseOptions::default())?;
        let unc = UncertaintyModel::defaults(&net);
        let t0 = Instant::now();
        let res = run_fixed_point(&net, &unc, &cfg)?;
        println!(
            "{name}: {:?} after {} iterations, objective {:.4}, {:.2?}",
            res.status,
            res.iterations,
            res.objective,
            t0.elapsed()
        );
        println!("   k   objective      Δλ_q       Δλ_v       Δλ_θ   N_A");
        for r in &res.trace.records {
            println!(
                "  {:>2} {:>11.4} {:>10.3e} {:>10.3e} {:>10.3e} {:>5}",
                r.k, r.objective, r.dlam[0], r.dlam[1], r.dlam[2], r.n_active
            );
        }
        out.push(res);
    }
    Ok(out)
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cases: Vec<&str> = if args.is_empty() {
        vec!["case9", "case30"]
    } else {
        args.iter().map(String::as_str).collect()
    };
    run_example(&cases)?;
    Ok(())
}
