//! Solves the deterministic OPF, then re-solves the power flow with the
//! dispatch and generator voltages held fixed while the demand is perturbed.
//!
//!     cargo run --release --example power_flow [case] [perturbation]

use ccopf::acpf::{residual_f, solve_pf, PfOptions, XYPartition};
use ccopf::netcase::{Network, ParseOptions};
use ccopf::nlp::{solve_nlp, NlpOptions};
use ccopf::opf::OpfProblem;

/// Returns the largest load-bus voltage change caused by the perturbation.
pub fn run_example(name: &str, delta: f64) -> anyhow::Result<f64> {
    let net = Network::load(name, &ParseOptions::default())?;
    let prob = OpfProblem::plain(&net);
    let sol = solve_nlp(&prob, &NlpOptions::default());
    let base = prob.point_of(&sol.x);
    let d0 = net.case.demand();
    let r0 = residual_f(&net, &base, &d0).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    println!("{name}: OPF objective {:.4}, power-balance residual {r0:.2e}", sol.objective);

    // Every active and reactive demand moves by `delta` p.u.
    let d: Vec<f64> = d0.iter().map(|v| v + delta).collect();
    let part = XYPartition::new(&net);
    let pf = solve_pf(&net, &part, &base, &d, &PfOptions::default())?;
    println!(
        "perturbed by {delta} p.u. per entry: {} Newton steps, residual {:.2e}",
        pf.iterations, pf.residual_inf
    );
    let mut worst = 0.0f64;
    for &b in &net.load_buses {
        let dv = pf.point.v[b] - base.v[b];
        worst = worst.max(dv.abs());
        println!("  bus {:>3}: v {:.5} -> {:.5}", net.case.buses[b].id, base.v[b], pf.point.v[b]);
    }
    let ref_gen = net.ref_gen();
    let slack_bus = net.case.generators[ref_gen].bus;
    println!(
        "  slack generator output {:.5} -> {:.5} p.u.",
        base.p_g[slack_bus], pf.point.p_g[slack_bus]
    );
    Ok(worst)
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "case9".into());
    let delta = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0.01);
    run_example(&name, delta)?;
    Ok(())
}
