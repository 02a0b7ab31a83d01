//! Solves the plain AC-OPF (no tightening) for the shipped cases with the
//! interior-point solver and prints objective, iterations and timing.
//!
//!     cargo run --release --example deterministic_opf [case ...]

use std::time::Instant;

use ccopf::netcase::{Network, ParseOptions};
use ccopf::nlp::{solve_nlp, NlpOptions};
use ccopf::opf::{active_set, OpfProblem};

pub fn run_example(cases: &[&str]) -> anyhow::Result<Vec<f64>> {
    let mut objectives = Vec::new();
    for name in cases {
        let net = Network::load(name, &ParseOptions::default())?;
        let t0 = Instant::now();
        let sol = solve_nlp(&OpfProblem::plain(&net), &NlpOptions::default());
        println!(
            "{name:>8}: status {:?}, objective {:.4} $/h, {} iterations, {} active, {:.2?}",
            sol.status,
            sol.objective,
            sol.iterations,
            active_set(&net, &sol, 1e-6).len(),
            t0.elapsed()
        );
        if !sol.message.is_empty() {
            println!("          {}", sol.message);
        }
        objectives.push(sol.objective);
    }
    Ok(objectives)
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
