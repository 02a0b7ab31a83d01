//! Loads a MATPOWER case (built-in name or file path), prints its size and
//! checks that writing it back and re-parsing gives the same data.
//!
//!     cargo run --example parse_case [case9 | path/to/case.m]

use ccopf::netcase::{load_case, parse_case_with, write_case, ParseOptions};

/// Returns (buses, generators, load buses, branches, limited branches).
pub fn run_example(name: &str) -> anyhow::Result<(usize, usize, usize, usize, usize)> {
    let opts = ParseOptions::default();
    let case = load_case(name, &opts)?;
    let limited = case.branches.iter().filter(|b| b.d_max.is_some()).count();
    println!("{}: base {} MVA", case.name, case.base_mva);
    println!("  buses      {}", case.n_bus());
    println!("  generators {}", case.n_gen());
    println!("  load buses {}", case.n_load());
    println!("  branches   {} ({limited} with a rating)", case.n_branch());
    let demand: f64 = case.buses.iter().map(|b| b.p_demand).sum();
    println!("  total active demand {:.4} p.u.", demand);

    let again = parse_case_with(&write_case(&case), &opts)?;
    anyhow::ensure!(again == case, "round trip changed the case");
    println!("  round trip through the MATPOWER writer: identical");
    Ok((case.n_bus(), case.n_gen(), case.n_load(), case.n_branch(), limited))
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "case9".into());
    run_example(&name)?;
    Ok(())
}
