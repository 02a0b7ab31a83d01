//! Runs every example's entry point on small inputs.

#[path = "../examples/parse_case.rs"]
mod parse_case;
#[path = "../examples/power_flow.rs"]
mod power_flow;
#[path = "../examples/deterministic_opf.rs"]
mod deterministic_opf;
#[path = "../examples/tightenings.rs"]
mod tightenings;
#[path = "../examples/fixed_point.rs"]
mod fixed_point;
#[path = "../examples/convergence_bound.rs"]
mod convergence_bound;
#[path = "../examples/eps_sweep.rs"]
mod eps_sweep;
#[path = "../examples/monte_carlo.rs"]
mod monte_carlo;
#[path = "../examples/load_perturbation.rs"]
mod load_perturbation;

#[test]
fn parse_case_counts() {
    assert_eq!(parse_case::run_example("case30").unwrap(), (30, 6, 24, 41, 41));
}

#[test]
fn power_flow_moves_voltages() {
    let dv = power_flow::run_example("case9", 0.01).unwrap();
    assert!(dv > 0.0 && dv < 0.05);
}

#[test]
fn deterministic_opf_objectives() {
    let obj = deterministic_opf::run_example(&["case9"]).unwrap();
    assert!((obj[0] - 5296.686204).abs() < 1e-3);
}

#[test]
fn tightenings_are_positive() {
    let lam = tightenings::run_example("case9").unwrap();
    assert!(lam.is_nonnegative() && lam.max_abs() > 0.0);
}

#[test]
fn fixed_point_converges() {
    let res = fixed_point::run_example(&["case9"]).unwrap();
    assert!(res[0].converged());
}

#[test]
fn convergence_bound_flags() {
    let (report, flags) = convergence_bound::run_example("case9", &[1.0, 1e6]).unwrap();
    assert!(report.b0 > 0.0);
    assert_eq!(flags, [true, false]);
}

#[test]
fn eps_sweep_decreasing() {
    let pts = eps_sweep::run_example("case9", &[0.05, 0.2]).unwrap();
    assert!(pts[1].1 < pts[0].1);
}

#[test]
fn monte_carlo_joint_above_product() {
    let rep = monte_carlo::run_example(200, 3).unwrap();
    assert!(rep.joint > rep.product_of_marginals);
}

#[test]
fn load_perturbation_is_linear() {
    let (pts, r2) = load_perturbation::run_example("case9", &[0.9, 1.0, 1.1]).unwrap();
    assert!(pts.iter().all(|p| p.1 > 0.0));
    assert!(r2 > 0.95);
}
