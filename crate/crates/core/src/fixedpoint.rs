//! Fixed-point iteration on the tightenings: solve the tightened OPF with λ
//! fixed, recompute λ at the solution, repeat until λ settles.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::acpf::{OperatingPoint, XYPartition};
use crate::bounds::{bound_report, maybe_rescale_sigma, BoundReport, KGammaMethod, RESCALE_THRESHOLD};
use crate::error::{Error, Result};
use crate::netcase::Network;
use crate::nlp::{solve_nlp, NlpOptions, NlpSolution, NlpStatus};
use crate::opf::{active_set, case_bounds, midpoint, OpfProblem, VarLayout};
use crate::tighten::{compute_tightening, TighteningRow, TighteningVector, UncertaintyModel};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FpConfig {
    /// Stopping tolerances on ‖Δλ‖_∞ for (q, v, θ, g).
    pub tol: [f64; 4],
    pub max_iter: usize,
    pub rescale_threshold: f64,
    pub line_tightening: bool,
    pub auto_rescale_sigma: bool,
    pub warm_start: bool,
    pub k_gamma_method: KGammaMethod,
    /// Tolerance for counting active constraints.
    pub active_tol: f64,
    /// Consecutive non-decreasing ‖Δλ‖_∞ that stop the loop early.
    pub oscillation_window: usize,
    pub keep_rows: bool,
    pub nlp: NlpOptions,
}

impl Default for FpConfig {
    fn default() -> Self {
        Self {
            tol: [1e-3, 1e-5, 1e-5, 1e-3],
            max_iter: 50,
            rescale_threshold: RESCALE_THRESHOLD,
            line_tightening: true,
            auto_rescale_sigma: true,
            warm_start: true,
            k_gamma_method: KGammaMethod::NormProduct,
            active_tol: 1e-6,
            oscillation_window: 5,
            keep_rows: false,
            nlp: NlpOptions::default(),
        }
    }
}

impl FpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tol.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::Domain("fixed-point tolerances must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Domain("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FpStatus {
    Converged,
    MaxIter,
    SubproblemFailed,
    NumericalFailure,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FpIterRecord {
    pub k: usize,
    pub objective: f64,
    /// ‖λ^(k) − λ^(k−1)‖_∞ for (q, v, θ, g); NaN when λ was not recomputed.
    pub dlam: [f64; 4],
    pub n_active: usize,
    pub solver_status: NlpStatus,
    pub nlp_iterations: usize,
    pub wall_time: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FpTrace {
    pub records: Vec<FpIterRecord>,
}

impl FpTrace {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "k",
            "objective",
            "dlam_q",
            "dlam_v",
            "dlam_theta",
            "dlam_g",
            "n_active",
            "solver_status",
            "nlp_iterations",
            "wall_time",
        ])?;
        for r in &self.records {
            let mut row = vec![r.k.to_string(), format!("{:e}", r.objective)];
            row.extend(r.dlam.iter().map(|d| format!("{d:e}")));
            row.push(r.n_active.to_string());
            row.push(format!("{:?}", r.solver_status).to_lowercase());
            row.push(r.nlp_iterations.to_string());
            row.push(format!("{:.6}", r.wall_time));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FpResult {
    pub status: FpStatus,
    pub oscillating: bool,
    /// Number of subproblem solves.
    pub iterations: usize,
    pub objective: f64,
    pub point: OperatingPoint,
    /// OPF variables `[θ, v, p_G, q_G]` of the last subproblem.
    pub s: Vec<f64>,
    pub lambda: TighteningVector,
    /// Model actually used (after any Σ rescaling).
    pub uncertainty: UncertaintyModel,
    pub bound: Option<BoundReport>,
    pub trace: FpTrace,
    pub message: String,
    #[serde(skip)]
    pub rows: Vec<(usize, Vec<TighteningRow>)>,
    #[serde(skip)]
    pub last_solution: Option<NlpSolution>,
}

impl FpResult {
    pub fn converged(&self) -> bool {
        self.status == FpStatus::Converged
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Crossed pairs become the original interval halved about its midpoint.
/// Pairs that were pinned originally are left alone.
pub fn repair_bounds(l_eff: &mut [f64], u_eff: &mut [f64], l_orig: &[f64], u_orig: &[f64]) -> usize {
    let mut repaired = 0;
    for j in 0..l_eff.len() {
        if l_orig[j] >= u_orig[j] || l_eff[j] <= u_eff[j] {
            continue;
        }
        let mid = 0.5 * (l_orig[j] + u_orig[j]);
        let quarter = 0.25 * (u_orig[j] - l_orig[j]);
        l_eff[j] = mid - quarter;
        u_eff[j] = mid + quarter;
        repaired += 1;
    }
    repaired
}

/// Tightened subproblem for a given λ.
pub fn tightened_problem<'a>(net: &'a Network, lam: &TighteningVector, start: Option<&[f64]>) -> OpfProblem<'a> {
    let (l0, u0) = case_bounds(net);
    let lay = VarLayout::new(net);
    let (mut l, mut u) = (l0.clone(), u0.clone());
    let shrink = |l: &mut Vec<f64>, u: &mut Vec<f64>, j: usize, d: f64| {
        if l0[j] < u0[j] {
            l[j] += d;
            u[j] -= d;
        }
    };
    for g in 0..net.n_gen() {
        shrink(&mut l, &mut u, lay.q(g), lam.lam_q[g]);
    }
    for (k, &b) in net.load_buses.iter().enumerate() {
        shrink(&mut l, &mut u, lay.v(b), lam.lam_v[k]);
    }
    for i in 0..net.n_bus() {
        shrink(&mut l, &mut u, lay.theta(i), lam.lam_theta[i]);
    }
    let repaired = repair_bounds(&mut l, &mut u, &l0, &u0);
    if repaired > 0 {
        log::info!("{repaired} crossed bound pair(s) reset to half width");
    }
    let start = start.map(<[f64]>::to_vec).unwrap_or_else(|| midpoint(&l, &u));
    OpfProblem {
        net,
        layout: lay,
        demand: net.case.demand(),
        lower: l,
        upper: u,
        line_lower: net.limited.iter().map(|&b| lam.lam_g[b]).collect(),
        start,
    }
}

/// Runs the fixed-point loop from λ⁰ = 0.
pub fn run_fixed_point(net: &Network, unc: &UncertaintyModel, cfg: &FpConfig) -> Result<FpResult> {
    unc.validate(net)?;
    cfg.validate()?;
    let part = XYPartition::new(net);
    let mut unc = unc.clone();
    let mut lam = TighteningVector::zeros(net);
    let mut trace = FpTrace::default();
    let mut rows = Vec::new();
    let mut bound = None;
    let mut start: Option<Vec<f64>> = None;
    let mut prev_step = f64::INFINITY;
    let mut rising = 0usize;

    let finish = |status, oscillating, sol: NlpSolution, lam, unc, bound, trace: FpTrace, rows, message: String| {
        let prob_point = VarLayout::new(net).point_of(net, &sol.x);
        FpResult {
            status,
            oscillating,
            iterations: trace.records.len(),
            objective: sol.objective,
            point: prob_point,
            s: sol.x.clone(),
            lambda: lam,
            uncertainty: unc,
            bound,
            trace,
            message,
            rows,
            last_solution: Some(sol),
        }
    };

    for k in 1..=cfg.max_iter {
        let t0 = Instant::now();
        let prob = tightened_problem(net, &lam, start.as_deref().filter(|_| cfg.warm_start));
        let sol = solve_nlp(&prob, &cfg.nlp);
        let n_active = active_set(net, &sol, cfg.active_tol).len();
        let mut rec = FpIterRecord {
            k,
            objective: sol.objective,
            dlam: [f64::NAN; 4],
            n_active,
            solver_status: sol.status,
            nlp_iterations: sol.iterations,
            wall_time: 0.0,
        };
        if sol.status != NlpStatus::Optimal {
            rec.wall_time = t0.elapsed().as_secs_f64();
            trace.records.push(rec);
            let msg = format!("subproblem {k} failed: {:?} {}", sol.status, sol.message);
            return Ok(finish(FpStatus::SubproblemFailed, false, sol, lam, unc, bound, trace, rows, msg));
        }
        let point = prob.point_of(&sol.x);

        let tightening = if k == 1 && (cfg.auto_rescale_sigma || bound.is_none()) {
            // Bound estimate at the first solution, then the optional rescale.
            let (_, _, gamma) = compute_tightening(net, &part, &point, &unc, false)?;
            let mut report = bound_report(net, &unc, &gamma, n_active, cfg.k_gamma_method);
            if cfg.auto_rescale_sigma {
                let (scaled, factor) = maybe_rescale_sigma(&unc, report.b0, cfg.rescale_threshold);
                if let Some(f) = factor {
                    log::info!("B0 = {:.3e} above threshold; scaling Σ by {f:.3e}", report.b0);
                    report.sigma_rescaled = true;
                    report.rescale_factor = f;
                    unc = scaled;
                }
            }
            bound = Some(report);
            compute_tightening(net, &part, &point, &unc, cfg.line_tightening)
        } else {
            compute_tightening(net, &part, &point, &unc, cfg.line_tightening)
        };
        let (new_lam, new_rows, _) = match tightening {
            Ok(t) => t,
            Err(e) => {
                rec.wall_time = t0.elapsed().as_secs_f64();
                trace.records.push(rec);
                let msg = format!("tightening failed at iteration {k}: {e}");
                return Ok(finish(FpStatus::NumericalFailure, false, sol, lam, unc, bound, trace, rows, msg));
            }
        };
        if !new_lam.is_finite() {
            rec.wall_time = t0.elapsed().as_secs_f64();
            trace.records.push(rec);
            let msg = format!("non-finite tightening at iteration {k}");
            return Ok(finish(FpStatus::NumericalFailure, false, sol, lam, unc, bound, trace, rows, msg));
        }
        let dlam = new_lam.diff_inf(&lam);
        rec.dlam = dlam;
        rec.wall_time = t0.elapsed().as_secs_f64();
        trace.records.push(rec);
        if cfg.keep_rows {
            rows.push((k, new_rows));
        }
        lam = new_lam;
        start = Some(sol.x.clone());

        if dlam.iter().zip(&cfg.tol).all(|(d, t)| d <= t) {
            return Ok(finish(FpStatus::Converged, false, sol, lam, unc, bound, trace, rows, String::new()));
        }
        let step = dlam.iter().fold(0.0f64, |m, d| m.max(*d));
        rising = if step >= prev_step { rising + 1 } else { 0 };
        prev_step = step;
        if rising >= cfg.oscillation_window {
            let msg = format!("‖Δλ‖ non-decreasing for {rising} iterations");
            return Ok(finish(FpStatus::MaxIter, true, sol, lam, unc, bound, trace, rows, msg));
        }
        if k == cfg.max_iter {
            let msg = format!("no fixed point within {k} iterations");
            return Ok(finish(FpStatus::MaxIter, false, sol, lam, unc, bound, trace, rows, msg));
        }
    }
    unreachable!("loop returns on its last iteration")
}
