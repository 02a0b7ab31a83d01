//! Command-line front end. Every artifact starts with a run manifest: a
//! `# manifest: {...}` line in CSV files, a `manifest` field in JSON files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::bounds::KGammaMethod;
use crate::error::{Error, Result};
use crate::fixedpoint::{run_fixed_point, FpConfig, FpResult};
use crate::mcvalidate::{run_mc, MCConfig};
use crate::netcase::{BranchLimitRule, Network, ParseOptions};
use crate::tighten::{write_rows_csv, EpsilonSet, UncertaintyModel};

#[derive(Parser, Debug)]
#[command(name = "ccopf", version, about = "Chance-constrained AC optimal power flow by fixed-point iteration")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run the fixed-point iteration and write solution, trace and tightenings.
    Solve(SolveArgs),
    /// Print the convergence-bound estimate at the first subproblem solution.
    Bound(CommonArgs),
    /// Objective over a grid of voltage violation probabilities.
    SweepEps(SweepEpsArgs),
    /// Convergence over σ = α/N² for a grid of α.
    SweepSigma(SweepSigmaArgs),
    /// Objective under uniformly scaled demand.
    Perturb(PerturbArgs),
    /// Monte Carlo check of a stored solution.
    Validate(ValidateArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum LimitRuleArg {
    SeriesCurrent,
    RatingPerUnit,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum KGammaArg {
    NormProduct,
    HongPan,
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// Built-in case name (case9, case30, case118, case300) or MATPOWER file.
    pub case: String,
    /// Σ = σI; defaults to 1/N².
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Violation probabilities q,v,theta,g.
    #[arg(long, value_delimiter = ',', num_args = 4)]
    pub eps: Option<Vec<f64>>,
    /// Scaling of the branch tightenings; defaults to 1/N_L².
    #[arg(long)]
    pub gamma_g: Option<f64>,
    #[arg(long)]
    pub no_line_tightening: bool,
    /// Keep Σ even when the bound estimate exceeds the threshold.
    #[arg(long)]
    pub no_rescale: bool,
    /// Solve every subproblem from the bound midpoint.
    #[arg(long)]
    pub cold_start: bool,
    #[arg(long, default_value_t = 50)]
    pub max_iter: usize,
    #[arg(long, value_enum, default_value = "series-current")]
    pub limit_rule: LimitRuleArg,
    #[arg(long, value_enum, default_value = "norm-product")]
    pub k_gamma: KGammaArg,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Also write the parsed case as JSON.
    #[arg(long)]
    pub dump_case: bool,
    /// Write the interior-point iteration log of the last subproblem.
    #[arg(long)]
    pub nlp_log: bool,
}

#[derive(Args, Debug)]
pub struct SweepEpsArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// ε_v values; defaults to 0.05, 0.06, ..., 0.20.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
pub struct SweepSigmaArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_delimiter = ',', default_value = "1,10,1e4,1e6")]
    pub alpha_grid: Vec<f64>,
}

#[derive(Args, Debug)]
pub struct PerturbArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Demand scale factors; defaults to 0.80, 0.85, ..., 1.20.
    #[arg(long, value_delimiter = ',')]
    pub scales: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// solution.json written by `solve`.
    #[arg(long)]
    pub solution: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub samples: usize,
}

/// Parameters echoed into every artifact.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub case: String,
    pub uncertainty: UncertaintyModel,
    pub fp_config: FpConfig,
    pub seed: u64,
    pub created_unix: u64,
    pub version: String,
    pub args: Vec<String>,
}

impl RunManifest {
    fn new(command: &str, common: &CommonArgs, unc: &UncertaintyModel, cfg: &FpConfig) -> Self {
        Self {
            command: command.to_string(),
            case: common.case.clone(),
            uncertainty: unc.clone(),
            fp_config: cfg.clone(),
            seed: common.seed,
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            version: env!("CARGO_PKG_VERSION").to_string(),
            args: std::env::args().collect(),
        }
    }

    fn header_line(&self) -> Result<String> {
        Ok(format!("# manifest: {}\n", serde_json::to_string(self)?))
    }
}

#[derive(Serialize)]
struct Artifact<'a, T: Serialize> {
    manifest: &'a RunManifest,
    result: &'a T,
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    std::fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, manifest: &RunManifest, value: &T) -> Result<()> {
    let mut f = create(dir, name)?;
    serde_json::to_writer_pretty(&mut f, &Artifact { manifest, result: value })?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

/// CSV file with the manifest comment line already written.
fn csv_file(dir: &Path, name: &str, manifest: &RunManifest) -> Result<BufWriter<File>> {
    let mut f = create(dir, name)?;
    f.write_all(manifest.header_line()?.as_bytes())?;
    Ok(f)
}

fn write_rows(dir: &Path, name: &str, manifest: &RunManifest, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(csv_file(dir, name, manifest)?);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn num(x: f64) -> String {
    // Shortest round-trip representation.
    format!("{x:?}")
}

fn load_network(common: &CommonArgs) -> Result<Network> {
    let opts = ParseOptions {
        limit_rule: match common.limit_rule {
            LimitRuleArg::SeriesCurrent => BranchLimitRule::SeriesCurrent,
            LimitRuleArg::RatingPerUnit => BranchLimitRule::RatingPerUnit,
        },
        ..Default::default()
    };
    Network::load(&common.case, &opts)
}

fn uncertainty(net: &Network, common: &CommonArgs) -> Result<UncertaintyModel> {
    let mut unc = UncertaintyModel::defaults(net);
    if let Some(s) = common.sigma {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(Error::Domain(format!("sigma {s} must be finite and ≥ 0")));
        }
        unc = unc.with_sigma(s);
    }
    if let Some(e) = &common.eps {
        unc.eps = EpsilonSet {
            q: e[0],
            v: e[1],
            theta: e[2],
            g: e[3],
        };
    }
    if let Some(g) = common.gamma_g {
        unc.gamma_g = g;
    }
    unc.validate(net)?;
    Ok(unc)
}

fn fp_config(common: &CommonArgs) -> FpConfig {
    FpConfig {
        max_iter: common.max_iter,
        line_tightening: !common.no_line_tightening,
        auto_rescale_sigma: !common.no_rescale,
        warm_start: !common.cold_start,
        k_gamma_method: match common.k_gamma {
            KGammaArg::NormProduct => KGammaMethod::NormProduct,
            KGammaArg::HongPan => KGammaMethod::HongPan,
        },
        ..Default::default()
    }
}

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    NotConverged,
}

impl Outcome {
    fn code(self) -> i32 {
        match self {
            Self::Success => 0,
            Self::NotConverged => 1,
        }
    }

    fn of(converged: bool) -> Self {
        if converged {
            Self::Success
        } else {
            Self::NotConverged
        }
    }
}

fn cmd_solve(a: &SolveArgs) -> Result<Outcome> {
    let c = &a.common;
    let net = load_network(c)?;
    let unc = uncertainty(&net, c)?;
    let mut cfg = fp_config(c);
    cfg.keep_rows = true;
    cfg.nlp.keep_log = a.nlp_log;
    let manifest = RunManifest::new("solve", c, &unc, &cfg);
    let t0 = Instant::now();
    let res = run_fixed_point(&net, &unc, &cfg)?;
    let secs = t0.elapsed().as_secs_f64();

    write_json(&c.out, "solution.json", &manifest, &res)?;
    let mut f = csv_file(&c.out, "trace.csv", &manifest)?;
    res.trace.write_csv(&mut f)?;
    f.flush()?;
    let mut f = csv_file(&c.out, "lambda.csv", &manifest)?;
    write_rows_csv(&mut f, &res.rows)?;
    f.flush()?;
    if a.nlp_log {
        if let Some(sol) = &res.last_solution {
            let mut f = csv_file(&c.out, "nlp_log.csv", &manifest)?;
            sol.write_log_csv(&mut f)?;
            f.flush()?;
        }
    }
    if a.dump_case {
        write_json(&c.out, "case.json", &manifest, &net.case)?;
    }
    if let Some(b) = &res.bound {
        println!(
            "bound estimate B0 = {:.4e} (K1 {:.4}, K_Γ {:.4e}, N_A {}){}",
            b.b0,
            b.k1,
            b.k_gamma,
            b.n_active,
            if b.sigma_rescaled {
                format!(", Σ scaled by {:.4e}", b.rescale_factor)
            } else {
                String::new()
            }
        );
    }
    println!("case        {}", net.case.name);
    println!("status      {:?}", res.status);
    println!("objective   {:.4}", res.objective);
    println!("iterations  {}", res.iterations);
    println!("time        {secs:.3} s");
    if !res.message.is_empty() {
        println!("note        {}", res.message);
    }
    Ok(Outcome::of(res.converged()))
}

fn cmd_bound(c: &CommonArgs) -> Result<Outcome> {
    let net = load_network(c)?;
    let unc = uncertainty(&net, c)?;
    let cfg = FpConfig {
        max_iter: 1,
        ..fp_config(c)
    };
    let manifest = RunManifest::new("bound", c, &unc, &cfg);
    let res = run_fixed_point(&net, &unc, &cfg)?;
    let Some(report) = res.bound else {
        return Err(Error::Numerical(format!("no bound estimate: {}", res.message)));
    };
    write_json(&c.out, "bound.json", &manifest, &report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(Outcome::Success)
}

fn default_grid(lo: f64, step: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| ((lo + step * k as f64) * 1e6).round() / 1e6).collect()
}

fn cmd_sweep_eps(a: &SweepEpsArgs) -> Result<Outcome> {
    let c = &a.common;
    let net = load_network(c)?;
    let unc = uncertainty(&net, c)?;
    // Line tightening and Σ rescaling off, so ε enters the tightenings unscaled.
    let cfg = FpConfig {
        line_tightening: false,
        auto_rescale_sigma: false,
        ..fp_config(c)
    };
    let grid = a.grid.clone().unwrap_or_else(|| default_grid(0.05, 0.01, 16));
    let manifest = RunManifest::new("sweep-eps", c, &unc, &cfg);
    let results: Vec<Result<FpResult>> = grid
        .par_iter()
        .map(|&e| {
            let mut u = unc.clone();
            u.eps.v = e;
            u.validate(&net)?;
            run_fixed_point(&net, &u, &cfg)
        })
        .collect();
    let mut rows = Vec::new();
    let mut all = true;
    for (e, r) in grid.iter().zip(results) {
        let (obj, conv, it) = match r {
            Ok(r) if r.converged() => (r.objective, true, r.iterations),
            Ok(r) => (f64::NAN, false, r.iterations),
            Err(err) => {
                log::warn!("ε_v = {e}: {err}");
                (f64::NAN, false, 0)
            }
        };
        all &= conv;
        println!("eps_v {e:<8} objective {obj:.6} converged {conv}");
        rows.push(vec![num(*e), num(obj), conv.to_string(), it.to_string()]);
    }
    write_rows(&c.out, "sweep_eps.csv", &manifest, &["eps_v", "objective", "converged", "iterations"], &rows)?;
    Ok(Outcome::of(all))
}

fn cmd_sweep_sigma(a: &SweepSigmaArgs) -> Result<Outcome> {
    let c = &a.common;
    let net = load_network(c)?;
    let unc = uncertainty(&net, c)?;
    let cfg = FpConfig {
        auto_rescale_sigma: false,
        ..fp_config(c)
    };
    let n2 = (net.n_bus() * net.n_bus()) as f64;
    let manifest = RunManifest::new("sweep-sigma", c, &unc, &cfg);
    let results: Vec<Result<FpResult>> = a
        .alpha_grid
        .par_iter()
        .map(|&alpha| run_fixed_point(&net, &unc.clone().with_sigma(alpha / n2), &cfg))
        .collect();
    let mut rows = Vec::new();
    for (&alpha, r) in a.alpha_grid.iter().zip(results) {
        let sigma = alpha / n2;
        let (kp, conv, it, obj, status) = match r {
            Ok(r) => (
                r.bound.as_ref().map_or(f64::NAN, |b| b.k_p),
                r.converged(),
                r.iterations,
                r.objective,
                format!("{:?}", r.status).to_lowercase(),
            ),
            Err(e) => (f64::NAN, false, 0, f64::NAN, format!("error: {e}")),
        };
        println!(
            "alpha {alpha:<8e} sigma {sigma:<10.4e} K_P {kp:<10.4e} converged {}",
            if conv { "Y" } else { "N" }
        );
        rows.push(vec![
            num(alpha),
            num(sigma),
            num(kp),
            if conv { "Y" } else { "N" }.to_string(),
            it.to_string(),
            num(obj),
            status,
        ]);
    }
    write_rows(
        &c.out,
        "sweep_sigma.csv",
        &manifest,
        &["alpha", "sigma", "k_p", "converged", "iterations", "objective", "status"],
        &rows,
    )?;
    Ok(Outcome::Success)
}

fn cmd_perturb(a: &PerturbArgs) -> Result<Outcome> {
    let c = &a.common;
    let base = load_network(c)?;
    let unc = uncertainty(&base, c)?;
    let cfg = fp_config(c);
    let scales = a.scales.clone().unwrap_or_else(|| default_grid(0.8, 0.05, 9));
    let manifest = RunManifest::new("perturb", c, &unc, &cfg);
    let reference = run_fixed_point(&base, &unc, &cfg)?;
    if !reference.converged() {
        return Err(Error::Numerical(format!(
            "unperturbed run did not converge: {}",
            reference.message
        )));
    }
    let results: Vec<Result<FpResult>> = scales
        .par_iter()
        .map(|&s| run_fixed_point(&base.scaled_demand(s)?, &unc, &cfg))
        .collect();
    let mut rows = Vec::new();
    let mut all = true;
    for (&s, r) in scales.iter().zip(results) {
        let (obj, conv) = match r {
            Ok(r) if r.converged() => (r.objective, true),
            _ => (0.0, false),
        };
        all &= conv;
        let normalized = if conv { obj / reference.objective } else { 0.0 };
        println!("scale {s:<6} normalized objective {normalized:.6} converged {conv}");
        rows.push(vec![num(s), num(normalized), num(obj), conv.to_string()]);
    }
    write_rows(
        &c.out,
        "perturb.csv",
        &manifest,
        &["scale", "normalized_objective", "objective", "converged"],
        &rows,
    )?;
    Ok(Outcome::of(all))
}

fn cmd_validate(a: &ValidateArgs) -> Result<Outcome> {
    let c = &a.common;
    if a.samples == 0 {
        return Err(Error::Domain("--samples must be at least 1".into()));
    }
    let net = load_network(c)?;
    let unc = uncertainty(&net, c)?;
    let text = std::fs::read_to_string(&a.solution)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let payload = value.get("result").cloned().unwrap_or(value);
    let sol: FpResult = serde_json::from_value(payload)?;
    if sol.point.v.len() != net.n_bus() {
        return Err(Error::Dimension(format!(
            "solution has {} buses, case has {}",
            sol.point.v.len(),
            net.n_bus()
        )));
    }
    let mut mc = MCConfig::defaults(&net, c.seed)?;
    mc.n_samples = a.samples;
    let manifest = RunManifest::new("validate", c, &unc, &fp_config(c));
    let report = run_mc(&net, &sol.point, &mc)?;
    write_json(&c.out, "mc_report.json", &manifest, &report)?;
    let mut f = csv_file(&c.out, "mc_histogram.csv", &manifest)?;
    report.write_histogram_csv(&mut f)?;
    f.flush()?;
    println!("samples     {} ({} failed)", report.n_samples, report.n_failed);
    println!("joint       {:.4}", report.joint);
    println!("product     {:.4}", report.product_of_marginals);
    println!(
        "marginals   {}",
        report.marginals.iter().map(|m| format!("{m:.3}")).collect::<Vec<_>>().join(" ")
    );
    Ok(Outcome::Success)
}

pub fn execute(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Bound(a) => cmd_bound(a),
        Command::SweepEps(a) => cmd_sweep_eps(a),
        Command::SweepSigma(a) => cmd_sweep_sigma(a),
        Command::Perturb(a) => cmd_perturb(a),
        Command::Validate(a) => cmd_validate(a),
    }
}

/// Parses `std::env::args`, runs, and returns the exit code: 0 success,
/// 1 non-convergence, 2 usage or input error.
pub fn run() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(o) => o.code(),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Numerical(_) | Error::Singular { .. } | Error::PowerFlow(_) => 1,
                _ => 2,
            }
        }
    }
}
