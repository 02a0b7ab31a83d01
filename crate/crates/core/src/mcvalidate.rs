//! Monte Carlo check of a solved operating point: perturb the demands, re-run
//! the power flow with (y, v_G) fixed and count satisfied constraints.

use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acpf::{solve_pf, OperatingPoint, PfOptions, XYPartition};
use crate::error::{Error, Result};
use crate::netcase::Network;
use crate::tighten::SigmaMatrix;

/// Upper voltage bound v_bus ≤ upper.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoltageCap {
    pub bus: usize,
    pub upper: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MCConfig {
    pub n_samples: usize,
    pub seed: u64,
    /// Square root of the demand-error covariance.
    pub sigma: SigmaMatrix,
    pub audit: Vec<VoltageCap>,
    /// Slack allowed when testing an audited constraint.
    pub tol: f64,
    pub covariance_note: String,
}

impl MCConfig {
    /// 500 samples, correlated covariance with σ = 1/N², v ≤ 1.1 at every bus.
    pub fn defaults(net: &Network, seed: u64) -> Result<Self> {
        let n = net.n_bus();
        let sigma = 1.0 / (n * n) as f64;
        Ok(Self {
            n_samples: 500,
            seed,
            sigma: SigmaMatrix::from_covariance(&default_covariance(2 * n, sigma))?,
            audit: (0..n).map(|bus| VoltageCap { bus, upper: 1.1 }).collect(),
            tol: 1e-6,
            covariance_note: format!("sigma^2 (0.5 I + 0.5 11^T / {}), sigma = {sigma:e}", 2 * n),
        })
    }

    pub fn validate(&self, net: &Network) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::Domain("n_samples must be at least 1".into()));
        }
        if self.sigma.dim() != 2 * net.n_bus() {
            return Err(Error::Dimension(format!(
                "covariance factor has dimension {}, expected {}",
                self.sigma.dim(),
                2 * net.n_bus()
            )));
        }
        if let Some(c) = self.audit.iter().find(|c| c.bus >= net.n_bus()) {
            return Err(Error::Domain(format!("audited bus {} out of range", c.bus)));
        }
        Ok(())
    }
}

/// σ²(½I + ½𝟙𝟙ᵀ/dim): dense, positive definite, all entries positive.
pub fn default_covariance(dim: usize, sigma: f64) -> DMatrix<f64> {
    let s2 = sigma * sigma;
    DMatrix::from_fn(dim, dim, |i, j| {
        let off = 0.5 * s2 / dim as f64;
        if i == j {
            0.5 * s2 + off
        } else {
            off
        }
    })
}

/// Generator for sample `index`, an independent stream of `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// ω = Σz with z standard normal by Box–Muller. The first half perturbs
/// active demand, the second half reactive demand.
pub fn sample_omega<R: Rng>(sigma: &SigmaMatrix, rng: &mut R) -> Vec<f64> {
    let dim = sigma.dim();
    let mut z = Vec::with_capacity(dim + 1);
    while z.len() < dim {
        let u1: f64 = 1.0 - rng.random::<f64>();
        let u2: f64 = rng.random::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        let t = std::f64::consts::TAU * u2;
        z.push(r * t.cos());
        z.push(r * t.sin());
    }
    z.truncate(dim);
    sigma.mul(&z)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MCReport {
    pub n_samples: usize,
    pub n_successful: usize,
    pub n_failed: usize,
    pub seed: u64,
    pub audit: Vec<VoltageCap>,
    /// Per audited constraint, fraction of successful samples satisfying it.
    pub marginals: Vec<f64>,
    pub joint: f64,
    pub product_of_marginals: f64,
    /// `histogram[k]`: samples with exactly k audited constraints satisfied.
    pub histogram: Vec<usize>,
    pub covariance_note: String,
}

impl MCReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Columns: satisfied, count, relative_frequency.
    pub fn write_histogram_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["satisfied", "count", "relative_frequency"])?;
        let denom = self.n_successful.max(1) as f64;
        for (k, &c) in self.histogram.iter().enumerate() {
            w.write_record(&[k.to_string(), c.to_string(), format!("{:e}", c as f64 / denom)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Satisfaction flags for one sample, `None` if the power flow failed.
pub fn evaluate_sample(
    net: &Network,
    part: &XYPartition,
    point: &OperatingPoint,
    cfg: &MCConfig,
    index: u64,
) -> Option<Vec<bool>> {
    let mut rng = sample_rng(cfg.seed, index);
    let omega = sample_omega(&cfg.sigma, &mut rng);
    let d: Vec<f64> = net.case.demand().iter().zip(&omega).map(|(a, b)| a + b).collect();
    match solve_pf(net, part, point, &d, &PfOptions::default()) {
        Ok(sol) => Some(cfg.audit.iter().map(|c| sol.point.v[c.bus] <= c.upper + cfg.tol).collect()),
        Err(e) => {
            log::debug!("sample {index}: {e}");
            None
        }
    }
}

pub fn run_mc(net: &Network, point: &OperatingPoint, cfg: &MCConfig) -> Result<MCReport> {
    cfg.validate(net)?;
    let part = XYPartition::new(net);
    let flags: Vec<Option<Vec<bool>>> = (0..cfg.n_samples as u64)
        .into_par_iter()
        .map(|i| evaluate_sample(net, &part, point, cfg, i))
        .collect();
    let m = cfg.audit.len();
    let mut sat = vec![0usize; m];
    let mut joint = 0usize;
    let mut histogram = vec![0usize; m + 1];
    let mut ok = 0usize;
    for f in flags.iter().flatten() {
        ok += 1;
        let count = f.iter().filter(|&&b| b).count();
        histogram[count] += 1;
        if count == m {
            joint += 1;
        }
        for (s, &b) in sat.iter_mut().zip(f) {
            *s += b as usize;
        }
    }
    let failed = cfg.n_samples - ok;
    if failed * 5 > cfg.n_samples {
        log::warn!("{failed} of {} power-flow samples failed", cfg.n_samples);
    }
    let denom = ok.max(1) as f64;
    let freq = |c: usize| if ok == 0 { f64::NAN } else { c as f64 / denom };
    let marginals: Vec<f64> = sat.iter().map(|&c| freq(c)).collect();
    Ok(MCReport {
        n_samples: cfg.n_samples,
        n_successful: ok,
        n_failed: failed,
        seed: cfg.seed,
        audit: cfg.audit.clone(),
        product_of_marginals: marginals.iter().product(),
        marginals,
        joint: freq(joint),
        histogram,
        covariance_note: cfg.covariance_note.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sigma_gives_zero_omega() {
        let s = SigmaMatrix::scaled_identity(6, 0.0);
        assert!(sample_omega(&s, &mut sample_rng(1, 0)).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let s = SigmaMatrix::scaled_identity(5, 1.0);
        let a = sample_omega(&s, &mut sample_rng(7, 3));
        assert_eq!(a, sample_omega(&s, &mut sample_rng(7, 3)));
        assert_ne!(a, sample_omega(&s, &mut sample_rng(7, 4)));
        assert_eq!(a.len(), 5);
    }

    #[test]
    fn default_covariance_is_dense_pd() {
        let c = default_covariance(4, 2.0);
        assert!((c[(0, 0)] - 2.5).abs() < 1e-15 && (c[(0, 1)] - 0.5).abs() < 1e-15);
        assert!(SigmaMatrix::from_covariance(&c).is_ok());
    }
}
