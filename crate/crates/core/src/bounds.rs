//! Convergence-bound estimate for the fixed-point map and the Σ rescaling
//! safeguard.

use serde::{Deserialize, Serialize};

use crate::netcase::Network;
use crate::sparse::CscMatrix;
use crate::tighten::{inv_norm_cdf, GammaOperator, UncertaintyModel};

/// Default B0 threshold above which Σ is rescaled.
pub const RESCALE_THRESHOLD: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KGammaMethod {
    #[default]
    NormProduct,
    HongPan,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundReport {
    pub k1: f64,
    pub k_gamma: f64,
    pub k_gamma_method: KGammaMethod,
    /// Hong–Pan value when it was computed alongside.
    pub k_gamma_hong_pan: Option<f64>,
    pub k_x: f64,
    pub n_active: usize,
    pub sigma_norm: f64,
    pub k_p: f64,
    pub b0: f64,
    pub n_bus: usize,
    /// B0 < 1 (contraction estimate).
    pub convergence_guaranteed: bool,
    pub sigma_rescaled: bool,
    pub rescale_factor: f64,
}

/// max_r |z_r| over the four classes.
pub fn k1(unc: &UncertaintyModel) -> f64 {
    unc.eps
        .as_array()
        .iter()
        .map(|&e| inv_norm_cdf(1.0 - e).map(f64::abs).unwrap_or(f64::NAN))
        .fold(0.0, f64::max)
}

/// sqrt(‖Γ‖₁‖Γ‖_∞) ≥ ‖Γ‖₂.
pub fn k_gamma_norm_product(gamma: &GammaOperator) -> f64 {
    let (one, inf) = gamma.norms();
    (one * inf).sqrt()
}

/// Lower bound on σ_min(J) from the determinant and column/row norms,
/// evaluated in log space. `None` when the determinant vanishes.
pub fn hong_pan_lower(jac: &CscMatrix, ln_abs_det: f64) -> Option<f64> {
    let n = jac.ncols();
    if n == 0 || !ln_abs_det.is_finite() {
        return None;
    }
    if n == 1 {
        return Some(ln_abs_det.exp());
    }
    let log_ratio = |norms: &[f64]| -> f64 {
        let min = norms.iter().copied().fold(f64::INFINITY, f64::min);
        let sum_ln: f64 = norms.iter().map(|v| v.ln()).sum();
        min.ln() - sum_ln
    };
    let cols = jac.col_norms();
    let rows = jac.row_norms();
    let nf = n as f64;
    let ln_val = 0.5 * (nf - 1.0) * ((nf - 1.0) / nf).ln() + ln_abs_det + log_ratio(&cols).max(log_ratio(&rows));
    ln_val.is_finite().then(|| ln_val.exp())
}

/// K_Γ by the requested method. Hong–Pan falls back to the norm product
/// when its value is not representable.
pub fn k_gamma(gamma: &GammaOperator, method: KGammaMethod) -> (f64, KGammaMethod) {
    match method {
        KGammaMethod::NormProduct => (k_gamma_norm_product(gamma), KGammaMethod::NormProduct),
        KGammaMethod::HongPan => match hong_pan_lower(gamma.jacobian(), gamma.ln_abs_det()) {
            Some(lo) if lo > 0.0 && (1.0 / lo).is_finite() => (1.0 / lo, KGammaMethod::HongPan),
            _ => {
                log::warn!("determinant-based K_Γ not representable; using the norm product");
                (k_gamma_norm_product(gamma), KGammaMethod::NormProduct)
            }
        },
    }
}

/// ‖Σ‖ K_Γ² N_A
pub fn k_p(unc: &UncertaintyModel, k_gamma: f64, n_active: usize) -> f64 {
    unc.sigma.norm2() * k_gamma * k_gamma * n_active as f64
}

/// 2 ‖Σ‖₂ K1 K_Γ² K_x N_A N with K_x = 1.
pub fn bound_b0(net: &Network, unc: &UncertaintyModel, k1: f64, k_gamma: f64, n_active: usize) -> f64 {
    2.0 * unc.sigma.norm2() * k1 * k_gamma * k_gamma * n_active as f64 * net.n_bus() as f64
}

/// Scales Σ by 1/B0 when B0 exceeds the threshold. Returns the model and
/// the applied factor.
pub fn maybe_rescale_sigma(unc: &UncertaintyModel, b0: f64, threshold: f64) -> (UncertaintyModel, Option<f64>) {
    if b0 > threshold && b0.is_finite() {
        let f = 1.0 / b0;
        let mut out = unc.clone();
        out.sigma = unc.sigma.scaled(f);
        (out, Some(f))
    } else {
        (unc.clone(), None)
    }
}

/// Full report at the first subproblem solution.
pub fn bound_report(
    net: &Network,
    unc: &UncertaintyModel,
    gamma: &GammaOperator,
    n_active: usize,
    method: KGammaMethod,
) -> BoundReport {
    let k1 = k1(unc);
    let (kg, used) = k_gamma(gamma, method);
    let hp = match used {
        KGammaMethod::HongPan => Some(kg),
        KGammaMethod::NormProduct => None,
    };
    let b0 = bound_b0(net, unc, k1, kg, n_active);
    BoundReport {
        k1,
        k_gamma: kg,
        k_gamma_method: used,
        k_gamma_hong_pan: hp,
        k_x: 1.0,
        n_active,
        sigma_norm: unc.sigma.norm2(),
        k_p: k_p(unc, kg, n_active),
        b0,
        n_bus: net.n_bus(),
        convergence_guaranteed: b0 < 1.0,
        sigma_rescaled: false,
        rescale_factor: 1.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::Triplets;

    fn diag(vals: &[f64]) -> GammaOperator {
        let mut t = Triplets::new(vals.len(), vals.len());
        for (i, v) in vals.iter().enumerate() {
            t.push(i, i, *v);
        }
        GammaOperator::from_jacobian(t.to_csc()).unwrap()
    }

    #[test]
    fn norm_product_of_scaled_identity() {
        let g = diag(&[2.0; 4]);
        assert_eq!(k_gamma(&g, KGammaMethod::NormProduct), (0.5, KGammaMethod::NormProduct));
    }

    #[test]
    fn hong_pan_on_identity() {
        let g = diag(&[1.0; 4]);
        let (kg, m) = k_gamma(&g, KGammaMethod::HongPan);
        assert_eq!(m, KGammaMethod::HongPan);
        let expected = (4.0f64 / 3.0).powf(1.5);
        assert!((kg - expected).abs() < 1e-12 && kg >= 1.0);
    }

    #[test]
    fn rescale_rule() {
        let unc = UncertaintyModel {
            sigma: crate::tighten::SigmaMatrix::scaled_identity(2, 0.3),
            eps: Default::default(),
            gamma_g: 1.0,
        };
        assert!(maybe_rescale_sigma(&unc, 5.0, RESCALE_THRESHOLD).1.is_none());
        assert!(maybe_rescale_sigma(&unc, 0.0, RESCALE_THRESHOLD).1.is_none());
        let (s, f) = maybe_rescale_sigma(&unc, 100.0, RESCALE_THRESHOLD);
        assert_eq!(f, Some(0.01));
        assert!((s.sigma.norm2() - 0.003).abs() < 1e-15);
    }

    #[test]
    fn k1_values() {
        let mut unc = UncertaintyModel {
            sigma: crate::tighten::SigmaMatrix::scaled_identity(2, 1.0),
            eps: Default::default(),
            gamma_g: 1.0,
        };
        assert!((k1(&unc) - 1.2815515655446004).abs() < 1e-12);
        unc.eps.v = 0.05;
        assert!((k1(&unc) - 1.6448536269514722).abs() < 1e-12);
        unc.eps = crate::tighten::EpsilonSet {
            q: 0.5,
            v: 0.5,
            theta: 0.5,
            g: 0.5,
        };
        assert_eq!(k1(&unc), 0.0);
    }
}
