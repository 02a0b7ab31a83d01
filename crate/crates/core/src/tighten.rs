//! Uncertainty model, the sensitivity operator Γ = −J⁻¹, and the constraint
//! tightenings λ_r = z_r‖e_rᵀ Γ Σ‖ for bounds and branch constraints.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::acpf::{jacobian_g_x, jacobian_j, OperatingPoint, XSlot, XYPartition};
use crate::error::{Error, Result};
use crate::netcase::Network;
use crate::sparse::{CscMatrix, SparseLu};

/// Square root Σ of the demand-error covariance (Var ω = ΣΣᵀ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMatrix {
    ScaledIdentity { dim: usize, sigma: f64 },
    Diagonal(Vec<f64>),
    /// Row-major lower-triangular (or any) square factor.
    Dense { dim: usize, data: Vec<f64> },
}

impl SigmaMatrix {
    pub fn scaled_identity(dim: usize, sigma: f64) -> Self {
        Self::ScaledIdentity { dim, sigma }
    }

    /// Cholesky factor of a symmetric positive definite covariance.
    pub fn from_covariance(cov: &DMatrix<f64>) -> Result<Self> {
        if !cov.is_square() {
            return Err(Error::Dimension("covariance must be square".into()));
        }
        let asym = (cov - cov.transpose()).amax();
        if asym > 1e-12 * cov.amax().max(1.0) {
            return Err(Error::Domain("covariance is not symmetric".into()));
        }
        let chol = nalgebra::Cholesky::new(cov.clone())
            .ok_or_else(|| Error::Domain("covariance is not positive definite".into()))?;
        let l = chol.l();
        let dim = l.nrows();
        let data = (0..dim).flat_map(|i| (0..dim).map(move |j| (i, j))).map(|(i, j)| l[(i, j)]).collect();
        Ok(Self::Dense { dim, data })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::ScaledIdentity { dim, .. } | Self::Dense { dim, .. } => *dim,
            Self::Diagonal(d) => d.len(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Self::ScaledIdentity { sigma, .. } => *sigma == 0.0,
            Self::Diagonal(d) => d.iter().all(|&x| x == 0.0),
            Self::Dense { data, .. } => data.iter().all(|&x| x == 0.0),
        }
    }

    /// Σ z
    pub fn mul(&self, z: &[f64]) -> Vec<f64> {
        match self {
            Self::ScaledIdentity { sigma, .. } => z.iter().map(|v| sigma * v).collect(),
            Self::Diagonal(d) => z.iter().zip(d).map(|(a, b)| a * b).collect(),
            Self::Dense { dim, data } => (0..*dim)
                .map(|i| data[i * dim..(i + 1) * dim].iter().zip(z).map(|(a, b)| a * b).sum())
                .collect(),
        }
    }

    /// ‖Σᵀ w‖₂
    pub fn tr_norm(&self, w: &[f64]) -> f64 {
        match self {
            Self::ScaledIdentity { sigma, .. } => sigma.abs() * norm2(w),
            Self::Diagonal(d) => w.iter().zip(d).map(|(a, b)| (a * b) * (a * b)).sum::<f64>().sqrt(),
            Self::Dense { dim, data } => {
                let mut out = vec![0.0; *dim];
                for (i, &wi) in w.iter().enumerate() {
                    if wi != 0.0 {
                        for (o, a) in out.iter_mut().zip(&data[i * dim..(i + 1) * dim]) {
                            *o += a * wi;
                        }
                    }
                }
                norm2(&out)
            }
        }
    }

    /// ‖Σ‖₂: exact for diagonal forms, sqrt(‖Σ‖₁‖Σ‖_∞) for dense factors.
    pub fn norm2(&self) -> f64 {
        match self {
            Self::ScaledIdentity { sigma, .. } => sigma.abs(),
            Self::Diagonal(d) => d.iter().fold(0.0, |m, x| m.max(x.abs())),
            Self::Dense { dim, data } => {
                let n = *dim;
                let row = (0..n).map(|i| (0..n).map(|j| data[i * n + j].abs()).sum::<f64>()).fold(0.0, f64::max);
                let col = (0..n).map(|j| (0..n).map(|i| data[i * n + j].abs()).sum::<f64>()).fold(0.0, f64::max);
                (row * col).sqrt()
            }
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        match self {
            Self::ScaledIdentity { dim, sigma } => Self::ScaledIdentity { dim: *dim, sigma: sigma * c },
            Self::Diagonal(d) => Self::Diagonal(d.iter().map(|x| x * c).collect()),
            Self::Dense { dim, data } => Self::Dense {
                dim: *dim,
                data: data.iter().map(|x| x * c).collect(),
            },
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        match self {
            Self::ScaledIdentity { sigma, .. } => DMatrix::identity(n, n) * *sigma,
            Self::Diagonal(d) => DMatrix::from_diagonal(&nalgebra::DVector::from_vec(d.clone())),
            Self::Dense { data, .. } => DMatrix::from_row_slice(n, n, data),
        }
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Violation probabilities per constraint class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSet {
    pub q: f64,
    pub v: f64,
    pub theta: f64,
    pub g: f64,
}

impl Default for EpsilonSet {
    fn default() -> Self {
        Self {
            q: 0.1,
            v: 0.1,
            theta: 0.1,
            g: 0.2,
        }
    }
}

impl EpsilonSet {
    pub fn as_array(&self) -> [f64; 4] {
        [self.q, self.v, self.theta, self.g]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyModel {
    pub sigma: SigmaMatrix,
    pub eps: EpsilonSet,
    /// Scaling of the branch tightenings.
    pub gamma_g: f64,
}

impl UncertaintyModel {
    /// Σ = σI with σ = 1/N², ε = (0.1, 0.1, 0.1, 0.2), γ_g = 1/N_L².
    pub fn defaults(net: &Network) -> Self {
        let n = net.n_bus() as f64;
        let nl = net.n_load().max(1) as f64;
        Self {
            sigma: SigmaMatrix::scaled_identity(2 * net.n_bus(), 1.0 / (n * n)),
            eps: EpsilonSet::default(),
            gamma_g: 1.0 / (nl * nl),
        }
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        let dim = self.sigma.dim();
        self.sigma = SigmaMatrix::scaled_identity(dim, sigma);
        self
    }

    pub fn validate(&self, net: &Network) -> Result<()> {
        if self.sigma.dim() != 2 * net.n_bus() {
            return Err(Error::Dimension(format!(
                "Σ has dimension {}, expected {}",
                self.sigma.dim(),
                2 * net.n_bus()
            )));
        }
        for e in self.eps.as_array() {
            if !(e > 0.0 && e <= 0.5) {
                return Err(Error::Domain(format!("violation probability {e} not in (0, 0.5]")));
            }
        }
        if !(self.gamma_g >= 0.0 && self.gamma_g.is_finite()) {
            return Err(Error::Domain(format!("line scaling {} must be finite and ≥ 0", self.gamma_g)));
        }
        Ok(())
    }

    pub fn z(&self, class: ConstraintClass) -> f64 {
        let e = match class {
            ConstraintClass::Q => self.eps.q,
            ConstraintClass::V => self.eps.v,
            ConstraintClass::Theta => self.eps.theta,
            ConstraintClass::G => self.eps.g,
        };
        inv_norm_cdf(1.0 - e).expect("validated ε")
    }
}

// Coefficients of the rational approximation (relative error ≈ 1.15e-9),
// followed by one Newton step.
const A: [f64; 6] = [
    -3.969683028665376e+01,
    2.209460984245205e+02,
    -2.759285104469687e+02,
    1.38357751867269e+02,
    -3.066479806614716e+01,
    2.506628277459239e+00,
];
const B: [f64; 5] = [
    -5.447609879822406e+01,
    1.615858368580409e+02,
    -1.556989798598866e+02,
    6.680131188771972e+01,
    -1.328068155288572e+01,
];
const C: [f64; 6] = [
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e+00,
    -2.549732539343734e+00,
    4.374664141464968e+00,
    2.938163982698783e+00,
];
const D: [f64; 4] = [
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e+00,
    3.754408661907416e+00,
];

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Upper tail 1 − Φ(t) for t ≥ 0.
fn upper_tail(t: f64) -> f64 {
    if t < 2.5 {
        // Φ(t) − ½ = φ(t) Σ t^{2n+1}/(2n+1)!!
        let mut term = t;
        let mut sum = t;
        let t2 = t * t;
        let mut k = 1.0;
        while term > 1e-17 * sum {
            k += 2.0;
            term *= t2 / k;
            sum += term;
        }
        0.5 - normal_pdf(t) * sum
    } else {
        // Continued fraction φ(t) / (t + 1/(t + 2/(t + 3/(t + ...)))).
        let mut f = t;
        for k in (1..=200).rev() {
            f = t + k as f64 / f;
        }
        normal_pdf(t) / f
    }
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 - upper_tail(x)
    } else {
        upper_tail(-x)
    }
}

/// Standard normal quantile Φ⁻¹(p) for p ∈ (0, 1).
pub fn inv_norm_cdf(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("probability {p} not in (0, 1)")));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    // Work with the smaller tail mass so both signs share one code path.
    let q = if p < 0.5 { p } else { 1.0 - p };
    let mut t = if q < 0.02425 {
        let r = (-2.0 * q.ln()).sqrt();
        -(((((C[0] * r + C[1]) * r + C[2]) * r + C[3]) * r + C[4]) * r + C[5])
            / ((((D[0] * r + D[1]) * r + D[2]) * r + D[3]) * r + 1.0)
    } else {
        let u = q - 0.5;
        let r = u * u;
        -(((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * u
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };
    // t ≥ 0 solves upper_tail(t) = q; polish with one Newton step.
    t += (upper_tail(t) - q) / normal_pdf(t);
    Ok(if p < 0.5 { -t } else { t })
}

/// Handle on Γ = −J⁻¹ through one sparse LU factorization of J.
#[derive(Debug, Clone)]
pub struct GammaOperator {
    jac: CscMatrix,
    lu: SparseLu,
}

impl GammaOperator {
    pub fn new(net: &Network, part: &XYPartition, point: &OperatingPoint) -> Result<Self> {
        Self::from_jacobian(jacobian_j(net, part, point).to_csc())
    }

    pub fn from_jacobian(jac: CscMatrix) -> Result<Self> {
        let lu = SparseLu::factor_with_shift(&jac)?;
        Ok(Self { jac, lu })
    }

    pub fn dim(&self) -> usize {
        self.jac.ncols()
    }

    pub fn jacobian(&self) -> &CscMatrix {
        &self.jac
    }

    pub fn lu(&self) -> &SparseLu {
        &self.lu
    }

    /// Γv = −J⁻¹v
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut x = self.lu.solve(v);
        x.iter_mut().for_each(|a| *a = -*a);
        x
    }

    /// Γᵀw = −J⁻ᵀw
    pub fn apply_transpose(&self, w: &[f64]) -> Vec<f64> {
        let mut x = self.lu.solve_transpose(w);
        x.iter_mut().for_each(|a| *a = -*a);
        x
    }

    /// Row r of Γ as a vector (Γᵀ e_r).
    pub fn row(&self, r: usize) -> Vec<f64> {
        let mut e = vec![0.0; self.dim()];
        e[r] = 1.0;
        self.apply_transpose(&e)
    }

    /// (‖Γ‖₁, ‖Γ‖_∞) from all columns.
    pub fn norms(&self) -> (f64, f64) {
        let n = self.dim();
        let mut row_sums = vec![0.0; n];
        let mut one: f64 = 0.0;
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.lu.solve(&e);
            let mut s = 0.0;
            for (i, v) in col.iter().enumerate() {
                s += v.abs();
                row_sums[i] += v.abs();
            }
            one = one.max(s);
        }
        (one, row_sums.into_iter().fold(0.0, f64::max))
    }

    /// |det J| as the product of the U diagonal.
    pub fn abs_det(&self) -> f64 {
        self.lu.abs_det()
    }

    pub fn ln_abs_det(&self) -> f64 {
        self.lu.ln_abs_det()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintClass {
    Q,
    V,
    Theta,
    G,
}

impl ConstraintClass {
    pub fn label(self) -> &'static str {
        match self {
            Self::Q => "q",
            Self::V => "v",
            Self::Theta => "theta",
            Self::G => "g",
        }
    }
}

/// Diagnostics for one tightened constraint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TighteningRow {
    pub class: ConstraintClass,
    /// Generator index (q), load-bus position (v), bus (θ) or branch (g).
    pub index: usize,
    pub z: f64,
    pub row_norm: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TighteningVector {
    pub lam_q: Vec<f64>,
    pub lam_v: Vec<f64>,
    pub lam_theta: Vec<f64>,
    pub lam_g: Vec<f64>,
}

impl TighteningVector {
    pub fn zeros(net: &Network) -> Self {
        Self {
            lam_q: vec![0.0; net.n_gen()],
            lam_v: vec![0.0; net.n_load()],
            lam_theta: vec![0.0; net.n_bus()],
            lam_g: vec![0.0; net.case.n_branch()],
        }
    }

    fn parts(&self) -> [&Vec<f64>; 4] {
        [&self.lam_q, &self.lam_v, &self.lam_theta, &self.lam_g]
    }

    /// ‖self − other‖_∞ per class (q, v, θ, g).
    pub fn diff_inf(&self, other: &Self) -> [f64; 4] {
        let a = self.parts();
        let b = other.parts();
        std::array::from_fn(|k| a[k].iter().zip(b[k]).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs())))
    }

    pub fn max_abs(&self) -> f64 {
        self.parts().iter().flat_map(|v| v.iter()).fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.parts().iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    pub fn is_nonnegative(&self) -> bool {
        self.parts().iter().all(|v| v.iter().all(|&x| x >= 0.0))
    }
}

fn has_finite_bounds(l: f64, u: f64) -> bool {
    l < u && (l.is_finite() || u.is_finite())
}

/// λ for the q_G, v_L and θ rows of x. Rows without finite bounds, pinned
/// rows and the slack slot get 0.
pub fn tighten_bounds(
    net: &Network,
    part: &XYPartition,
    unc: &UncertaintyModel,
    gamma: &GammaOperator,
) -> (TighteningVector, Vec<TighteningRow>) {
    let mut lam = TighteningVector::zeros(net);
    let mut rows = Vec::new();
    let zq = unc.z(ConstraintClass::Q);
    let zv = unc.z(ConstraintClass::V);
    let zt = unc.z(ConstraintClass::Theta);
    let mut load_pos = vec![usize::MAX; net.n_bus()];
    for (k, &b) in net.load_buses.iter().enumerate() {
        load_pos[b] = k;
    }
    for (r, slot) in part.slots().iter().enumerate() {
        let (class, index, z, bounded) = match *slot {
            XSlot::ReactiveGen { gen, .. } => {
                let g = &net.case.generators[gen];
                (ConstraintClass::Q, gen, zq, has_finite_bounds(g.q_min, g.q_max))
            }
            XSlot::LoadVoltage { bus } => {
                let b = &net.case.buses[bus];
                (ConstraintClass::V, load_pos[bus], zv, has_finite_bounds(b.v_min, b.v_max))
            }
            XSlot::Angle { bus } => {
                let b = &net.case.buses[bus];
                (ConstraintClass::Theta, bus, zt, has_finite_bounds(b.theta_min, b.theta_max))
            }
            XSlot::SlackPower { .. } => continue,
        };
        if !bounded {
            continue;
        }
        let row_norm = if z == 0.0 || unc.sigma.is_zero() {
            0.0
        } else {
            unc.sigma.tr_norm(&gamma.row(r))
        };
        let lambda = z * row_norm;
        match class {
            ConstraintClass::Q => lam.lam_q[index] = lambda,
            ConstraintClass::V => lam.lam_v[index] = lambda,
            ConstraintClass::Theta => lam.lam_theta[index] = lambda,
            ConstraintClass::G => unreachable!(),
        }
        rows.push(TighteningRow {
            class,
            index,
            z,
            row_norm,
            lambda,
        });
    }
    (lam, rows)
}

/// γ_g z_g ‖(∂g/∂x)_l Γ Σ‖ per branch (0 for unlimited branches).
pub fn tighten_lines(
    net: &Network,
    part: &XYPartition,
    point: &OperatingPoint,
    unc: &UncertaintyModel,
    gamma: &GammaOperator,
) -> (Vec<f64>, Vec<TighteningRow>) {
    let mut lam = vec![0.0; net.case.n_branch()];
    let mut rows = Vec::new();
    let z = unc.z(ConstraintClass::G);
    let gx = jacobian_g_x(net, part, point).to_csc();
    // Row-wise access: gather the transposed rows.
    let mut by_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); gx.nrows()];
    for c in 0..gx.ncols() {
        for (r, v) in gx.col(c) {
            by_row[r].push((c, v));
        }
    }
    for (row, &l) in net.limited.iter().enumerate() {
        let row_norm = if unc.gamma_g == 0.0 || z == 0.0 || unc.sigma.is_zero() {
            0.0
        } else {
            let mut a = vec![0.0; gamma.dim()];
            for &(c, v) in &by_row[row] {
                a[c] += v;
            }
            unc.sigma.tr_norm(&gamma.apply_transpose(&a))
        };
        let lambda = unc.gamma_g * z * row_norm;
        lam[l] = lambda;
        rows.push(TighteningRow {
            class: ConstraintClass::G,
            index: l,
            z,
            row_norm,
            lambda,
        });
    }
    (lam, rows)
}

/// Full tightening vector at a solved point.
pub fn compute_tightening(
    net: &Network,
    part: &XYPartition,
    point: &OperatingPoint,
    unc: &UncertaintyModel,
    line_tightening: bool,
) -> Result<(TighteningVector, Vec<TighteningRow>, GammaOperator)> {
    let gamma = GammaOperator::new(net, part, point)?;
    let (mut lam, mut rows) = tighten_bounds(net, part, unc, &gamma);
    if line_tightening {
        let (lg, lrows) = tighten_lines(net, part, point, unc, &gamma);
        lam.lam_g = lg;
        rows.extend(lrows);
    }
    Ok((lam, rows, gamma))
}

/// CSV with columns iter, class, index, z, row_norm, lambda.
pub fn write_rows_csv<W: Write>(out: W, batches: &[(usize, Vec<TighteningRow>)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iter", "class", "index", "z", "row_norm", "lambda"])?;
    for (it, rows) in batches {
        for r in rows {
            w.write_record(&[
                it.to_string(),
                r.class.label().to_string(),
                r.index.to_string(),
                format!("{:e}", r.z),
                format!("{:e}", r.row_norm),
                format!("{:e}", r.lambda),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::Triplets;

    #[test]
    fn quantiles() {
        assert_eq!(inv_norm_cdf(0.5).unwrap(), 0.0);
        assert!((inv_norm_cdf(0.9).unwrap() - 1.2815515655446004).abs() < 1e-12);
        assert!((inv_norm_cdf(0.975).unwrap() - 1.959963984540054).abs() < 1e-12);
        assert!((inv_norm_cdf(1e-10).unwrap() + 6.361340902404056).abs() < 1e-9);
        assert!(matches!(inv_norm_cdf(0.0), Err(Error::Domain(_))));
        assert!(matches!(inv_norm_cdf(1.0), Err(Error::Domain(_))));
        assert!(inv_norm_cdf(f64::NAN).is_err());
    }

    #[test]
    fn cdf_continuity_at_switch() {
        let a = upper_tail(2.5_f64.next_down());
        let b = upper_tail(2.5);
        assert!((a - b).abs() < 1e-15);
        assert!((norm_cdf(0.0) - 0.5).abs() < 1e-16);
    }

    #[test]
    fn gamma_of_diagonal() {
        let mut t = Triplets::new(3, 3);
        for (i, a) in [2.0, -4.0, 0.5].iter().enumerate() {
            t.push(i, i, *a);
        }
        let g = GammaOperator::from_jacobian(t.to_csc()).unwrap();
        assert_eq!(g.row(1), vec![0.0, 0.25, 0.0]);
        assert_eq!(g.apply(&[1.0, 1.0, 1.0]), vec![-0.5, 0.25, -2.0]);
        let (one, inf) = g.norms();
        assert_eq!((one, inf), (2.0, 2.0));
    }

    #[test]
    fn sigma_forms_agree() {
        let w = [0.3, -1.0, 2.0];
        let a = SigmaMatrix::scaled_identity(3, 0.5);
        let b = SigmaMatrix::Diagonal(vec![0.5; 3]);
        let c = SigmaMatrix::Dense {
            dim: 3,
            data: vec![0.5, 0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.5],
        };
        for s in [&b, &c] {
            assert!((a.tr_norm(&w) - s.tr_norm(&w)).abs() < 1e-15);
            assert!((a.norm2() - s.norm2()).abs() < 1e-15);
            assert_eq!(a.mul(&w), s.mul(&w));
        }
    }

    #[test]
    fn covariance_factor_reproduces_covariance() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let s = SigmaMatrix::from_covariance(&cov).unwrap();
        let l = s.to_dense();
        assert!((&l * l.transpose() - &cov).amax() < 1e-14);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(SigmaMatrix::from_covariance(&bad).is_err());
    }
}
