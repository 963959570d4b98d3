//! Gaussian and mixture primitives.
//!
//! Bivariate Gaussians ([`Gaussian2`]) carry every emotion distribution in
//! the valence–arousal plane; [`GaussianD`] carries the acoustic topics.
//! All covariance work goes through a Cholesky factor whose pivots must
//! exceed [`PD_EPSILON`], and all densities are evaluated in log space.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Smallest admissible Cholesky pivot (the diagonal entry before the
/// square root) for a matrix to count as positive definite.
pub const PD_EPSILON: f64 = 1e-10;

/// Tolerance used when checking matrix symmetry.
pub const SYMMETRY_TOL: f64 = 1e-12;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Numerically stable `ln(sum(exp(v)))`. Returns `-inf` for an empty slice
/// or when every entry is `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Symmetric 2×2 matrix stored as `(xx, xy, yy)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymMat2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl SymMat2 {
    pub const fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Self { xx, xy, yy }
    }

    pub const fn identity() -> Self {
        Self::new(1.0, 0.0, 1.0)
    }

    pub const fn zeros() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub fn diag(xx: f64, yy: f64) -> Self {
        Self::new(xx, 0.0, yy)
    }

    pub fn scaled_identity(s: f64) -> Self {
        Self::new(s, 0.0, s)
    }

    /// Builds from a full 2×2 matrix, rejecting asymmetric input.
    pub fn from_rows(m: [[f64; 2]; 2]) -> Result<Self> {
        if (m[0][1] - m[1][0]).abs() > SYMMETRY_TOL {
            return Err(Error::InvalidMatrix(format!(
                "off-diagonal entries differ: {} vs {}",
                m[0][1], m[1][0]
            )));
        }
        Ok(Self::new(m[0][0], m[0][1], m[1][1]))
    }

    /// `v vᵀ`
    pub fn outer(v: [f64; 2]) -> Self {
        Self::new(v[0] * v[0], v[0] * v[1], v[1] * v[1])
    }

    pub fn add(&self, o: &Self) -> Self {
        Self::new(self.xx + o.xx, self.xy + o.xy, self.yy + o.yy)
    }

    pub fn sub(&self, o: &Self) -> Self {
        Self::new(self.xx - o.xx, self.xy - o.xy, self.yy - o.yy)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new(self.xx * s, self.xy * s, self.yy * s)
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> [f64; 2] {
        let half_tr = 0.5 * self.trace();
        let half_diff = 0.5 * (self.xx - self.yy);
        let r = (half_diff * half_diff + self.xy * self.xy).sqrt();
        [half_tr - r, half_tr + r]
    }

    pub fn is_finite(&self) -> bool {
        self.xx.is_finite() && self.xy.is_finite() && self.yy.is_finite()
    }

    pub fn cholesky(&self) -> Option<Chol2> {
        if !self.is_finite() || self.xx <= PD_EPSILON {
            return None;
        }
        let l11 = self.xx.sqrt();
        let l21 = self.xy / l11;
        let pivot = self.yy - l21 * l21;
        if pivot <= PD_EPSILON {
            return None;
        }
        Some(Chol2 {
            l11,
            l21,
            l22: pivot.sqrt(),
        })
    }

    pub fn is_positive_definite(&self) -> bool {
        self.cholesky().is_some()
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.xx, self.xy, self.yy]
    }

    pub fn rows(&self) -> [[f64; 2]; 2] {
        [[self.xx, self.xy], [self.xy, self.yy]]
    }
}

/// Lower-triangular Cholesky factor of a [`SymMat2`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Chol2 {
    l11: f64,
    l21: f64,
    l22: f64,
}

impl Chol2 {
    /// Solves `L y = v`.
    pub fn solve_lower(&self, v: [f64; 2]) -> [f64; 2] {
        let y0 = v[0] / self.l11;
        let y1 = (v[1] - self.l21 * y0) / self.l22;
        [y0, y1]
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (self.l11.ln() + self.l22.ln())
    }

    /// `vᵀ Σ⁻¹ v`
    pub fn mahalanobis_sq(&self, v: [f64; 2]) -> f64 {
        let y = self.solve_lower(v);
        y[0] * y[0] + y[1] * y[1]
    }

    /// `tr(A Σ⁻¹)` where `other` is the Cholesky factor of `A`.
    fn trace_solve(&self, other: &Chol2) -> f64 {
        let c0 = self.solve_lower([other.l11, other.l21]);
        let c1 = self.solve_lower([0.0, other.l22]);
        c0[0] * c0[0] + c0[1] * c0[1] + c1[0] * c1[0] + c1[1] * c1[1]
    }

    /// `L z` for a standard-normal draw `z`.
    pub fn transform(&self, z: [f64; 2]) -> [f64; 2] {
        [self.l11 * z[0], self.l21 * z[0] + self.l22 * z[1]]
    }
}

#[derive(Serialize, Deserialize)]
struct Gaussian2Repr {
    mean: [f64; 2],
    cov: [f64; 3],
}

/// A bivariate Gaussian over the valence–arousal plane. Always positive
/// definite once constructed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Gaussian2Repr", into = "Gaussian2Repr")]
pub struct Gaussian2 {
    mean: [f64; 2],
    cov: SymMat2,
    chol: Chol2,
}

impl TryFrom<Gaussian2Repr> for Gaussian2 {
    type Error = Error;
    fn try_from(r: Gaussian2Repr) -> Result<Self> {
        Gaussian2::new(r.mean, SymMat2::new(r.cov[0], r.cov[1], r.cov[2]))
    }
}

impl From<Gaussian2> for Gaussian2Repr {
    fn from(g: Gaussian2) -> Self {
        Gaussian2Repr {
            mean: g.mean,
            cov: g.cov.to_array(),
        }
    }
}

impl Gaussian2 {
    pub fn new(mean: [f64; 2], cov: SymMat2) -> Result<Self> {
        if !mean[0].is_finite() || !mean[1].is_finite() {
            return Err(Error::InvalidInput("non-finite Gaussian mean".into()));
        }
        let chol = cov.cholesky().ok_or(Error::DegenerateCovariance)?;
        Ok(Self { mean, cov, chol })
    }

    pub fn standard() -> Self {
        Self::new([0.0, 0.0], SymMat2::identity()).expect("identity is PD")
    }

    pub fn mean(&self) -> [f64; 2] {
        self.mean
    }

    pub fn cov(&self) -> SymMat2 {
        self.cov
    }

    pub fn chol(&self) -> &Chol2 {
        &self.chol
    }

    pub fn with_mean(&self, mean: [f64; 2]) -> Self {
        Self { mean, ..*self }
    }

    pub fn log_pdf(&self, x: [f64; 2]) -> f64 {
        let d = [x[0] - self.mean[0], x[1] - self.mean[1]];
        -LN_2PI - 0.5 * self.chol.log_det() - 0.5 * self.chol.mahalanobis_sq(d)
    }

    pub fn pdf(&self, x: [f64; 2]) -> f64 {
        self.log_pdf(x).exp()
    }

    /// Draws one sample given two independent standard-normal variates.
    pub fn sample_with(&self, z: [f64; 2]) -> [f64; 2] {
        let t = self.chol.transform(z);
        [self.mean[0] + t[0], self.mean[1] + t[1]]
    }
}

/// Log-density of `x` under a bivariate Gaussian.
pub fn log_pdf(x: &[f64], g: &Gaussian2) -> Result<f64> {
    if x.len() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: x.len(),
        });
    }
    Ok(g.log_pdf([x[0], x[1]]))
}

/// One-way Kullback–Leibler divergence `KL(a ‖ b)`.
pub fn kl_divergence(a: &Gaussian2, b: &Gaussian2) -> f64 {
    let d = [a.mean[0] - b.mean[0], a.mean[1] - b.mean[1]];
    let trace = b.chol.trace_solve(&a.chol);
    let log_det_ratio = a.chol.log_det() - b.chol.log_det();
    let maha = b.chol.mahalanobis_sq(d);
    // Guard against tiny negative round-off.
    (0.5 * (trace - log_det_ratio + maha - 2.0)).max(0.0)
}

/// Symmetric KL divergence, the average of both one-way divergences.
pub fn kl2(a: &Gaussian2, b: &Gaussian2) -> f64 {
    0.5 * (kl_divergence(a, b) + kl_divergence(b, a))
}

/// Cholesky-based positive-definiteness test for a row-major `n×n` matrix.
pub fn is_positive_definite(matrix: &[f64], n: usize) -> Result<bool> {
    if matrix.len() != n * n || n == 0 {
        return Err(Error::InvalidMatrix(format!(
            "expected {n}x{n} entries, got {}",
            matrix.len()
        )));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if (matrix[i * n + j] - matrix[j * n + i]).abs() > SYMMETRY_TOL {
                return Err(Error::InvalidMatrix(format!(
                    "asymmetric at ({i},{j})"
                )));
            }
        }
    }
    Ok(cholesky(matrix, n).is_some())
}

/// Row-major lower Cholesky factor, or `None` if any pivot is at or below
/// [`PD_EPSILON`] (or non-finite).
pub fn cholesky(matrix: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut pivot = matrix[j * n + j];
        for k in 0..j {
            pivot -= l[j * n + k] * l[j * n + k];
        }
        if !(pivot > PD_EPSILON) {
            return None;
        }
        let ljj = pivot.sqrt();
        l[j * n + j] = ljj;
        for i in (j + 1)..n {
            let mut s = matrix[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / ljj;
        }
    }
    Some(l)
}

/// Covariance of a [`GaussianD`].
#[derive(Debug, Clone, PartialEq)]
pub enum CovarianceD {
    Diagonal(Vec<f64>),
    /// Row-major matrix together with its lower Cholesky factor.
    Full { matrix: Vec<f64>, chol: Vec<f64> },
}

/// A D-dimensional Gaussian, used for acoustic topics.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianD {
    mean: Vec<f64>,
    cov: CovarianceD,
    log_det: f64,
}

impl GaussianD {
    pub fn diagonal(mean: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        if mean.len() != variances.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                got: variances.len(),
            });
        }
        if mean.is_empty() {
            return Err(Error::EmptyInput("zero-dimensional Gaussian".into()));
        }
        if variances.iter().any(|v| !(*v > PD_EPSILON) || !v.is_finite()) {
            return Err(Error::DegenerateCovariance);
        }
        let log_det = variances.iter().map(|v| v.ln()).sum();
        Ok(Self {
            mean,
            cov: CovarianceD::Diagonal(variances),
            log_det,
        })
    }

    pub fn full(mean: Vec<f64>, matrix: Vec<f64>) -> Result<Self> {
        let n = mean.len();
        if n == 0 {
            return Err(Error::EmptyInput("zero-dimensional Gaussian".into()));
        }
        if !is_positive_definite(&matrix, n)? {
            return Err(Error::DegenerateCovariance);
        }
        let chol = cholesky(&matrix, n).ok_or(Error::DegenerateCovariance)?;
        let log_det = 2.0 * (0..n).map(|i| chol[i * n + i].ln()).sum::<f64>();
        Ok(Self {
            mean,
            cov: CovarianceD::Full { matrix, chol },
            log_det,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &CovarianceD {
        &self.cov
    }

    pub fn is_diagonal(&self) -> bool {
        matches!(self.cov, CovarianceD::Diagonal(_))
    }

    pub fn log_pdf(&self, x: &[f64]) -> Result<f64> {
        let n = self.dim();
        if x.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: x.len(),
            });
        }
        let maha = match &self.cov {
            CovarianceD::Diagonal(var) => x
                .iter()
                .zip(&self.mean)
                .zip(var)
                .map(|((xi, mi), vi)| (xi - mi) * (xi - mi) / vi)
                .sum::<f64>(),
            CovarianceD::Full { chol, .. } => {
                let mut y = vec![0.0; n];
                for i in 0..n {
                    let mut s = x[i] - self.mean[i];
                    for k in 0..i {
                        s -= chol[i * n + k] * y[k];
                    }
                    y[i] = s / chol[i * n + i];
                }
                y.iter().map(|v| v * v).sum()
            }
        };
        Ok(-0.5 * (n as f64 * (2.0 * PI).ln() + self.log_det + maha))
    }
}

/// A finite mixture with simplex weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture<G> {
    weights: Vec<f64>,
    components: Vec<G>,
}

impl<G> Mixture<G> {
    pub fn new(weights: Vec<f64>, components: Vec<G>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::EmptyInput("mixture needs at least one component".into()));
        }
        if weights.len() != components.len() {
            return Err(Error::DimensionMismatch {
                expected: components.len(),
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidInput("negative mixture weight".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "mixture weights sum to {total}"
            )));
        }
        Ok(Self {
            weights,
            components,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[G] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &G)> {
        self.weights.iter().copied().zip(self.components.iter())
    }
}

impl Mixture<Gaussian2> {
    pub fn log_pdf(&self, x: [f64; 2]) -> f64 {
        let terms: Vec<f64> = self
            .iter()
            .filter(|(w, _)| *w > 0.0)
            .map(|(w, g)| w.ln() + g.log_pdf(x))
            .collect();
        log_sum_exp(&terms)
    }

    pub fn pdf(&self, x: [f64; 2]) -> f64 {
        self.log_pdf(x).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(mean: [f64; 2], cov: SymMat2) -> Gaussian2 {
        Gaussian2::new(mean, cov).unwrap()
    }

    #[test]
    fn standard_normal_at_mode() {
        let v = log_pdf(&[0.0, 0.0], &Gaussian2::standard()).unwrap();
        assert!((v - (1.0 / (2.0 * PI)).ln()).abs() < 1e-12);
        assert!((v + 1.837877).abs() < 1e-6);
    }

    #[test]
    fn unit_mahalanobis() {
        let v = log_pdf(&[1.0, 0.0], &Gaussian2::standard()).unwrap();
        assert!((v + 2.337877).abs() < 1e-6);
    }

    #[test]
    fn log_pdf_rejects_wrong_dimension() {
        assert!(matches!(
            log_pdf(&[1.0], &Gaussian2::standard()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn non_pd_covariance_is_degenerate() {
        assert_eq!(
            Gaussian2::new([0.0, 0.0], SymMat2::diag(1.0, 0.0)),
            Err(Error::DegenerateCovariance)
        );
        assert_eq!(
            Gaussian2::new([0.0, 0.0], SymMat2::new(1.0, 2.0, 1.0)),
            Err(Error::DegenerateCovariance)
        );
    }

    #[test]
    fn kl_closed_form_cases() {
        let a = g([1.0, 0.0], SymMat2::identity());
        let b = Gaussian2::standard();
        assert_eq!(kl_divergence(&b, &b), 0.0);
        assert!((kl_divergence(&a, &b) - 0.5).abs() < 1e-12);
        assert!((kl2(&a, &b) - 0.5).abs() < 1e-12);
        let wide = g([0.0, 0.0], SymMat2::scaled_identity(2.0));
        assert!((kl_divergence(&wide, &b) - (1.0 - 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn pd_checks() {
        assert!(is_positive_definite(&[1.0, 0.0, 0.0, 1.0], 2).unwrap());
        assert!(!is_positive_definite(&[1.0, 0.0, 0.0, 0.0], 2).unwrap());
        assert!(!is_positive_definite(&[1.0, 2.0, 2.0, 1.0], 2).unwrap());
        assert!(matches!(
            is_positive_definite(&[1.0, 0.5, 0.4, 1.0], 2),
            Err(Error::InvalidMatrix(_))
        ));
    }

    #[test]
    fn eigenvalues_of_indefinite_matrix() {
        let e = SymMat2::new(1.0, 2.0, 1.0).eigenvalues();
        assert!((e[0] + 1.0).abs() < 1e-12 && (e[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn full_and_diagonal_agree() {
        let mean = vec![0.5, -1.0, 2.0];
        let var = vec![0.5, 2.0, 1.5];
        let diag = GaussianD::diagonal(mean.clone(), var.clone()).unwrap();
        let mut m = vec![0.0; 9];
        for i in 0..3 {
            m[i * 3 + i] = var[i];
        }
        let full = GaussianD::full(mean, m).unwrap();
        let x = [0.1, 0.2, 0.3];
        let a = diag.log_pdf(&x).unwrap();
        let b = full.log_pdf(&x).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn gaussian_d_matches_gaussian2() {
        let cov = SymMat2::new(0.3, 0.1, 0.2);
        let g2 = g([0.1, -0.2], cov);
        let gd = GaussianD::full(vec![0.1, -0.2], vec![0.3, 0.1, 0.1, 0.2]).unwrap();
        let x = [0.4, 0.05];
        assert!((g2.log_pdf(x) - gd.log_pdf(&x).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn mixture_rejects_off_simplex() {
        let c = vec![Gaussian2::standard(), Gaussian2::standard()];
        assert!(Mixture::new(vec![0.5, 0.6], c.clone()).is_err());
        assert!(Mixture::new(vec![0.5, 0.5], c).is_ok());
        assert!(Mixture::<Gaussian2>::new(vec![], vec![]).is_err());
    }

    #[test]
    fn serde_roundtrip_rejects_degenerate() {
        let json = r#"{"mean":[0.0,0.0],"cov":[1.0,0.0,0.0]}"#;
        assert!(serde_json::from_str::<Gaussian2>(json).is_err());
        let g = g([0.25, 0.5], SymMat2::new(0.3, 0.1, 0.2));
        let back: Gaussian2 = serde_json::from_str(&serde_json::to_string(&g).unwrap()).unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn log_sum_exp_edge_cases() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        assert!((log_sum_exp(&[0.0, 0.0]) - 2f64.ln()).abs() < 1e-15);
        assert!((log_sum_exp(&[-1000.0, -1000.0]) - (-1000.0 + 2f64.ln())).abs() < 1e-9);
    }
}
