//! The Gaussian-kernel covariance family of an isotropic Brownian flow.
//!
//! The covariance is a mixture of a potential (gradient) field with weight
//! `alpha` and a solenoidal (divergence-free) field with weight `1 - alpha`,
//! both generated by the kernel `exp(-|x|^2 / (2 ell^2))`. With `s = r/ell`
//! and `gamma = (1 - alpha)/(d - 1)`:
//!
//! ```text
//! B_L(r) = (1 - alpha s^2) exp(-s^2/2)
//! B_N(r) = (1 - gamma s^2) exp(-s^2/2)
//! b(x)   = e (1 - gamma |u|^2) I + e (gamma - alpha) u u^T,   u = x/ell
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{SmallMat, MAX_DIM};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct ModelParams {
    d: usize,
    alpha: f64,
    #[serde(default = "default_ell")]
    ell: f64,
}

fn default_ell() -> f64 {
    1.0
}

/// Isotropic covariance model with dimension `d`, potential weight `alpha`
/// and length scale `ell`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelParams", into = "ModelParams")]
pub struct IsotropicModel {
    d: usize,
    alpha: f64,
    ell: f64,
}

impl TryFrom<ModelParams> for IsotropicModel {
    type Error = Error;
    fn try_from(p: ModelParams) -> Result<Self> {
        IsotropicModel::new(p.d, p.alpha, p.ell)
    }
}

impl From<IsotropicModel> for ModelParams {
    fn from(m: IsotropicModel) -> Self {
        ModelParams {
            d: m.d,
            alpha: m.alpha,
            ell: m.ell,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regime {
    Transient,
    NotGuaranteed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Convergence {
    AlmostSure,
    InProbability,
}

/// Transience classification by dimension and top Lyapunov exponent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RegimeInfo {
    pub regime: Regime,
    /// Mode of convergence of the two-point distance to infinity; `None`
    /// when transience is not guaranteed.
    pub convergence: Option<Convergence>,
}

/// Default models of the experiment battery: d = 2 with alpha in
/// {0, 0.05, 0.25, 1} and d = 3 with alpha in {0, 0.5}, all with ell = 1.
pub fn battery() -> Vec<IsotropicModel> {
    [(2, 0.0), (2, 0.05), (2, 0.25), (2, 1.0), (3, 0.0), (3, 0.5)]
        .into_iter()
        .map(|(d, a)| IsotropicModel::new(d, a, 1.0).expect("battery parameters are admissible"))
        .collect()
}

/// Covariance of the velocity gradient at zero separation,
/// `C[i][k][j][l] = E[dF_ij dF_kl] / dt = -d_j d_l b_ik(0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCovTensor {
    d: usize,
    c: Vec<f64>,
}

impl GradientCovTensor {
    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn get(&self, i: usize, k: usize, j: usize, l: usize) -> f64 {
        let d = self.d;
        self.c[((i * d + k) * d + j) * d + l]
    }

    /// The d^2 x d^2 matrix on index pairs, row `(i,j)` and column `(k,l)`
    /// at flat positions `i*d + j`, `k*d + l`, row-major.
    pub fn as_matrix(&self) -> Vec<f64> {
        let d = self.d;
        let n = d * d;
        let mut m = vec![0.0; n * n];
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    for l in 0..d {
                        m[(i * d + j) * n + k * d + l] = self.get(i, k, j, l);
                    }
                }
            }
        }
        m
    }

    /// `M_ij = sum_k C[i][k][k][j]`, the Ito correction of `E[dF dF] / dt`.
    pub fn contraction(&self) -> SmallMat {
        let d = self.d;
        SmallMat::from_fn(d, |i, j| (0..d).map(|k| self.get(i, k, k, j)).sum())
    }

    /// Variance rate of `trace(dF)`.
    pub fn trace_variance(&self) -> f64 {
        let d = self.d;
        let mut v = 0.0;
        for i in 0..d {
            for k in 0..d {
                v += self.get(i, k, i, k);
            }
        }
        v
    }
}

impl IsotropicModel {
    pub fn new(d: usize, alpha: f64, ell: f64) -> Result<Self> {
        if !(2..=MAX_DIM).contains(&d) {
            return Err(Error::InvalidModel(format!(
                "dimension {d} outside 2..={MAX_DIM}"
            )));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidModel(format!(
                "alpha = {alpha} outside [0, 1]"
            )));
        }
        if !(ell > 0.0 && ell.is_finite()) {
            return Err(Error::InvalidModel(format!("ell = {ell} must be positive")));
        }
        Ok(Self { d, alpha, ell })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn ell(&self) -> f64 {
        self.ell
    }

    /// Transversal coefficient of the quadratic term, `(1 - alpha)/(d - 1)`.
    #[inline]
    pub(crate) fn gamma(&self) -> f64 {
        (1.0 - self.alpha) / (self.d as f64 - 1.0)
    }

    fn check_r(r: f64) -> Result<()> {
        if r >= 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "radius {r} must be nonnegative"
            )))
        }
    }

    pub fn longitudinal(&self, r: f64) -> Result<f64> {
        Self::check_r(r)?;
        Ok(self.b_l(r))
    }

    pub fn transversal(&self, r: f64) -> Result<f64> {
        Self::check_r(r)?;
        Ok(self.b_n(r))
    }

    #[inline]
    pub(crate) fn b_l(&self, r: f64) -> f64 {
        let s2 = (r / self.ell).powi(2);
        (1.0 - self.alpha * s2) * (-0.5 * s2).exp()
    }

    #[inline]
    pub(crate) fn b_n(&self, r: f64) -> f64 {
        let s2 = (r / self.ell).powi(2);
        (1.0 - self.gamma() * s2) * (-0.5 * s2).exp()
    }

    /// `1 - B_L(r)` without cancellation at small `r`.
    #[inline]
    pub fn one_minus_b_l(&self, r: f64) -> f64 {
        let s2 = (r / self.ell).powi(2);
        -(-0.5 * s2).exp_m1() + self.alpha * s2 * (-0.5 * s2).exp()
    }

    /// `1 - B_N(r)` without cancellation at small `r`.
    #[inline]
    pub fn one_minus_b_n(&self, r: f64) -> f64 {
        let s2 = (r / self.ell).powi(2);
        -(-0.5 * s2).exp_m1() + self.gamma() * s2 * (-0.5 * s2).exp()
    }

    /// `B_L(r) - B_N(r)`.
    #[inline]
    pub fn b_l_minus_b_n(&self, r: f64) -> f64 {
        let s2 = (r / self.ell).powi(2);
        (self.gamma() - self.alpha) * s2 * (-0.5 * s2).exp()
    }

    /// `(beta_L, beta_N)`, the curvatures `-B''(0)`.
    pub fn beta_params(&self) -> (f64, f64) {
        let kappa = 1.0 / (self.ell * self.ell);
        let a = self.alpha;
        let dd = self.d as f64;
        let beta_l = kappa * (3.0 * a + (1.0 - a));
        let beta_n = kappa * (a + (1.0 - a) * (dd + 1.0) / (dd - 1.0));
        (beta_l, beta_n)
    }

    pub fn lyapunov_spectrum(&self) -> Vec<f64> {
        let (bl, bn) = self.beta_params();
        let d = self.d as f64;
        (1..=self.d)
            .map(|i| {
                let i = i as f64;
                (d - i) * bn / 2.0 - i * bl / 2.0
            })
            .collect()
    }

    pub fn top_lyapunov(&self) -> f64 {
        self.lyapunov_spectrum()[0]
    }

    /// Small-distance exponent of the invariant two-point density,
    /// `psi(s) ~ c s^mu` as `s -> 0`.
    pub fn psi_exponent(&self) -> f64 {
        let (bl, bn) = self.beta_params();
        let d = self.d as f64;
        (d - 1.0) * bn / bl - (d + 1.0)
    }

    pub fn regime(&self) -> RegimeInfo {
        let l1 = self.top_lyapunov();
        let (regime, convergence) = match self.d {
            d if d >= 4 => (Regime::Transient, Some(Convergence::AlmostSure)),
            3 if l1 >= 0.0 => (Regime::Transient, Some(Convergence::AlmostSure)),
            2 if l1 > 0.0 => (Regime::Transient, Some(Convergence::InProbability)),
            _ => (Regime::NotGuaranteed, None),
        };
        RegimeInfo {
            regime,
            convergence,
        }
    }

    pub fn is_transient(&self) -> bool {
        self.regime().regime == Regime::Transient
    }

    /// True on the divergence-free locus `(d-1) beta_N = (d+1) beta_L`,
    /// which for this family is `alpha = 0`.
    pub fn is_volume_preserving(&self) -> bool {
        self.alpha == 0.0
    }

    /// Whether the persistence condition `beta_N / beta_L > d/(d-1)` holds.
    pub fn volume_persists(&self) -> bool {
        let (bl, bn) = self.beta_params();
        let d = self.d as f64;
        bn / bl > d / (d - 1.0)
    }

    /// Writes `b(x)` (row-major d x d) into `out`.
    #[inline]
    pub fn b_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.d;
        debug_assert!(x.len() == d && out.len() == d * d);
        let inv = 1.0 / self.ell;
        let mut q = 0.0;
        for &xi in x {
            q += (xi * inv) * (xi * inv);
        }
        if q == 0.0 {
            for i in 0..d {
                for k in 0..d {
                    out[i * d + k] = if i == k { 1.0 } else { 0.0 };
                }
            }
            return;
        }
        let e = (-0.5 * q).exp();
        let g = self.gamma();
        let c = g - self.alpha;
        for i in 0..d {
            let ui = x[i] * inv;
            for k in 0..d {
                let uk = x[k] * inv;
                let diag = if i == k { 1.0 - g * q } else { 0.0 };
                out[i * d + k] = e * (diag + c * ui * uk);
            }
        }
    }

    pub fn b_matrix(&self, x: &[f64]) -> SmallMat {
        assert_eq!(x.len(), self.d, "point dimension mismatch");
        let mut buf = [0.0; MAX_DIM * MAX_DIM];
        self.b_into(x, &mut buf[..self.d * self.d]);
        SmallMat::from_row_slice(self.d, &buf[..self.d * self.d])
    }

    /// Writes `b`, `grad b` and (optionally) `hess b` at `x`.
    ///
    /// Layouts: `b[i*d + k]`, `g[(i*d + k)*d + j] = d_j b_ik`,
    /// `h[((i*d + k)*d + j)*d + l] = d_j d_l b_ik`.
    pub fn derivatives_into(&self, x: &[f64], b: &mut [f64], g: &mut [f64], h: Option<&mut [f64]>) {
        let d = self.d;
        let inv = 1.0 / self.ell;
        let mut u = [0.0; MAX_DIM];
        let mut q = 0.0;
        for (ui, &xi) in u.iter_mut().zip(x) {
            *ui = xi * inv;
            q += *ui * *ui;
        }
        let e = (-0.5 * q).exp();
        let gm = self.gamma();
        let c = gm - self.alpha;
        let delta = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
        let p = |i: usize, k: usize| (1.0 - gm * q) * delta(i, k) + c * u[i] * u[k];
        // derivative of p_ik in direction l
        let dp = |i: usize, k: usize, l: usize| {
            -2.0 * gm * u[l] * delta(i, k) + c * (delta(i, l) * u[k] + delta(k, l) * u[i])
        };
        for i in 0..d {
            for k in 0..d {
                b[i * d + k] = e * p(i, k);
                for j in 0..d {
                    g[(i * d + k) * d + j] = e * (-u[j] * p(i, k) + dp(i, k, j)) * inv;
                }
            }
        }
        if let Some(h) = h {
            let inv2 = inv * inv;
            for i in 0..d {
                for k in 0..d {
                    let pik = p(i, k);
                    for j in 0..d {
                        let gj = -u[j] * pik + dp(i, k, j);
                        for l in 0..d {
                            let ddp = -2.0 * gm * delta(j, l) * delta(i, k)
                                + c * (delta(i, j) * delta(k, l) + delta(k, j) * delta(i, l));
                            let v = -u[l] * gj - delta(j, l) * pik - u[j] * dp(i, k, l) + ddp;
                            h[((i * d + k) * d + j) * d + l] = e * v * inv2;
                        }
                    }
                }
            }
        }
    }

    /// `grad_b(x)[(i*d + k)*d + j] = d_j b_ik(x)`.
    pub fn grad_b(&self, x: &[f64]) -> Vec<f64> {
        let d = self.d;
        assert_eq!(x.len(), d, "point dimension mismatch");
        let mut b = vec![0.0; d * d];
        let mut g = vec![0.0; d * d * d];
        self.derivatives_into(x, &mut b, &mut g, None);
        g
    }

    /// `hess_b(x)[((i*d + k)*d + j)*d + l] = d_j d_l b_ik(x)`.
    pub fn hess_b(&self, x: &[f64]) -> Vec<f64> {
        let d = self.d;
        assert_eq!(x.len(), d, "point dimension mismatch");
        let mut b = vec![0.0; d * d];
        let mut g = vec![0.0; d * d * d];
        let mut h = vec![0.0; d * d * d * d];
        self.derivatives_into(x, &mut b, &mut g, Some(&mut h));
        h
    }

    /// Closed form `C_ikjl = beta_N d_ik d_jl - (beta_N - beta_L)/2 (d_ij d_kl + d_il d_kj)`.
    pub fn gradient_cov(&self) -> GradientCovTensor {
        let d = self.d;
        let (bl, bn) = self.beta_params();
        let half = 0.5 * (bn - bl);
        let delta = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
        let mut c = vec![0.0; d * d * d * d];
        for i in 0..d {
            for k in 0..d {
                for j in 0..d {
                    for l in 0..d {
                        c[((i * d + k) * d + j) * d + l] = bn * delta(i, k) * delta(j, l)
                            - half * (delta(i, j) * delta(k, l) + delta(i, l) * delta(k, j));
                    }
                }
            }
        }
        GradientCovTensor { d, c }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(d: usize, alpha: f64) -> IsotropicModel {
        IsotropicModel::new(d, alpha, 1.0).unwrap()
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(IsotropicModel::new(1, 0.5, 1.0).is_err());
        assert!(IsotropicModel::new(2, 1.5, 1.0).is_err());
        assert!(IsotropicModel::new(2, 0.5, 0.0).is_err());
        assert!(model(2, 0.5).longitudinal(-1.0).is_err());
    }

    #[test]
    fn normalization_and_decay() {
        for &a in &[0.0, 0.3, 1.0] {
            let m = model(3, a);
            assert_eq!(m.longitudinal(0.0).unwrap(), 1.0);
            assert_eq!(m.transversal(0.0).unwrap(), 1.0);
            assert!(m.longitudinal(100.0).unwrap().abs() < 1e-12);
            assert!(m.transversal(100.0).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn potential_field_at_unit_distance() {
        let m = model(2, 1.0);
        assert!(m.longitudinal(1.0).unwrap().abs() < 1e-15);
        assert!((m.transversal(1.0).unwrap() - (-0.5f64).exp()).abs() < 1e-15);
        let b = m.b_matrix(&[1.0, 0.0]);
        assert!(b[(0, 0)].abs() < 1e-15);
        assert!((b[(1, 1)] - 0.6065306597126334).abs() < 1e-12);
        assert_eq!(b[(0, 1)], 0.0);
    }

    #[test]
    fn identity_at_origin() {
        let m = model(4, 0.25);
        assert_eq!(m.b_matrix(&[0.0; 4]), SmallMat::identity(4));
        assert!(m.grad_b(&[0.0; 4]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn complements_match_direct_form() {
        let m = model(3, 0.4);
        for &r in &[0.3, 1.0, 2.5] {
            assert!((m.one_minus_b_l(r) - (1.0 - m.b_l(r))).abs() < 1e-14);
            assert!((m.one_minus_b_n(r) - (1.0 - m.b_n(r))).abs() < 1e-14);
            assert!((m.b_l_minus_b_n(r) - (m.b_l(r) - m.b_n(r))).abs() < 1e-14);
        }
    }

    #[test]
    fn beta_examples() {
        assert_eq!(model(2, 1.0).beta_params(), (3.0, 1.0));
        assert_eq!(model(2, 0.0).beta_params(), (1.0, 3.0));
        let m = IsotropicModel::new(2, 0.0, 2.0).unwrap();
        assert_eq!(m.beta_params(), (0.25, 0.75));
    }

    #[test]
    fn lyapunov_examples() {
        assert_eq!(model(2, 0.0).lyapunov_spectrum(), vec![1.0, -1.0]);
        let l = model(3, 1.0).lyapunov_spectrum();
        assert_eq!(l, vec![-0.5, -2.5, -4.5]);
        // beta_L = beta_N = beta when alpha = gamma, i.e. alpha = 1/3 for d = 3
        let m = model(3, 1.0 / 3.0);
        let (bl, bn) = m.beta_params();
        assert!((bl - bn).abs() < 1e-15);
        let l = m.lyapunov_spectrum();
        for (got, want) in l.iter().zip([bl / 2.0, -bl / 2.0, -1.5 * bl]) {
            assert!((got - want).abs() < 1e-14);
        }
        for d in 2..=6 {
            let s: f64 = model(d, 0.0).lyapunov_spectrum().iter().sum();
            assert!(s.abs() < 1e-12, "d = {d}, sum = {s}");
        }
    }

    #[test]
    fn regime_examples() {
        for &a in &[0.0, 0.5, 1.0] {
            assert_eq!(model(4, a).regime().regime, Regime::Transient);
        }
        let r = model(2, 0.0).regime();
        assert_eq!(r.regime, Regime::Transient);
        assert_eq!(r.convergence, Some(Convergence::InProbability));
        assert_eq!(model(2, 1.0).regime().regime, Regime::NotGuaranteed);
        assert_eq!(model(2, 0.5).regime().regime, Regime::NotGuaranteed);
        assert_eq!(
            model(3, 0.75).regime().convergence,
            Some(Convergence::AlmostSure)
        );
        assert_eq!(model(3, 0.8).regime().regime, Regime::NotGuaranteed);
    }

    #[test]
    fn gradient_cov_trace_and_contraction() {
        let c = model(3, 0.0).gradient_cov();
        assert!(c.trace_variance().abs() < 1e-14);
        let m = model(2, 0.3);
        let (bl, bn) = m.beta_params();
        let mm = m.gradient_cov().contraction();
        let expect = bn + 3.0 * (bl - bn) / 2.0;
        assert!((mm[(0, 0)] - expect).abs() < 1e-14 && mm[(0, 1)].abs() < 1e-15);
    }

    #[test]
    fn serde_validates() {
        let m: IsotropicModel = serde_json::from_str(r#"{"d":3,"alpha":0.5}"#).unwrap();
        assert_eq!(m.ell(), 1.0);
        assert!(serde_json::from_str::<IsotropicModel>(r#"{"d":3,"alpha":2.0}"#).is_err());
    }
}
