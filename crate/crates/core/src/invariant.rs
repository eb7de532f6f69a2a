//! The invariant density of the two-point motion,
//!
//! ```text
//! psi(s) = exp(-(d-1) ∫_s^∞ (B_L - B_N)(u) / (u (1 - B_L(u))) du) / (1 - B_L(s)),
//! ```
//!
//! its tabulation with a nonincreasing majorant, and the pair integrals
//! `∫∫_{A×A} psi(|x-y|) dx dy` behind the persistence bound.

use serde::Serialize;

use crate::covmodel::IsotropicModel;
use crate::error::{Error, Result};
use crate::geometry::{pair_kernel_mean, SetDescriptor};
use crate::quad;

/// Left end of the tabulated range, in units of `ell`.
pub const S_MIN: f64 = 1e-4;
/// Right end of the tabulated range, in units of `ell`.
pub const S_MAX: f64 = 50.0;
/// Beyond this many length scales the integrand is below `1e-30`.
const CUTOFF: f64 = 12.0;
const GRID_POINTS: usize = 2000;

/// Radially symmetric kernel `h(|x - y|)`.
pub trait RadialKernel: Sync {
    fn eval(&self, r: f64) -> f64;
    fn is_nonincreasing(&self) -> bool;
}

/// `h ≡ c`.
#[derive(Debug, Clone, Copy)]
pub struct ConstantKernel(pub f64);

impl RadialKernel for ConstantKernel {
    fn eval(&self, _r: f64) -> f64 {
        self.0
    }
    fn is_nonincreasing(&self) -> bool {
        true
    }
}

fn integrand(model: &IsotropicModel, u: f64) -> f64 {
    model.b_l_minus_b_n(u) / (u * model.one_minus_b_l(u))
}

/// `∫_s^∞` of the exponent integrand.
fn tail_integral(model: &IsotropicModel, s: f64) -> Result<f64> {
    let ell = model.ell();
    let end = CUTOFF * ell;
    if s >= end {
        return Ok(0.0);
    }
    let panels = 40;
    let breaks: Vec<f64> = (0..=panels)
        .map(|i| s * (end / s).powf(i as f64 / panels as f64))
        .collect();
    let r = quad::integrate_panels(&|u| integrand(model, u), &breaks, 1e-14, 1e-12, 20_000);
    if !r.converged {
        return Err(Error::Numerical(format!(
            "psi quadrature did not converge at s = {s}"
        )));
    }
    Ok(r.value)
}

/// Direct evaluation of `psi(s)` for `s > 0`.
pub fn psi(model: &IsotropicModel, s: f64) -> Result<f64> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::InvalidArgument(format!("psi needs s > 0, got {s}")));
    }
    if s < S_MIN * model.ell() {
        return Err(Error::InvalidArgument(format!(
            "s = {s} is below the supported range {} ell",
            S_MIN
        )));
    }
    let dm1 = model.d() as f64 - 1.0;
    let i = tail_integral(model, s)?;
    Ok((-dm1 * i).exp() / model.one_minus_b_l(s))
}

/// `psi` on a log-spaced grid over `[1e-4, 50] ell`, with a natural cubic
/// spline in `(ln s, ln psi)` and the majorant `h(s_k) = max_{j>=k} psi(s_j)`.
#[derive(Debug, Clone, Serialize)]
pub struct PsiTable {
    pub model: IsotropicModel,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub majorant: Vec<f64>,
    #[serde(skip)]
    log_s: Vec<f64>,
    #[serde(skip)]
    log_v: Vec<f64>,
    #[serde(skip)]
    second: Vec<f64>,
    #[serde(skip)]
    exponent: f64,
}

impl PsiTable {
    pub fn new(model: &IsotropicModel) -> Result<Self> {
        Self::with_points(model, GRID_POINTS)
    }

    pub fn with_points(model: &IsotropicModel, m: usize) -> Result<Self> {
        if m < 4 {
            return Err(Error::InvalidArgument(
                "psi table needs at least 4 points".into(),
            ));
        }
        let ell = model.ell();
        let (lo, hi) = (S_MIN * ell, S_MAX * ell);
        let grid: Vec<f64> = (0..m)
            .map(|k| lo * (hi / lo).powf(k as f64 / (m - 1) as f64))
            .collect();
        // cumulative integrals from the right, one G7K15 panel per cell
        let end = CUTOFF * ell;
        let mut tail = vec![0.0; m];
        let mut acc = 0.0;
        for k in (0..m - 1).rev() {
            let (a, b) = (grid[k], grid[k + 1].min(end));
            if a < b {
                let (v, _) = quad::gk15(&|u| integrand(model, u), a, b);
                acc += v;
            }
            tail[k] = acc;
        }
        let dm1 = model.d() as f64 - 1.0;
        let values: Vec<f64> = grid
            .iter()
            .zip(&tail)
            .map(|(&s, &i)| (-dm1 * i).exp() / model.one_minus_b_l(s))
            .collect();
        if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Numerical(
                "psi table has non-positive or non-finite entries".into(),
            ));
        }
        let mut t = PsiTable {
            model: *model,
            log_s: grid.iter().map(|s| s.ln()).collect(),
            log_v: values.iter().map(|v| v.ln()).collect(),
            grid,
            values,
            majorant: Vec::new(),
            second: Vec::new(),
            exponent: model.psi_exponent(),
        };
        t.second = natural_spline(&t.log_s, &t.log_v);
        t.majorant = monotone_majorant(&t.values);
        Ok(t)
    }

    /// Interpolated `psi(s)` for `s` in the table range, `1` beyond it and
    /// the power law `psi(s_1) (s/s_1)^mu` below it.
    pub fn eval(&self, s: f64) -> f64 {
        let s1 = self.grid[0];
        let last = *self.grid.last().unwrap();
        if s >= last {
            return 1.0;
        }
        if s <= s1 {
            return self.values[0] * (s / s1).powf(self.exponent);
        }
        let x = s.ln();
        let k = self.cell(x);
        (spline_eval(&self.log_s, &self.log_v, &self.second, k, x)).exp()
    }

    /// Nonincreasing majorant `h >= psi`, linear between grid points.
    pub fn majorant_at(&self, s: f64) -> f64 {
        let s1 = self.grid[0];
        let last = *self.grid.last().unwrap();
        if s >= last {
            return 1.0_f64.max(*self.majorant.last().unwrap());
        }
        if s <= s1 {
            return self.majorant[0] * (s / s1).powf(self.exponent).max(1.0);
        }
        let x = s.ln();
        let k = self.cell(x);
        let w = (s - self.grid[k]) / (self.grid[k + 1] - self.grid[k]);
        (1.0 - w) * self.majorant[k] + w * self.majorant[k + 1]
    }

    fn cell(&self, x: f64) -> usize {
        let m = self.log_s.len();
        let k = self.log_s.partition_point(|&v| v <= x);
        k.saturating_sub(1).min(m - 2)
    }

    /// View of the table as the kernel `psi`.
    pub fn psi_kernel(&self) -> PsiKernel<'_> {
        PsiKernel(self)
    }

    /// View of the table as the majorant kernel `h`.
    pub fn majorant_kernel(&self) -> MajorantKernel<'_> {
        MajorantKernel(self)
    }
}

pub struct PsiKernel<'a>(&'a PsiTable);
pub struct MajorantKernel<'a>(&'a PsiTable);

impl RadialKernel for PsiKernel<'_> {
    fn eval(&self, r: f64) -> f64 {
        self.0.eval(r)
    }
    fn is_nonincreasing(&self) -> bool {
        self.0.values.windows(2).all(|w| w[1] <= w[0]) && self.0.exponent <= 0.0
    }
}

impl RadialKernel for MajorantKernel<'_> {
    fn eval(&self, r: f64) -> f64 {
        self.0.majorant_at(r)
    }
    fn is_nonincreasing(&self) -> bool {
        self.0.majorant.windows(2).all(|w| w[1] <= w[0])
    }
}

/// `h_k = max_{j >= k} v_j`.
pub fn monotone_majorant(values: &[f64]) -> Vec<f64> {
    let mut h = values.to_vec();
    for k in (0..h.len().saturating_sub(1)).rev() {
        h[k] = h[k].max(h[k + 1]);
    }
    h
}

fn natural_spline(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut m = vec![0.0; n];
    let mut c = vec![0.0; n];
    let mut r = vec![0.0; n];
    // tridiagonal system for interior second derivatives (Thomas algorithm)
    for i in 1..n - 1 {
        let h0 = x[i] - x[i - 1];
        let h1 = x[i + 1] - x[i];
        let a = h0 / 6.0;
        let b = (h0 + h1) / 3.0;
        let cc = h1 / 6.0;
        let rhs = (y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0;
        let denom = b - a * c[i - 1];
        c[i] = cc / denom;
        r[i] = (rhs - a * r[i - 1]) / denom;
    }
    for i in (1..n - 1).rev() {
        m[i] = r[i] - c[i] * m[i + 1];
    }
    m
}

fn spline_eval(x: &[f64], y: &[f64], m: &[f64], k: usize, t: f64) -> f64 {
    let h = x[k + 1] - x[k];
    let a = (x[k + 1] - t) / h;
    let b = (t - x[k]) / h;
    a * y[k] + b * y[k + 1] + ((a * a * a - a) * m[k] + (b * b * b - b) * m[k + 1]) * h * h / 6.0
}

/// Monte Carlo estimate of `∫∫_{A×A} k(|x-y|) dx dy`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairIntegral {
    pub estimate: f64,
    pub std_error: f64,
}

/// `∫∫_{A×A} k(|x-y|)` for an arbitrary kernel.
pub fn pair_integral(
    kernel: &dyn crate::invariant::RadialKernel,
    set: &SetDescriptor,
    n_samples: usize,
    seed: u64,
) -> Result<PairIntegral> {
    set.validate()?;
    if n_samples < 2 {
        return Err(Error::InvalidArgument("need at least two samples".into()));
    }
    let lam = set.measure();
    let m = pair_kernel_mean(kernel, set, n_samples, seed);
    Ok(PairIntegral {
        estimate: lam * lam * m.mean(),
        std_error: lam * lam * m.std_error(),
    })
}

fn require_expanding(model: &IsotropicModel) -> Result<()> {
    if model.top_lyapunov() <= 0.0 {
        return Err(Error::Refused(format!(
            "top Lyapunov exponent {} <= 0: the psi pair integral may diverge",
            model.top_lyapunov()
        )));
    }
    Ok(())
}

/// `∫∫_{A×A} psi(|x-y|) dx dy` by uniform pair sampling.
pub fn second_moment_integral(
    table: &PsiTable,
    set: &SetDescriptor,
    n_samples: usize,
    seed: u64,
) -> Result<PairIntegral> {
    require_expanding(&table.model)?;
    if set.dim() != table.model.d() {
        return Err(Error::InvalidArgument(
            "set dimension differs from the model".into(),
        ));
    }
    pair_integral(&table.psi_kernel(), set, n_samples, seed)
}

/// Lower bound `λ(A)^2 / ∫∫ psi` on the probability that the volume of `A`
/// survives, with the standard error propagated from the pair integral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PersistenceBound {
    pub bound: f64,
    pub std_error: f64,
}

pub fn persistence_lower_bound(
    table: &PsiTable,
    set: &SetDescriptor,
    n_samples: usize,
    seed: u64,
) -> Result<PersistenceBound> {
    let i = second_moment_integral(table, set, n_samples, seed)?;
    let lam = set.measure();
    let bound = (lam * lam / i.estimate).min(1.0);
    Ok(PersistenceBound {
        bound,
        std_error: bound * i.std_error / i.estimate,
    })
}

/// Result of the small- and large-distance checks on `psi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Asymptotics {
    pub fitted_exponent: f64,
    pub target_exponent: f64,
    pub fit_residual: f64,
    pub psi_at_max: f64,
    pub exponent_pass: bool,
    pub limit_pass: bool,
}

/// Fits `ln psi` against `ln s` on `[1e-3, 1e-2] ell` and evaluates
/// `psi(50 ell)`.
pub fn check_asymptotics(model: &IsotropicModel, tolerance: f64) -> Result<Asymptotics> {
    let ell = model.ell();
    let pts: Vec<(f64, f64)> = (0..=20)
        .map(|i| {
            let s = 1e-3 * ell * 10f64.powf(i as f64 / 20.0);
            psi(model, s).map(|v| (s.ln(), v.ln()))
        })
        .collect::<Result<_>>()?;
    let (slope, _, res) = crate::stats::slope_fit(&pts)?;
    let target = model.psi_exponent();
    let at_max = psi(model, S_MAX * ell)?;
    Ok(Asymptotics {
        fitted_exponent: slope,
        target_exponent: target,
        fit_residual: res,
        psi_at_max: at_max,
        exponent_pass: (slope - target).abs() <= tolerance,
        limit_pass: (at_max - 1.0).abs() <= 1e-6,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_nonpositive_s() {
        let m = IsotropicModel::new(2, 0.05, 1.0).unwrap();
        assert!(psi(&m, 0.0).is_err());
        assert!(psi(&m, -1.0).is_err());
    }

    #[test]
    fn far_field_limit() {
        for &a in &[0.0, 0.05, 1.0] {
            let m = IsotropicModel::new(2, a, 1.0).unwrap();
            assert!((psi(&m, 50.0).unwrap() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn volume_preserving_psi_is_flat_near_zero() {
        let m = IsotropicModel::new(3, 0.0, 1.0).unwrap();
        let a = check_asymptotics(&m, 0.05).unwrap();
        assert!(a.target_exponent.abs() < 1e-12);
        assert!(a.exponent_pass, "{a:?}");
    }

    #[test]
    fn majorant_of_monotone_is_identity() {
        let v = [5.0, 3.0, 2.0, 1.0];
        assert_eq!(monotone_majorant(&v), v.to_vec());
        assert_eq!(monotone_majorant(&[1.0; 5]), vec![1.0; 5]);
        assert_eq!(
            monotone_majorant(&[1.0, 0.5, 2.0, 1.0]),
            vec![2.0, 2.0, 2.0, 1.0]
        );
    }

    #[test]
    fn table_matches_direct_evaluation() {
        let m = IsotropicModel::new(2, 0.05, 1.0).unwrap();
        let t = PsiTable::new(&m).unwrap();
        for &s in &[1.3e-4, 3.7e-3, 0.0123, 0.4567, 1.2345, 3.3333, 7.77, 31.4] {
            let direct = psi(&m, s).unwrap();
            let rel = (t.eval(s) - direct).abs() / direct;
            assert!(rel < 1e-6, "s = {s}: table {} direct {direct}", t.eval(s));
        }
    }

    #[test]
    fn spline_reproduces_cubic() {
        let x: Vec<f64> = (0..30).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v - 1.0).collect();
        let m = natural_spline(&x, &y);
        assert!(m.iter().all(|v| v.abs() < 1e-12));
        assert!((spline_eval(&x, &y, &m, 4, 0.45) + 0.1).abs() < 1e-14);
    }
}
