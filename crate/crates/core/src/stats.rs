//! Statistics shared by the experiments: Monte Carlo means, KS tests,
//! log-log fits and deterministic block-parallel sampling.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Rng};

/// Sample mean and its standard error `sd / sqrt(n)`.
pub fn mc_mean_se(xs: &[f64]) -> Result<(f64, f64)> {
    if xs.is_empty() {
        return Err(Error::InvalidArgument("mean of empty sample".into()));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

pub fn median(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::InvalidArgument("median of empty sample".into()));
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Sample median with a distribution-free standard error: half the width
/// of the order-statistic interval `[n/2 - sqrt(n)/2, n/2 + sqrt(n)/2]`,
/// which covers the median with probability about 68%.
pub fn median_with_se(xs: &[f64]) -> Result<(f64, f64)> {
    let m = median(xs)?;
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let half = 0.5 * n.sqrt();
    let lo = ((0.5 * n - half).floor().max(1.0) as usize) - 1;
    let hi = ((0.5 * n + half).ceil().min(n) as usize) - 1;
    Ok((m, 0.5 * (v[hi] - v[lo])))
}

/// Two-sample Kolmogorov-Smirnov statistic `sup |F_x - F_y|`.
pub fn ks_two_sample(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::InvalidArgument(
            "KS test needs nonempty samples".into(),
        ));
    }
    let mut a = xs.to_vec();
    let mut b = ys.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    Ok(d)
}

/// Asymptotic two-sample critical value at significance `level`:
/// `sqrt(-ln(level/2)/2) * sqrt((n+m)/(n m))`.
pub fn ks_critical(n: usize, m: usize, level: f64) -> Result<f64> {
    if n == 0 || m == 0 || !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(
            "KS critical value needs n, m > 0 and level in (0,1)".into(),
        ));
    }
    let c = (-0.5 * (level / 2.0).ln()).sqrt();
    let (n, m) = (n as f64, m as f64);
    Ok(c * ((n + m) / (n * m)).sqrt())
}

/// One-sample KS statistic against a continuous CDF.
pub fn ks_one_sample(xs: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::InvalidArgument(
            "KS test needs a nonempty sample".into(),
        ));
    }
    let mut a = xs.to_vec();
    a.sort_by(f64::total_cmp);
    let n = a.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in a.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    Ok(d)
}

/// One-sample asymptotic critical value `sqrt(-ln(level/2)/2) / sqrt(n)`.
pub fn ks_critical_one_sample(n: usize, level: f64) -> Result<f64> {
    if n == 0 || !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(
            "KS critical value needs n > 0 and level in (0,1)".into(),
        ));
    }
    Ok((-0.5 * (level / 2.0).ln()).sqrt() / (n as f64).sqrt())
}

/// Least-squares line through `(x, y)`: `(slope, intercept, rms residual)`.
pub fn slope_fit(points: &[(f64, f64)]) -> Result<(f64, f64, f64)> {
    if points.len() < 2 {
        return Err(Error::InvalidArgument(
            "slope fit needs at least two points".into(),
        ));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument(
            "slope fit needs distinct abscissae".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = points
        .iter()
        .map(|p| {
            let r = p.1 - (intercept + slope * p.0);
            r * r
        })
        .sum();
    Ok((slope, intercept, (rss / n).sqrt()))
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Running mean and standard error (Welford updates, Chan merges).
#[derive(Debug, Clone, Copy, Default)]
pub struct Moments {
    pub n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(self, o: Moments) -> Moments {
        if self.n == 0 {
            return o;
        }
        if o.n == 0 {
            return self;
        }
        let n = self.n + o.n;
        let (na, nb) = (self.n as f64, o.n as f64);
        let delta = o.mean - self.mean;
        Moments {
            n,
            mean: self.mean + delta * nb / n as f64,
            m2: self.m2 + o.m2 + delta * delta * na * nb / n as f64,
        }
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.mean
        }
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        (self.variance() / self.n as f64).sqrt()
    }
}

const BLOCK: usize = 8192;

/// Averages `n` draws of `f` in fixed-size blocks, each block with its own
/// stream derived from `seed`. The result is independent of thread count.
pub fn block_mc<F>(n: usize, seed: u64, f: F) -> Moments
where
    F: Fn(&mut Rng) -> f64 + Sync,
{
    let blocks = n.div_ceil(BLOCK);
    let parts: Vec<Moments> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(seed, b as u64);
            let count = BLOCK.min(n - b * BLOCK);
            let mut m = Moments::default();
            for _ in 0..count {
                m.push(f(&mut rng));
            }
            m
        })
        .collect();
    parts.into_iter().fold(Moments::default(), Moments::merge)
}
