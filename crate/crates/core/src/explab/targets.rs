//! Standard Gaussian masses `N(0, Id)(A)` of test sets.

use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::config::TestSet;
use crate::geometry::SetDescriptor;
use crate::stats::{block_mc, normal_cdf};

/// Target value with its Monte Carlo error (0 for closed forms).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaussianMass {
    pub value: f64,
    pub std_error: f64,
}

/// Regularized lower incomplete gamma `P(k/2, x)` for integer `k >= 1`,
/// i.e. the chi-square CDF with `k` degrees of freedom at `2x`.
pub fn chi_square_cdf_half(k: usize, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    // P(a+1, x) = P(a, x) - x^a e^-x / Gamma(a+1)
    let (mut a, mut p, mut term) = if k % 2 == 0 {
        (1.0, -libm::expm1(-x), x * (-x).exp())
    } else {
        (
            0.5,
            libm::erf(x.sqrt()),
            2.0 * (x / std::f64::consts::PI).sqrt() * (-x).exp(),
        )
    };
    while a + 0.5 < k as f64 / 2.0 {
        p -= term;
        a += 1.0;
        term *= x / a;
    }
    p.clamp(0.0, 1.0)
}

/// `N(0, Id_d)(A)`: closed forms for half-spaces, the whole space, the
/// empty set and balls centered at the origin; Monte Carlo with `samples`
/// draws otherwise.
pub fn gaussian_mass(set: &TestSet, d: usize, samples: usize, seed: u64) -> GaussianMass {
    let exact = |value| GaussianMass {
        value,
        std_error: 0.0,
    };
    match set {
        TestSet::HalfSpace { a } => exact(normal_cdf(*a)),
        TestSet::WholeSpace => exact(1.0),
        TestSet::Empty => exact(0.0),
        TestSet::Set {
            set: SetDescriptor::Ball { center, radius },
        } if center.iter().all(|&c| c == 0.0) => {
            exact(chi_square_cdf_half(d, 0.5 * radius * radius))
        }
        TestSet::Set { set } => {
            let m = block_mc(samples, seed, |rng| {
                let mut p = [0.0; crate::linalg::MAX_DIM];
                for v in p.iter_mut().take(d) {
                    *v = StandardNormal.sample(rng);
                }
                if set.contains(&p[..d]) {
                    1.0
                } else {
                    0.0
                }
            });
            GaussianMass {
                value: m.mean(),
                std_error: m.std_error(),
            }
        }
    }
}
