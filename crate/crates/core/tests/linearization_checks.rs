use faer::{Mat, Side};
use ibf_core::covmodel::battery;
use ibf_core::geometry::SetDescriptor;
use ibf_core::linalg::SmallMat;
use ibf_core::linearization::{
    coupled_covariance, determinant_drift, lyapunov_estimate, second_moment_curve,
    volume_estimate, GradientSampler, JacobianScheme,
};
use ibf_core::rng::stream_rng;
use ibf_core::simcore::StepConfig;
use ibf_core::IsotropicModel;

/// `E[det(I + dF)] - 1` to second order: the sum of the principal 2×2 minor
/// expectations `C_{i j i j} - C_{i j j i}` (per unit time).
fn minor_expectation(m: &IsotropicModel) -> f64 {
    let c = m.gradient_cov();
    let d = m.d();
    let mut s = 0.0;
    for i in 0..d {
        for j in i + 1..d {
            // E[F_ii F_jj] - E[F_ij F_ji], with E[F_ab F_ce] = C(a, c, b, e)
            s += c.get(i, j, i, j) - c.get(i, j, j, i);
        }
    }
    s
}

#[test]
fn minor_expectations_cancel() {
    for m in battery() {
        assert!(minor_expectation(&m).abs() < 1e-14, "{m:?}");
    }
}

#[test]
fn euler_step_determinant_has_unit_mean() {
    let dt = 1e-3;
    let n = 1_000_000;
    for m in [
        IsotropicModel::new(2, 0.05, 1.0).unwrap(),
        IsotropicModel::new(3, 0.5, 1.0).unwrap(),
    ] {
        let s = GradientSampler::new(&m, dt).unwrap();
        let mut rng = stream_rng(17, m.d() as u64);
        let (mut sum, mut sum2) = (0.0, 0.0);
        let id = SmallMat::identity(m.d());
        for _ in 0..n {
            let v = id.add(&s.sample(&mut rng)).det() - 1.0;
            sum += v;
            sum2 += v * v;
        }
        let mean = sum / n as f64;
        let se = ((sum2 / n as f64 - mean * mean) / (n as f64 - 1.0)).sqrt();
        assert!(mean.abs() <= 3.0 * se, "{m:?}: mean - 1 = {mean}, se {se}");
    }
}

#[test]
fn divergence_free_increments_are_traceless() {
    for d in [2, 3, 4] {
        let m = IsotropicModel::new(d, 0.0, 1.0).unwrap();
        let s = GradientSampler::new(&m, 1e-3).unwrap();
        let mut rng = stream_rng(5, d as u64);
        for _ in 0..10_000 {
            let f = s.sample(&mut rng);
            assert!(f.trace().abs() < 1e-14, "d={d}: trace {}", f.trace());
        }
    }
}

#[test]
fn increment_size_scales_with_root_dt() {
    let m = IsotropicModel::new(3, 0.3, 1.0).unwrap();
    let pts: Vec<(f64, f64)> = [1e-2, 1e-3, 1e-4]
        .iter()
        .map(|&dt| {
            let s = GradientSampler::new(&m, dt).unwrap();
            let mut rng = stream_rng(2, 0);
            let mean = (0..20_000)
                .map(|_| s.sample(&mut rng).frobenius_norm())
                .sum::<f64>()
                / 20_000.0;
            (f64::ln(dt), mean.ln())
        })
        .collect();
    let (slope, _, _) = ibf_core::stats::slope_fit(&pts).unwrap();
    assert!((slope - 0.5).abs() < 1e-9, "slope {slope}");
}

#[test]
fn divergence_free_determinants_stay_at_one() {
    let m = IsotropicModel::new(2, 0.0, 1.0).unwrap();
    let cfg = StepConfig::new(1e-3, 21).unwrap();
    let dets = determinant_drift(&m, 10.0, &cfg, 100, JacobianScheme::Exponential).unwrap();
    let worst = dets.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    assert!(worst <= 1e-9, "{worst}");
}

#[test]
fn exponent_sum_is_mean_divergence() {
    let m = IsotropicModel::new(2, 0.0, 1.0).unwrap();
    let cfg = StepConfig::new(1e-2, 4).unwrap();
    let e = lyapunov_estimate(&m, 20.0, &cfg, 8, 10, JacobianScheme::Exponential).unwrap();
    for v in &e.per_replicate {
        assert!((v[0] + v[1]).abs() < 1e-9, "{v:?}");
    }
    assert_eq!(e.targets, vec![1.0, -1.0]);
    assert!((e.estimates[0] - 1.0).abs() <= 5.0 * e.std_errors[0] + 0.05, "{e:?}");
}

#[test]
fn lyapunov_estimate_rejects_bad_arguments() {
    let m = IsotropicModel::new(2, 0.0, 1.0).unwrap();
    let cfg = StepConfig::new(1e-2, 4).unwrap();
    assert!(lyapunov_estimate(&m, 1.0, &cfg, 1, 10, JacobianScheme::Exponential).is_err());
    assert!(lyapunov_estimate(&m, 1.0, &cfg, 4, 0, JacobianScheme::Exponential).is_err());
    assert!(lyapunov_estimate(&m, 0.0, &cfg, 4, 10, JacobianScheme::Exponential).is_err());
}

#[test]
fn coupled_covariance_is_psd_and_matches_differences() {
    let m = IsotropicModel::new(2, 0.3, 0.8).unwrap();
    let pos = [0.0, 0.0, 0.4, -0.1, -0.5, 0.9];
    let mut c = Vec::new();
    coupled_covariance(&m, &pos, &mut c);
    let (d, bs) = (2, 6);
    let nn = 3 * bs;
    let mat = Mat::from_fn(nn, nn, |r, s| c[r * nn + s]);
    let ev = mat.self_adjoint_eigenvalues(Side::Lower).unwrap();
    assert!(ev.iter().all(|&v| v >= -1e-10), "{ev:?}");
    for r in 0..nn {
        for s in 0..nn {
            assert_eq!(c[r * nn + s], c[s * nn + r]);
        }
    }
    // E[W_i(x) dW_k(y)/dy_l] = d/dy_l b_ik(x - y), by central differences
    let (p, q) = (0, 1);
    let x = &pos[p * d..p * d + d];
    let y = &pos[q * d..q * d + d];
    let h = 1e-6;
    for i in 0..d {
        for k in 0..d {
            for l in 0..d {
                let b_at = |shift: f64| {
                    let mut z = [x[0] - y[0], x[1] - y[1]];
                    z[l] -= shift;
                    let mut out = [0.0; 4];
                    m.b_into(&z, &mut out);
                    out[i * d + k]
                };
                let fd = (b_at(h) - b_at(-h)) / (2.0 * h);
                let got = c[(p * bs + i) * nn + q * bs + d + k * d + l];
                assert!((got - fd).abs() < 1e-8, "i{i} k{k} l{l}: {got} vs {fd}");
            }
        }
    }
}

#[test]
fn volume_starts_exact_and_determinants_stay_positive() {
    let m = IsotropicModel::new(2, 0.25, 1.0).unwrap();
    let set = SetDescriptor::unit_ball(2);
    let cfg = StepConfig::new(0.02, 8).unwrap();
    let run = volume_estimate(
        &set,
        &m,
        &cfg,
        JacobianScheme::Exponential,
        2.0,
        &[0.0, 1.0, 2.0],
        6,
        4,
    )
    .unwrap();
    assert_eq!(run.times, vec![0.0, 1.0, 2.0]);
    for r in 0..4 {
        assert_eq!(run.volume(r, 0), std::f64::consts::PI);
        for k in 0..3 {
            assert!(run.replicates[r].determinants[k].iter().all(|&v| v > 0.0));
        }
    }
    let pi2 = std::f64::consts::PI.powi(2);
    assert!((second_moment_curve(&run)[0].estimate - pi2).abs() < 1e-12);
}

#[test]
fn volume_estimate_is_reproducible() {
    let m = IsotropicModel::new(2, 0.05, 1.0).unwrap();
    let set = SetDescriptor::unit_ball(2);
    let cfg = StepConfig::new(0.05, 3).unwrap();
    let go = || {
        volume_estimate(&set, &m, &cfg, JacobianScheme::Exponential, 1.0, &[1.0], 5, 3).unwrap()
    };
    assert_eq!(go().replicates, go().replicates);
}

#[test]
fn volume_estimate_checks_arguments() {
    let m = IsotropicModel::new(2, 0.05, 1.0).unwrap();
    let cfg = StepConfig::new(0.05, 3).unwrap();
    let ball3 = SetDescriptor::unit_ball(3);
    let ball2 = SetDescriptor::unit_ball(2);
    let s = JacobianScheme::Exponential;
    assert!(volume_estimate(&ball3, &m, &cfg, s, 1.0, &[1.0], 5, 3).is_err());
    assert!(volume_estimate(&ball2, &m, &cfg, s, 1.0, &[1.0], 1, 3).is_err());
    assert!(volume_estimate(&ball2, &m, &cfg, s, 1.0, &[1.0], 5, 1).is_err());
}
