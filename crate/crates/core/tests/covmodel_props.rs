use faer::{Mat, Side};
use ibf_core::covmodel::battery;
use ibf_core::IsotropicModel;
use proptest::prelude::*;

fn model_strategy() -> impl Strategy<Value = IsotropicModel> {
    (2usize..=4, 0.0f64..=1.0, 0.3f64..3.0)
        .prop_map(|(d, a, ell)| IsotropicModel::new(d, a, ell).unwrap())
}

/// `b` from the longitudinal/transversal decomposition, independent of the
/// model's own matrix assembly.
fn b_from_scalars(m: &IsotropicModel, x: &[f64]) -> Vec<f64> {
    let d = m.d();
    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut out = vec![0.0; d * d];
    if r == 0.0 {
        for i in 0..d {
            out[i * d + i] = 1.0;
        }
        return out;
    }
    let bl = m.longitudinal(r).unwrap();
    let bn = m.transversal(r).unwrap();
    for i in 0..d {
        for k in 0..d {
            out[i * d + k] = (bl - bn) * x[i] * x[k] / (r * r) + if i == k { bn } else { 0.0 };
        }
    }
    out
}

fn b_flat(m: &IsotropicModel, x: &[f64]) -> Vec<f64> {
    let d = m.d();
    let mut out = vec![0.0; d * d];
    m.b_into(x, &mut out);
    out
}

/// Gram-Schmidt orthonormalization of `d` vectors.
fn orthonormal(d: usize, raw: &[f64]) -> Vec<f64> {
    let mut q = raw[..d * d].to_vec();
    for i in 0..d {
        for j in 0..i {
            let dot: f64 = (0..d).map(|k| q[i * d + k] * q[j * d + k]).sum();
            for k in 0..d {
                q[i * d + k] -= dot * q[j * d + k];
            }
        }
        let n = (0..d).map(|k| q[i * d + k].powi(2)).sum::<f64>().sqrt();
        for k in 0..d {
            q[i * d + k] /= n;
        }
    }
    q
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn block_covariance_is_psd(
        m in model_strategy(),
        n in 2usize..=6,
        raw in prop::collection::vec(-2.0f64..2.0, 24),
    ) {
        let d = m.d();
        let pts: Vec<&[f64]> = (0..n).map(|p| &raw[p * d..(p + 1) * d]).collect();
        let nd = n * d;
        let c = Mat::from_fn(nd, nd, |r, s| {
            let (p, i) = (r / d, r % d);
            let (q, k) = (s / d, s % d);
            let x: Vec<f64> = (0..d).map(|t| (pts[p][t] - pts[q][t]) * m.ell()).collect();
            b_flat(&m, &x)[i * d + k]
        });
        let ev = c.self_adjoint_eigenvalues(Side::Lower).unwrap();
        let min = ev.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert!(min >= -1e-8, "min eigenvalue {min}");
    }

    #[test]
    fn matrix_matches_scalar_decomposition(
        m in model_strategy(),
        raw in prop::collection::vec(-4.0f64..4.0, 4),
    ) {
        let x = &raw[..m.d()];
        let a = b_flat(&m, x);
        let b = b_from_scalars(&m, x);
        for (u, v) in a.iter().zip(&b) {
            prop_assert!((u - v).abs() <= 1e-14);
        }
    }

    #[test]
    fn isotropy_under_orthogonal_maps(
        m in model_strategy(),
        raw in prop::collection::vec(-1.0f64..1.0, 16),
        x in prop::collection::vec(-3.0f64..3.0, 4),
    ) {
        let d = m.d();
        let q = orthonormal(d, &raw);
        let x = &x[..d];
        let qx: Vec<f64> = (0..d).map(|i| (0..d).map(|k| q[i * d + k] * x[k]).sum()).collect();
        let lhs = b_flat(&m, &qx);
        let bx = b_flat(&m, x);
        for i in 0..d {
            for k in 0..d {
                let mut rhs = 0.0;
                for a in 0..d {
                    for c in 0..d {
                        rhs += q[i * d + a] * bx[a * d + c] * q[k * d + c];
                    }
                }
                prop_assert!((lhs[i * d + k] - rhs).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn gradient_matches_central_differences(
        m in model_strategy(),
        x in prop::collection::vec(-2.0f64..2.0, 4),
    ) {
        let d = m.d();
        let x = &x[..d];
        let g = m.grad_b(x);
        let h = 1e-5 * m.ell();
        for j in 0..d {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[j] += h;
            xm[j] -= h;
            let (bp, bm) = (b_flat(&m, &xp), b_flat(&m, &xm));
            for ik in 0..d * d {
                let fd = (bp[ik] - bm[ik]) / (2.0 * h);
                prop_assert!((g[ik * d + j] - fd).abs() <= 1e-6 / m.ell(), "ik {ik} j {j}");
            }
        }
    }

    #[test]
    fn hessian_matches_differenced_gradient(
        m in model_strategy(),
        x in prop::collection::vec(-2.0f64..2.0, 4),
    ) {
        let d = m.d();
        let x = &x[..d];
        let hs = m.hess_b(x);
        // Richardson extrapolation of central differences of the gradient
        let diff = |h: f64, l: usize| {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[l] += h;
            xm[l] -= h;
            let (gp, gm) = (m.grad_b(&xp), m.grad_b(&xm));
            gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect::<Vec<_>>()
        };
        let h = 1e-3 * m.ell();
        for l in 0..d {
            let (a, b) = (diff(h, l), diff(h / 2.0, l));
            for ikj in 0..d * d * d {
                let fd = (4.0 * b[ikj] - a[ikj]) / 3.0;
                let scale = 1.0 / (m.ell() * m.ell());
                prop_assert!((hs[ikj * d + l] - fd).abs() <= 1e-6 * scale, "ikj {ikj} l {l}");
            }
        }
    }

    #[test]
    fn scale_covariance(
        m in model_strategy(),
        c in 0.2f64..5.0,
        r in 0.0f64..6.0,
    ) {
        let s = IsotropicModel::new(m.d(), m.alpha(), c * m.ell()).unwrap();
        prop_assert!((s.longitudinal(c * r).unwrap() - m.longitudinal(r).unwrap()).abs() <= 1e-14);
        prop_assert!((s.transversal(c * r).unwrap() - m.transversal(r).unwrap()).abs() <= 1e-14);
        let (bl, bn) = m.beta_params();
        let (sl, sn) = s.beta_params();
        prop_assert!((sl - bl / (c * c)).abs() <= 1e-12 * bl.abs().max(1.0));
        prop_assert!((sn - bn / (c * c)).abs() <= 1e-12 * bn.abs().max(1.0));
    }
}

#[test]
fn beta_matches_second_differences() {
    for m in battery() {
        let (bl, bn) = m.beta_params();
        // B(h) = 1 - beta h^2 / 2 + O(h^4): Richardson on the second difference
        let est = |f: &dyn Fn(f64) -> f64| {
            let sd = |h: f64| -(2.0 * f(h) - 2.0 * f(0.0)) / (h * h);
            let (a, b) = (sd(1e-2), sd(5e-3));
            (4.0 * b - a) / 3.0
        };
        let l = est(&|r| m.longitudinal(r).unwrap());
        let n = est(&|r| m.transversal(r).unwrap());
        assert!((l - bl).abs() <= 1e-5 * bl, "beta_L {l} vs {bl}");
        assert!((n - bn).abs() <= 1e-5 * bn, "beta_N {n} vs {bn}");
    }
}

#[test]
fn beta_ratio_bounds_over_alpha_grid() {
    for d in 2..=6 {
        let lo = (d as f64 - 1.0) / (d as f64 + 1.0);
        for k in 0..=100 {
            let alpha = k as f64 / 100.0;
            let m = IsotropicModel::new(d, alpha, 1.0).unwrap();
            let (bl, bn) = m.beta_params();
            let r = bl / bn;
            assert!(bl > 0.0 && bn > 0.0);
            assert!(r >= lo - 1e-15 && r <= 3.0 + 1e-15, "d={d} alpha={alpha} ratio {r}");
            if k == 0 {
                assert!((r - lo).abs() < 1e-15);
            }
            if k == 100 {
                assert!((r - 3.0).abs() < 1e-15);
            }
        }
    }
}

#[test]
fn covariances_bounded_by_one_away_from_zero() {
    for m in battery() {
        for k in 1..=400 {
            let r = k as f64 * 0.02;
            assert!(m.longitudinal(r).unwrap().abs() < 1.0);
            assert!(m.transversal(r).unwrap().abs() < 1.0);
        }
    }
}

#[test]
fn gradient_covariance_is_minus_hessian_at_zero() {
    for m in battery() {
        let d = m.d();
        let h = m.hess_b(&vec![0.0; d]);
        let c = m.gradient_cov();
        for i in 0..d {
            for k in 0..d {
                for j in 0..d {
                    for l in 0..d {
                        let v = -h[((i * d + k) * d + j) * d + l];
                        assert!((c.get(i, k, j, l) - v).abs() < 1e-13);
                    }
                }
            }
        }
    }
}

#[test]
fn divergence_variance_vanishes_only_when_volume_preserving() {
    for m in battery() {
        let v = m.gradient_cov().trace_variance();
        if m.is_volume_preserving() {
            assert!(v.abs() < 1e-14, "{m:?}: {v}");
        } else {
            assert!(v > 1e-3, "{m:?}: {v}");
        }
    }
}

#[test]
fn lyapunov_formula_and_regimes() {
    let m = IsotropicModel::new(2, 0.0, 1.0).unwrap();
    assert_eq!(m.lyapunov_spectrum(), vec![1.0, -1.0]);
    let m = IsotropicModel::new(3, 1.0, 1.0).unwrap();
    let l = m.lyapunov_spectrum();
    for (a, b) in l.iter().zip([-0.5, -2.5, -4.5]) {
        assert!((a - b).abs() < 1e-14);
    }
    assert!(!m.is_transient());
    let m = IsotropicModel::new(2, 0.05, 1.0).unwrap();
    let (bl, bn) = m.beta_params();
    assert!((bn / bl - 29.0 / 11.0).abs() < 1e-14);
    assert!(m.volume_persists());
    assert!(m.is_transient());
}
