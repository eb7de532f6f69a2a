use std::f64::consts::PI;

use ibf_core::geometry::SetDescriptor;
use ibf_core::invariant::{
    check_asymptotics, monotone_majorant, pair_integral, persistence_lower_bound, psi,
    second_moment_integral, ConstantKernel, PsiTable,
};
use ibf_core::{Error, IsotropicModel};
use proptest::prelude::*;

/// Composite Simpson rule with `n` (even) intervals.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// `psi(s)` by Simpson's rule in `v = ln u` on `[ln s, ln 40]`.
fn psi_oracle(m: &IsotropicModel, s: f64) -> f64 {
    let g = |v: f64| {
        let u = v.exp();
        let bl = m.longitudinal(u).unwrap();
        let bn = m.transversal(u).unwrap();
        (bl - bn) / (1.0 - bl)
    };
    let i = simpson(g, s.ln(), 40f64.ln(), 200_000);
    let dm1 = m.d() as f64 - 1.0;
    (-dm1 * i).exp() / (1.0 - m.longitudinal(s).unwrap())
}

#[test]
fn psi_matches_independent_quadrature() {
    for (d, a) in [(2, 0.05), (2, 0.25), (3, 0.5)] {
        let m = IsotropicModel::new(d, a, 1.0).unwrap();
        for s in [1e-3, 0.05, 0.5, 2.0, 6.0] {
            let want = psi_oracle(&m, s);
            let got = psi(&m, s).unwrap();
            assert!((got - want).abs() <= 1e-8 * want, "d={d} a={a} s={s}: {got} vs {want}");
        }
    }
}

#[test]
fn psi_is_one_without_potential_part() {
    for d in [2, 3, 5] {
        let m = IsotropicModel::new(d, 0.0, 1.0).unwrap();
        for s in [1e-4, 1e-2, 0.3, 1.0, 4.0, 49.0] {
            assert!((psi(&m, s).unwrap() - 1.0).abs() < 1e-12);
        }
        let t = PsiTable::with_points(&m, 100).unwrap();
        assert!(t.values.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }
}

#[test]
fn psi_tends_to_one_far_away() {
    for m in ibf_core::covmodel::battery() {
        assert!((psi(&m, 50.0).unwrap() - 1.0).abs() <= 1e-6);
        let t = PsiTable::new(&m).unwrap();
        assert_eq!(t.eval(80.0), 1.0);
    }
}

#[test]
fn small_distance_exponent() {
    let m = IsotropicModel::new(2, 0.05, 1.0).unwrap();
    let a = check_asymptotics(&m, 0.02).unwrap();
    assert!((a.target_exponent - (29.0 / 11.0 - 3.0)).abs() < 1e-14);
    assert!(a.exponent_pass, "{a:?}");
    assert!(a.limit_pass, "{a:?}");
}

#[test]
fn majorant_dominates_and_decreases() {
    for m in ibf_core::covmodel::battery() {
        let t = PsiTable::with_points(&m, 400).unwrap();
        assert!(t.majorant.windows(2).all(|w| w[1] <= w[0]));
        for (h, v) in t.majorant.iter().zip(&t.values) {
            assert!(h >= v);
        }
        for &s in &t.grid {
            assert!(t.majorant_at(s) >= t.eval(s) * (1.0 - 1e-9), "s={s}");
        }
    }
}

proptest! {
    #[test]
    fn majorant_is_least_nonincreasing_bound(v in prop::collection::vec(0.0f64..10.0, 1..40)) {
        let h = monotone_majorant(&v);
        prop_assert!(h.windows(2).all(|w| w[1] <= w[0]));
        for k in 0..v.len() {
            let tail_max = v[k..].iter().cloned().fold(f64::MIN, f64::max);
            prop_assert_eq!(h[k], tail_max);
        }
    }
}

#[test]
fn constant_kernel_pair_integral_is_squared_measure() {
    let sets = [
        SetDescriptor::unit_ball(2),
        SetDescriptor::boxed(vec![0.0, -1.0, 2.0], vec![1.0, 2.0, 2.5]).unwrap(),
        SetDescriptor::centered_cylinder(3, 4.0, 0.5).unwrap(),
    ];
    for set in sets {
        let lam = set.measure();
        let r = pair_integral(&ConstantKernel(1.0), &set, 1000, 3).unwrap();
        assert!((r.estimate - lam * lam).abs() <= 1e-12 * lam * lam);
        assert!(r.std_error.abs() <= 1e-12 * lam * lam);
    }
}

/// `∫∫_{B×B} psi` for the planar disc of radius `R` as a radial integral
/// against the area of the lens of two discs at distance `r`.
fn disc_pair_oracle(t: &PsiTable, radius: f64) -> f64 {
    let lens = |r: f64| {
        let q = r / (2.0 * radius);
        2.0 * radius * radius * q.acos() - 0.5 * r * (4.0 * radius * radius - r * r).sqrt()
    };
    // substitute r = 2R w^k so the r^mu singularity is smoothed out
    let k = 6.0;
    let f = |w: f64| {
        if w == 0.0 {
            return 0.0;
        }
        let r = 2.0 * radius * w.powf(k);
        let dr = 2.0 * radius * k * w.powf(k - 1.0);
        t.eval(r) * lens(r) * 2.0 * PI * r * dr
    };
    simpson(f, 0.0, 1.0, 200_000)
}

#[test]
fn second_moment_integral_matches_radial_quadrature() {
    let m = IsotropicModel::new(2, 0.05, 1.0).unwrap();
    let t = PsiTable::new(&m).unwrap();
    for radius in [0.5, 1.0, 3.0] {
        let set = SetDescriptor::ball(vec![0.3, -0.2], radius).unwrap();
        let want = disc_pair_oracle(&t, radius);
        let got = second_moment_integral(&t, &set, 400_000, 11).unwrap();
        assert!(
            (got.estimate - want).abs() <= 4.0 * got.std_error + 1e-6 * want,
            "R={radius}: {} ± {} vs {want}",
            got.estimate,
            got.std_error
        );
    }
}

#[test]
fn persistence_bound_is_a_probability() {
    let m = IsotropicModel::new(2, 0.05, 1.0).unwrap();
    let t = PsiTable::new(&m).unwrap();
    for set in [
        SetDescriptor::unit_ball(2),
        SetDescriptor::boxed(vec![0.0, 0.0], vec![0.1, 5.0]).unwrap(),
        SetDescriptor::centered_cylinder(2, 20.0, 0.05).unwrap(),
    ] {
        let b = persistence_lower_bound(&t, &set, 50_000, 5).unwrap();
        assert!(b.bound > 0.0 && b.bound <= 1.0, "{b:?}");
        assert!(b.std_error >= 0.0);
    }
}

#[test]
fn long_thin_cylinders_nearly_always_persist() {
    let m = IsotropicModel::new(2, 0.05, 1.0).unwrap();
    let t = PsiTable::new(&m).unwrap();
    let bound = |l: f64| {
        let z = SetDescriptor::centered_cylinder(2, l, 0.1).unwrap();
        persistence_lower_bound(&t, &z, 200_000, 9).unwrap()
    };
    let long = bound(50.0);
    assert!(long.bound >= 0.9, "{long:?}");
    let mut prev = 0.0;
    for l in [2.0, 5.0, 20.0, 50.0] {
        let b = bound(l);
        assert!(b.bound + 3.0 * b.std_error >= prev, "L={l}: {b:?} after {prev}");
        prev = b.bound;
    }
}

#[test]
fn contracting_flows_are_refused() {
    let m = IsotropicModel::new(2, 1.0, 1.0).unwrap();
    let t = PsiTable::with_points(&m, 50).unwrap();
    let e = second_moment_integral(&t, &SetDescriptor::unit_ball(2), 100, 1).unwrap_err();
    assert!(matches!(e, Error::Refused(_)), "{e:?}");
}

#[test]
fn psi_rejects_out_of_range_arguments() {
    let m = IsotropicModel::new(2, 0.05, 1.0).unwrap();
    assert!(psi(&m, 0.0).is_err());
    assert!(psi(&m, f64::NAN).is_err());
    assert!(psi(&m, 1e-6).is_err());
    assert!(PsiTable::with_points(&m, 3).is_err());
}
