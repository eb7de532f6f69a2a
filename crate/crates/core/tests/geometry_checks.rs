use std::f64::consts::PI;

use ibf_core::geometry::{
    axial_average, cylinder_kernel_ratio, extract_segments, pair_kernel_mean,
    piecewise_vs_straight, Segment, SetDescriptor,
};
use ibf_core::invariant::{ConstantKernel, PsiTable};
use ibf_core::rng::stream_rng;
use ibf_core::IsotropicModel;
use rand::Rng as _;

fn majorant_table() -> PsiTable {
    PsiTable::new(&IsotropicModel::new(2, 0.05, 1.0).unwrap()).unwrap()
}

/// Rotation by `theta` in the (x1, x2) plane followed by a shift.
fn rigid(p: &[f64], theta: f64, shift: &[f64]) -> Vec<f64> {
    let mut q = p.to_vec();
    q[0] = theta.cos() * p[0] - theta.sin() * p[1];
    q[1] = theta.sin() * p[0] + theta.cos() * p[1];
    q.iter().zip(shift).map(|(a, b)| a + b).collect()
}

#[test]
fn closed_form_measures() {
    assert!((SetDescriptor::unit_ball(2).measure() - PI).abs() < 1e-15);
    assert!((SetDescriptor::unit_ball(3).measure() - 4.0 * PI / 3.0).abs() < 1e-14);
    let z = SetDescriptor::centered_cylinder(3, 0.5, 0.5).unwrap();
    assert!((z.measure() - 2.0 * 0.5 * PI * 0.25).abs() < 1e-14);
    let b = SetDescriptor::boxed(vec![0.0, -1.0], vec![2.0, 0.5]).unwrap();
    assert!((b.measure() - 3.0).abs() < 1e-15);
}

#[test]
fn measures_match_hit_ratios() {
    let pw = SetDescriptor::piecewise(
        vec![
            Segment::new(vec![0.0, 0.0, 0.0], vec![2.0, 0.0, 0.0]).unwrap(),
            Segment::new(vec![0.0, 2.0, 0.0], vec![0.0, 2.0, 2.0]).unwrap(),
        ],
        0.4,
    )
    .unwrap();
    let cases: Vec<(SetDescriptor, Vec<f64>, Vec<f64>)> = vec![
        (SetDescriptor::ball(vec![1.0, 2.0, 3.0], 0.7).unwrap(), vec![0.3, 1.3, 2.3], vec![1.7, 2.7, 3.7]),
        (
            SetDescriptor::boxed(vec![0.0, 0.0, 0.0], vec![1.0, 0.5, 2.0]).unwrap(),
            vec![-0.5; 3],
            vec![2.5; 3],
        ),
        (
            SetDescriptor::cylinder(vec![0.0; 3], vec![1.0, 1.0, 0.0], 1.0, 0.3).unwrap(),
            vec![-1.5; 3],
            vec![1.5; 3],
        ),
        (pw, vec![-0.5, -0.5, -0.5], vec![2.5, 2.5, 2.5]),
    ];
    for (k, (set, lo, hi)) in cases.iter().enumerate() {
        let vol: f64 = lo.iter().zip(hi).map(|(a, b)| b - a).product();
        let mut rng = stream_rng(31, k as u64);
        let n = 400_000;
        let mut hits = 0usize;
        let mut p = [0.0; 3];
        for _ in 0..n {
            for c in 0..3 {
                p[c] = rng.random_range(lo[c]..hi[c]);
            }
            hits += set.contains(&p) as usize;
        }
        let f = hits as f64 / n as f64;
        let est = vol * f;
        let se = vol * (f * (1.0 - f) / n as f64).sqrt();
        assert!((est - set.measure()).abs() <= 3.0 * se, "case {k}: {est} ± {se} vs {}", set.measure());
    }
}

#[test]
fn uniform_samples_are_centered_and_flat() {
    let set = SetDescriptor::cylinder(vec![1.0, -2.0, 0.5], vec![0.0, 0.0, 1.0], 2.0, 0.5).unwrap();
    let mut rng = stream_rng(4, 0);
    let n = 50_000;
    let pts: Vec<Vec<f64>> = (0..n).map(|_| set.sample_uniform(&mut rng)).collect();
    assert!(pts.iter().all(|p| set.contains(p)));
    for (c, centre) in [1.0, -2.0, 0.5].iter().enumerate() {
        let xs: Vec<f64> = pts.iter().map(|p| p[c]).collect();
        let (m, se) = ibf_core::stats::mc_mean_se(&xs).unwrap();
        assert!((m - centre).abs() <= 3.0 * se, "coordinate {c}: {m} ± {se}");
    }
    // axial coordinate is uniform on [-1.5, 2.5]: chi-square over 10 bins
    let mut bins = [0usize; 10];
    for p in &pts {
        let k = (((p[2] + 1.5) / 4.0) * 10.0).floor().clamp(0.0, 9.0) as usize;
        bins[k] += 1;
    }
    let e = n as f64 / 10.0;
    let chi2: f64 = bins.iter().map(|&o| (o as f64 - e).powi(2) / e).sum();
    assert!(chi2 < 27.88, "chi-square {chi2}");
}

#[test]
fn degenerate_sets_are_rejected() {
    assert!(SetDescriptor::ball(vec![0.0, 0.0], 0.0).is_err());
    assert!(SetDescriptor::boxed(vec![0.0, 1.0], vec![1.0, 1.0]).is_err());
    assert!(SetDescriptor::cylinder(vec![0.0; 2], vec![0.0; 2], 1.0, 0.1).is_err());
    assert!(Segment::new(vec![1.0, 1.0], vec![1.0, 1.0]).is_err());
}

#[test]
fn cylinder_ratio_below_axial_average() {
    let t = majorant_table();
    let h = t.majorant_kernel();
    for l in [5.0, 20.0] {
        for delta in [0.05, 0.5] {
            let r = cylinder_kernel_ratio(&h, 2, l, delta, 100_000, 3).unwrap();
            assert!(r.estimate <= r.reference + 3.0 * r.std_error, "L={l} delta={delta}: {r:?}");
        }
    }
    let one = cylinder_kernel_ratio(&ConstantKernel(1.0), 3, 2.0, 0.1, 1000, 1).unwrap();
    assert_eq!((one.estimate, one.reference), (1.0, 1.0));
}

#[test]
fn axial_average_tends_to_one() {
    let t = majorant_table();
    let a = axial_average(&t.majorant_kernel(), 100.0);
    assert!((a - 1.0).abs() < 0.05, "{a}");
    assert!(a >= 1.0);
}

#[test]
fn non_monotone_kernel_is_rejected() {
    let t = majorant_table();
    // psi itself rises above its far-field value, so it is not admissible
    assert!(cylinder_kernel_ratio(&t.psi_kernel(), 2, 5.0, 0.1, 100, 1).is_err());
}

#[test]
fn pair_mean_is_invariant_under_rigid_motions() {
    let t = majorant_table();
    let h = t.majorant_kernel();
    let z = SetDescriptor::centered_cylinder(2, 5.0, 0.3).unwrap();
    let axis = rigid(&[1.0, 0.0], 0.7, &[0.0, 0.0]);
    let moved = SetDescriptor::cylinder(vec![3.0, -8.0], axis, 5.0, 0.3).unwrap();
    let a = pair_kernel_mean(&h, &z, 200_000, 1);
    let b = pair_kernel_mean(&h, &moved, 200_000, 2);
    let se = (a.std_error().powi(2) + b.std_error().powi(2)).sqrt();
    assert!((a.mean() - b.mean()).abs() <= 3.0 * se, "{} vs {}", a.mean(), b.mean());
}

fn straight_polyline(n: usize, l: f64) -> Vec<Segment> {
    (0..n)
        .map(|i| Segment::new(vec![i as f64 * l, 0.0], vec![(i + 1) as f64 * l, 0.0]).unwrap())
        .collect()
}

/// Unit segments alternating between 30 and -30 degrees from the x axis.
fn zigzag(n: usize) -> Vec<Segment> {
    let mut p = vec![0.0, 0.0];
    let mut out = Vec::new();
    for i in 0..n {
        let a: f64 = if i % 2 == 0 { PI / 6.0 } else { -PI / 6.0 };
        let q = vec![p[0] + a.cos(), p[1] + a.sin()];
        out.push(Segment::new(p.clone(), q.clone()).unwrap());
        p = q;
    }
    out
}

#[test]
fn straight_polyline_gives_a_sixth() {
    let poly = straight_polyline(60, 1.0);
    let dom = SetDescriptor::boxed(vec![-1.0, -1.0], vec![61.0, 1.0]).unwrap();
    let e = extract_segments(&poly, 60.0, &dom).unwrap();
    assert_eq!(e.segments.len(), 10);
    assert_eq!(e.effective_length, 60.0);
    let total = e.segments.len() as f64 * e.segment_length;
    assert!((total - 10.0).abs() < 1e-12 && total >= 60.0 / 7.0);
    assert_eq!(e.slabs, (0..10).map(|j| 2 * j + 1).collect::<Vec<_>>());
}

#[test]
fn zigzag_extraction_is_disjoint_and_contained() {
    let poly = zigzag(80);
    let dom = SetDescriptor::boxed(vec![-2.0, -2.0], vec![72.0, 3.0]).unwrap();
    let e = extract_segments(&poly, 50.0, &dom).unwrap();
    let n = e.segments.len();
    assert!(n as f64 * e.segment_length >= e.effective_length / 7.0);
    assert!(e.effective_length <= 50.0 && e.effective_length > 50.0 - 6.0);
    for i in 0..n {
        for j in i + 1..n {
            assert!(e.segments[i].distance_to_segment(&e.segments[j]) > 2.0 * e.bar_delta);
        }
    }
    let mut rng = stream_rng(6, 0);
    for s in &e.segments {
        let c = SetDescriptor::piecewise(vec![s.clone()], e.bar_delta).unwrap();
        for _ in 0..10_000 {
            let p = c.sample_uniform(&mut rng);
            assert!(dom.contains(&p));
            for o in &e.segments {
                if o != s {
                    assert!(o.distance_to_point(&p) > e.bar_delta);
                }
            }
        }
    }
}

#[test]
fn extraction_preconditions() {
    let poly = straight_polyline(12, 1.0);
    let dom = SetDescriptor::boxed(vec![-1.0, -1.0], vec![13.0, 1.0]).unwrap();
    assert!(extract_segments(&poly, 20.0, &dom).is_err());
    assert!(extract_segments(&poly, 5.0, &dom).is_err());
    let mut gap = poly.clone();
    gap[5] = Segment::new(vec![5.0, 0.5], vec![6.0, 0.5]).unwrap();
    assert!(extract_segments(&gap, 12.0, &dom).is_err());
    let small = SetDescriptor::boxed(vec![-1.0, -1.0], vec![8.0, 1.0]).unwrap();
    assert!(extract_segments(&poly, 12.0, &small).is_err());
}

#[test]
fn single_piece_equals_straight_cylinder() {
    let t = majorant_table();
    let s = Segment::new(vec![1.0, 2.0], vec![1.0 + 3.0 * 0.6, 2.0 + 3.0 * 0.8]).unwrap();
    let c = piecewise_vs_straight(&t.majorant_kernel(), &[s], 0.2, 50_000, 5).unwrap();
    assert!((c.piecewise - c.straight).abs() < 1e-12, "{c:?}");
    let one = piecewise_vs_straight(
        &ConstantKernel(1.0),
        &straight_polyline(3, 1.0)
            .iter()
            .map(|s| Segment::new(vec![s.a[0] * 3.0, 0.0], vec![s.a[0] * 3.0 + 1.0, 0.0]).unwrap())
            .collect::<Vec<_>>(),
        0.1,
        1000,
        1,
    )
    .unwrap();
    assert_eq!((one.piecewise, one.straight), (1.0, 1.0));
}

#[test]
fn separated_pieces_concentrate_less() {
    let t = majorant_table();
    let segs = vec![
        Segment::new(vec![0.0, 0.0], vec![5.0, 0.0]).unwrap(),
        Segment::new(vec![0.0, 30.0], vec![5.0, 30.0]).unwrap(),
    ];
    let c = piecewise_vs_straight(&t.majorant_kernel(), &segs, 0.1, 200_000, 8).unwrap();
    assert!(c.piecewise <= c.straight + 3.0 * c.difference_se, "{c:?}");
}

#[test]
fn overlapping_pieces_are_rejected() {
    let segs = vec![
        Segment::new(vec![0.0, 0.0], vec![1.0, 0.0]).unwrap(),
        Segment::new(vec![0.0, 0.1], vec![1.0, 0.1]).unwrap(),
    ];
    assert!(piecewise_vs_straight(&ConstantKernel(1.0), &segs, 0.1, 100, 1).is_err());
}
