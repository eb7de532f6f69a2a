//! Sets used by the experiments (balls, boxes, cylinders, unions of
//! cylinders around segments), their measures and uniform samplers, and
//! the cylinder kernel integrals of the persistence argument.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::invariant::RadialKernel;
use crate::quad;
use crate::rng::{stream_rng, Rng};
use crate::stats::{block_mc, Moments};

/// Straight segment between two distinct points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl Segment {
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if a.len() != b.len() || a.is_empty() {
            return Err(Error::Geometry(
                "segment endpoints must share a dimension".into(),
            ));
        }
        if a == b {
            return Err(Error::Geometry("segment endpoints coincide".into()));
        }
        Ok(Self { a, b })
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    pub fn length(&self) -> f64 {
        dist(&self.a, &self.b)
    }

    pub fn direction(&self) -> Vec<f64> {
        let l = self.length();
        self.a
            .iter()
            .zip(&self.b)
            .map(|(a, b)| (b - a) / l)
            .collect()
    }

    pub fn point_at(&self, t: f64) -> Vec<f64> {
        self.a
            .iter()
            .zip(&self.b)
            .map(|(a, b)| a + t * (b - a))
            .collect()
    }

    /// Euclidean distance from `p` to the segment.
    pub fn distance_to_point(&self, p: &[f64]) -> f64 {
        let ab: Vec<f64> = sub(&self.b, &self.a);
        let ap: Vec<f64> = sub(p, &self.a);
        let t = (dot(&ap, &ab) / dot(&ab, &ab)).clamp(0.0, 1.0);
        let q = self.point_at(t);
        dist(p, &q)
    }

    /// Euclidean distance between two segments.
    pub fn distance_to_segment(&self, other: &Segment) -> f64 {
        let d1 = sub(&self.b, &self.a);
        let d2 = sub(&other.b, &other.a);
        let r = sub(&self.a, &other.a);
        let a = dot(&d1, &d1);
        let e = dot(&d2, &d2);
        let f = dot(&d2, &r);
        let c = dot(&d1, &r);
        let b = dot(&d1, &d2);
        let denom = a * e - b * b;
        let mut s = if denom > 1e-14 * a * e {
            ((b * f - c * e) / denom).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let mut t = (b * s + f) / e;
        if t < 0.0 {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else if t > 1.0 {
            t = 1.0;
            s = ((b - c) / a).clamp(0.0, 1.0);
        }
        dist(&self.point_at(s), &other.point_at(t))
    }
}

/// Bounded subset of `R^d` with closed-form measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SetDescriptor {
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    /// Closed cylinder `{center + t axis + w : |t| <= half_length, w ⟂ axis, |w| <= radius}`.
    Cylinder {
        center: Vec<f64>,
        axis: Vec<f64>,
        half_length: f64,
        radius: f64,
    },
    /// Union of closed cylinders of the given radius around each segment.
    PiecewiseCylinder {
        segments: Vec<Segment>,
        radius: f64,
    },
}

/// Volume of the unit ball in `R^k`.
pub fn unit_ball_volume(k: usize) -> f64 {
    use std::f64::consts::PI;
    let (mut v, start) = if k % 2 == 0 { (1.0, 2) } else { (2.0, 3) };
    let mut j = start;
    while j <= k {
        v *= 2.0 * PI / j as f64;
        j += 2;
    }
    v
}

impl SetDescriptor {
    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        let s = SetDescriptor::Ball { center, radius };
        s.validate()?;
        Ok(s)
    }

    pub fn unit_ball(d: usize) -> Self {
        SetDescriptor::Ball {
            center: vec![0.0; d],
            radius: 1.0,
        }
    }

    pub fn boxed(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let s = SetDescriptor::Box { lo, hi };
        s.validate()?;
        Ok(s)
    }

    /// Cylinder with the axis normalized.
    pub fn cylinder(
        center: Vec<f64>,
        axis: Vec<f64>,
        half_length: f64,
        radius: f64,
    ) -> Result<Self> {
        let n = norm(&axis);
        if n == 0.0 {
            return Err(Error::Geometry("cylinder axis is zero".into()));
        }
        let axis = axis.iter().map(|a| a / n).collect();
        let s = SetDescriptor::Cylinder {
            center,
            axis,
            half_length,
            radius,
        };
        s.validate()?;
        Ok(s)
    }

    /// `Z(2 L, delta)`: centered on the origin, axis along the first coordinate.
    pub fn centered_cylinder(d: usize, half_length: f64, radius: f64) -> Result<Self> {
        let mut axis = vec![0.0; d];
        axis[0] = 1.0;
        Self::cylinder(vec![0.0; d], axis, half_length, radius)
    }

    pub fn piecewise(segments: Vec<Segment>, radius: f64) -> Result<Self> {
        let s = SetDescriptor::PiecewiseCylinder { segments, radius };
        s.validate()?;
        Ok(s)
    }

    /// Image of the set under `x -> s x` (`s > 0`).
    pub fn scaled(&self, s: f64) -> SetDescriptor {
        let sc = |v: &[f64]| v.iter().map(|x| x * s).collect::<Vec<f64>>();
        match self {
            SetDescriptor::Ball { center, radius } => SetDescriptor::Ball {
                center: sc(center),
                radius: radius * s,
            },
            SetDescriptor::Box { lo, hi } => SetDescriptor::Box {
                lo: sc(lo),
                hi: sc(hi),
            },
            SetDescriptor::Cylinder {
                center,
                axis,
                half_length,
                radius,
            } => SetDescriptor::Cylinder {
                center: sc(center),
                axis: axis.clone(),
                half_length: half_length * s,
                radius: radius * s,
            },
            SetDescriptor::PiecewiseCylinder { segments, radius } => {
                SetDescriptor::PiecewiseCylinder {
                    segments: segments
                        .iter()
                        .map(|g| Segment {
                            a: sc(&g.a),
                            b: sc(&g.b),
                        })
                        .collect(),
                    radius: radius * s,
                }
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SetDescriptor::Ball { center, .. } => center.len(),
            SetDescriptor::Box { lo, .. } => lo.len(),
            SetDescriptor::Cylinder { center, .. } => center.len(),
            SetDescriptor::PiecewiseCylinder { segments, .. } => {
                segments.first().map_or(0, |s| s.dim())
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Geometry(m.into()));
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            SetDescriptor::Ball { center, radius } => {
                if center.is_empty() || !finite(center) {
                    return bad("ball center must be a finite nonempty vector");
                }
                if !(*radius > 0.0 && radius.is_finite()) {
                    return bad("ball radius must be positive");
                }
            }
            SetDescriptor::Box { lo, hi } => {
                if lo.is_empty() || lo.len() != hi.len() || !finite(lo) || !finite(hi) {
                    return bad("box corners must be finite vectors of equal dimension");
                }
                if lo.iter().zip(hi).any(|(l, h)| h <= l) {
                    return bad("box has an empty side");
                }
            }
            SetDescriptor::Cylinder {
                center,
                axis,
                half_length,
                radius,
            } => {
                if center.len() < 2 || axis.len() != center.len() || !finite(center) {
                    return bad("cylinder needs dimension >= 2 and matching axis");
                }
                if (norm(axis) - 1.0).abs() > 1e-12 {
                    return bad("cylinder axis must be a unit vector");
                }
                if !(*half_length > 0.0
                    && *radius > 0.0
                    && half_length.is_finite()
                    && radius.is_finite())
                {
                    return bad("cylinder length and radius must be positive");
                }
            }
            SetDescriptor::PiecewiseCylinder { segments, radius } => {
                if segments.is_empty() {
                    return bad("piecewise cylinder needs at least one segment");
                }
                let d = segments[0].dim();
                if d < 2 || segments.iter().any(|s| s.dim() != d || s.a == s.b) {
                    return bad("segments must be nondegenerate with a common dimension >= 2");
                }
                if !(*radius > 0.0 && radius.is_finite()) {
                    return bad("piecewise cylinder radius must be positive");
                }
            }
        }
        Ok(())
    }

    /// Lebesgue measure. For piecewise cylinders the pieces are assumed disjoint.
    pub fn measure(&self) -> f64 {
        match self {
            SetDescriptor::Ball { center, radius } => {
                unit_ball_volume(center.len()) * radius.powi(center.len() as i32)
            }
            SetDescriptor::Box { lo, hi } => lo.iter().zip(hi).map(|(l, h)| h - l).product(),
            SetDescriptor::Cylinder {
                center,
                half_length,
                radius,
                ..
            } => {
                let k = center.len() - 1;
                2.0 * half_length * unit_ball_volume(k) * radius.powi(k as i32)
            }
            SetDescriptor::PiecewiseCylinder { segments, radius } => {
                let k = segments[0].dim() - 1;
                let cross = unit_ball_volume(k) * radius.powi(k as i32);
                segments.iter().map(|s| s.length() * cross).sum()
            }
        }
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        match self {
            SetDescriptor::Ball { center, radius } => dist(p, center) <= *radius,
            SetDescriptor::Box { lo, hi } => p
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(x, (l, h))| *l <= *x && *x <= *h),
            SetDescriptor::Cylinder {
                center,
                axis,
                half_length,
                radius,
            } => {
                let (t, w) = axial_radial(p, center, axis);
                t.abs() <= *half_length && w <= *radius
            }
            SetDescriptor::PiecewiseCylinder { segments, radius } => {
                segments.iter().any(|s| in_segment_cylinder(s, *radius, p))
            }
        }
    }

    /// Distance from an interior point to the boundary (negative outside).
    /// Not available for piecewise cylinders.
    pub fn boundary_distance(&self, p: &[f64]) -> Result<f64> {
        Ok(match self {
            SetDescriptor::Ball { center, radius } => radius - dist(p, center),
            SetDescriptor::Box { lo, hi } => p
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(x, (l, h))| (x - l).min(h - x))
                .fold(f64::INFINITY, f64::min),
            SetDescriptor::Cylinder {
                center,
                axis,
                half_length,
                radius,
            } => {
                let (t, w) = axial_radial(p, center, axis);
                (half_length - t.abs()).min(radius - w)
            }
            SetDescriptor::PiecewiseCylinder { .. } => {
                return Err(Error::Geometry(
                    "boundary distance needs a convex set".into(),
                ))
            }
        })
    }

    pub fn is_convex(&self) -> bool {
        !matches!(self, SetDescriptor::PiecewiseCylinder { .. })
    }

    /// Uniform sample written into `out`.
    pub fn sample_into(&self, rng: &mut Rng, out: &mut [f64]) {
        match self {
            SetDescriptor::Ball { center, radius } => {
                let d = center.len();
                sample_ball(rng, d, out);
                for (o, c) in out.iter_mut().zip(center) {
                    *o = c + radius * *o;
                }
            }
            SetDescriptor::Box { lo, hi } => {
                for (o, (l, h)) in out.iter_mut().zip(lo.iter().zip(hi)) {
                    *o = l + (h - l) * rng.random::<f64>();
                }
            }
            SetDescriptor::Cylinder {
                center,
                axis,
                half_length,
                radius,
            } => {
                let t = half_length * (2.0 * rng.random::<f64>() - 1.0);
                sample_cylinder(rng, center, axis, t, *radius, out);
            }
            SetDescriptor::PiecewiseCylinder { segments, radius } => {
                let total: f64 = segments.iter().map(|s| s.length()).sum();
                let mut pick = rng.random::<f64>() * total;
                let mut seg = &segments[segments.len() - 1];
                for s in segments {
                    let l = s.length();
                    if pick < l {
                        seg = s;
                        break;
                    }
                    pick -= l;
                }
                let u = seg.direction();
                let mid = seg.point_at(0.5);
                let t = seg.length() * (rng.random::<f64>() - 0.5);
                sample_cylinder(rng, &mid, &u, t, *radius, out);
            }
        }
    }

    pub fn sample_uniform(&self, rng: &mut Rng) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.sample_into(rng, &mut out);
        out
    }
}

fn sample_ball(rng: &mut Rng, d: usize, out: &mut [f64]) {
    let mut r2 = 0.0;
    loop {
        for o in out[..d].iter_mut() {
            *o = rng.sample(StandardNormal);
            r2 += *o * *o;
        }
        if r2 > 0.0 {
            break;
        }
    }
    let scale = rng.random::<f64>().powf(1.0 / d as f64) / r2.sqrt();
    for o in out[..d].iter_mut() {
        *o *= scale;
    }
}

/// Point at axial coordinate `t` with a uniform radial offset in the disk
/// of radius `radius` orthogonal to `axis`.
fn sample_cylinder(
    rng: &mut Rng,
    center: &[f64],
    axis: &[f64],
    t: f64,
    radius: f64,
    out: &mut [f64],
) {
    let d = center.len();
    let mut w = vec![0.0; d];
    // uniform in the (d-1)-ball of the orthogonal complement: project a
    // Gaussian onto it and rescale
    let mut n2;
    loop {
        for wi in w.iter_mut() {
            *wi = rng.sample(StandardNormal);
        }
        let p = dot(&w, axis);
        for (wi, a) in w.iter_mut().zip(axis) {
            *wi -= p * a;
        }
        n2 = dot(&w, &w);
        if n2 > 1e-300 {
            break;
        }
    }
    let scale = radius * rng.random::<f64>().powf(1.0 / (d - 1) as f64) / n2.sqrt();
    for i in 0..d {
        out[i] = center[i] + t * axis[i] + scale * w[i];
    }
}

fn in_segment_cylinder(s: &Segment, radius: f64, p: &[f64]) -> bool {
    let u = s.direction();
    let ap = sub(p, &s.a);
    let t = dot(&ap, &u);
    if t < 0.0 || t > s.length() {
        return false;
    }
    let w2 = dot(&ap, &ap) - t * t;
    w2 <= radius * radius * (1.0 + 1e-12)
}

fn axial_radial(p: &[f64], center: &[f64], axis: &[f64]) -> (f64, f64) {
    let v = sub(p, center);
    let t = dot(&v, axis);
    let w2 = (dot(&v, &v) - t * t).max(0.0);
    (t, w2.sqrt())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Normalized double integral over a cylinder together with the 1D bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelRatio {
    /// Monte Carlo estimate of `λ(Z)^-2 ∫∫_{Z×Z} h(|x-y|)`.
    pub estimate: f64,
    pub std_error: f64,
    /// `(1/2L) ∫_{-L}^{L} h(|r|) dr`.
    pub reference: f64,
}

/// Mean of `h(|x - y|)` over independent uniform pairs in `set`.
pub fn pair_kernel_mean(
    h: &dyn RadialKernel,
    set: &SetDescriptor,
    n_samples: usize,
    seed: u64,
) -> Moments {
    let d = set.dim();
    block_mc(n_samples, seed, |rng| {
        let mut x = [0.0; 8];
        let mut y = [0.0; 8];
        set.sample_into(rng, &mut x[..d]);
        set.sample_into(rng, &mut y[..d]);
        h.eval(dist(&x[..d], &y[..d]))
    })
}

/// `(1/L) ∫_0^L h(r) dr`.
pub fn axial_average(h: &dyn RadialKernel, half_length: f64) -> f64 {
    let mut breaks = vec![0.0];
    let lo = 1e-12 * half_length;
    let steps = 60;
    for i in 0..=steps {
        breaks.push(lo * (half_length / lo).powf(i as f64 / steps as f64));
    }
    let r = quad::integrate_panels(
        &|r: f64| h.eval(r),
        &breaks,
        1e-13 * half_length,
        1e-11,
        4000,
    );
    r.value / half_length
}

/// Kernel ratio on `Z(2L, delta)` in dimension `d`.
pub fn cylinder_kernel_ratio(
    h: &dyn RadialKernel,
    d: usize,
    half_length: f64,
    delta: f64,
    n_samples: usize,
    seed: u64,
) -> Result<KernelRatio> {
    if !h.is_nonincreasing() {
        return Err(Error::InvalidArgument(
            "kernel must be nonincreasing".into(),
        ));
    }
    let z = SetDescriptor::centered_cylinder(d, half_length, delta)?;
    let m = pair_kernel_mean(h, &z, n_samples, seed);
    Ok(KernelRatio {
        estimate: m.mean(),
        std_error: m.std_error(),
        reference: axial_average(h, half_length),
    })
}

/// Segments selected from a polyline together with their clearance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Extraction {
    pub segments: Vec<Segment>,
    pub bar_delta: f64,
    /// Common segment length `l`.
    pub segment_length: f64,
    /// `L` rounded down to a multiple of `6 l`.
    pub effective_length: f64,
    /// Slab index (1-based, odd) each segment was taken from.
    pub slabs: Vec<usize>,
}

/// Picks one polyline segment in every second slab of width `3 l` along a
/// chord of length at least `L`, and the clearance radius `bar_delta` below
/// which the fattened segments are disjoint, inside their slabs and inside
/// `domain`.
pub fn extract_segments(
    polyline: &[Segment],
    length: f64,
    domain: &SetDescriptor,
) -> Result<Extraction> {
    if polyline.is_empty() {
        return Err(Error::Geometry("empty polyline".into()));
    }
    if !domain.is_convex() {
        return Err(Error::Geometry(
            "domain must be a ball, box or cylinder".into(),
        ));
    }
    let d = polyline[0].dim();
    if domain.dim() != d {
        return Err(Error::Geometry(
            "polyline and domain dimensions differ".into(),
        ));
    }
    let l = polyline[0].length();
    for (i, s) in polyline.iter().enumerate() {
        if s.dim() != d {
            return Err(Error::Geometry(format!(
                "segment {i} has the wrong dimension"
            )));
        }
        if (s.length() - l).abs() > 1e-9 * l {
            return Err(Error::Geometry(format!(
                "segment {i} length {} differs from {l}",
                s.length()
            )));
        }
        if i > 0 && dist(&polyline[i - 1].b, &s.a) > 1e-12 * l.max(1.0) {
            return Err(Error::Geometry(format!(
                "polyline is disconnected before segment {i}"
            )));
        }
        if !domain.contains(&s.a) || !domain.contains(&s.b) {
            return Err(Error::Geometry(format!("segment {i} leaves the domain")));
        }
    }

    let mut verts: Vec<&[f64]> = polyline.iter().map(|s| s.a.as_slice()).collect();
    verts.push(polyline[polyline.len() - 1].b.as_slice());
    let (mut ia, mut ib, mut diam) = (0, 0, 0.0);
    for i in 0..verts.len() {
        for j in i + 1..verts.len() {
            let r = dist(verts[i], verts[j]);
            if r > diam {
                (ia, ib, diam) = (i, j, r);
            }
        }
    }
    if diam < length {
        return Err(Error::Geometry(format!(
            "polyline diameter {diam} is below L = {length}"
        )));
    }
    let n = (length / (6.0 * l) + 1e-9).floor() as usize;
    if n == 0 {
        return Err(Error::Geometry(format!(
            "L = {length} is shorter than six segment lengths"
        )));
    }
    let eff = 6.0 * l * n as f64;
    let a = verts[ia];
    let u: Vec<f64> = sub(verts[ib], a).iter().map(|x| x / diam).collect();
    let proj = |p: &[f64]| dot(&sub(p, a), &u);
    let w = 3.0 * l;

    // the walk from vertex ia to ib; segments between them in walk order
    let walk: Vec<usize> = (ia..ib).collect();
    let mut reached = f64::NEG_INFINITY;
    for &i in &walk {
        reached = reached.max(proj(&polyline[i].b));
    }
    if reached < eff {
        return Err(Error::Geometry(
            "walk between chord endpoints does not cross all slabs".into(),
        ));
    }

    let mut chosen = Vec::with_capacity(n);
    let mut slabs = Vec::with_capacity(n);
    for j in 0..n {
        let k = 2 * j + 1;
        let (lo, hi) = (w * (k - 1) as f64, w * k as f64);
        let found = walk.iter().copied().find(|&i| {
            let (pa, pb) = (proj(&polyline[i].a), proj(&polyline[i].b));
            pa > lo && pa < hi && pb > lo && pb < hi
        });
        match found {
            Some(i) => {
                chosen.push(polyline[i].clone());
                slabs.push(k);
            }
            None => {
                return Err(Error::Geometry(format!(
                    "no polyline segment strictly inside slab {k}"
                )))
            }
        }
    }

    let mut clearance = f64::INFINITY;
    for (s, &k) in chosen.iter().zip(&slabs) {
        let (lo, hi) = (w * (k - 1) as f64, w * k as f64);
        for p in [&s.a, &s.b] {
            clearance = clearance.min(domain.boundary_distance(p)?);
            let t = proj(p);
            clearance = clearance.min(t - lo).min(hi - t);
        }
    }
    for i in 0..chosen.len() {
        for j in i + 1..chosen.len() {
            clearance = clearance.min(0.5 * chosen[i].distance_to_segment(&chosen[j]));
        }
    }
    if !(clearance > 0.0) {
        return Err(Error::Geometry(
            "selected segments have no clearance".into(),
        ));
    }
    Ok(Extraction {
        segments: chosen,
        // strictly inside the open clearance so closed cylinders stay disjoint
        bar_delta: 0.9 * clearance,
        segment_length: l,
        effective_length: eff,
        slabs,
    })
}

/// Normalized kernel integrals over a piecewise cylinder and over the
/// straight cylinder of the same total length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PiecewiseComparison {
    pub piecewise: f64,
    pub piecewise_se: f64,
    pub straight: f64,
    pub straight_se: f64,
    /// Standard error of `piecewise - straight` under common random numbers.
    pub difference_se: f64,
}

/// Compares the kernel ratio of `gamma_delta` with that of `Z(n l, delta)`.
///
/// Both sets are sampled with common random numbers: a point in piece `i`
/// at axial offset `t` is paired with the point at axial offset `i l + t`
/// of the straight cylinder, with the same radial offset coordinates.
pub fn piecewise_vs_straight(
    h: &dyn RadialKernel,
    segments: &[Segment],
    delta: f64,
    n_samples: usize,
    seed: u64,
) -> Result<PiecewiseComparison> {
    if segments.is_empty() {
        return Err(Error::Geometry("no segments".into()));
    }
    if !h.is_nonincreasing() {
        return Err(Error::InvalidArgument(
            "kernel must be nonincreasing".into(),
        ));
    }
    let d = segments[0].dim();
    let l = segments[0].length();
    if segments
        .iter()
        .any(|s| s.dim() != d || (s.length() - l).abs() > 1e-9 * l)
    {
        return Err(Error::Geometry(
            "segments must share dimension and length".into(),
        ));
    }
    for i in 0..segments.len() {
        for j in i + 1..segments.len() {
            if segments[i].distance_to_segment(&segments[j]) <= 2.0 * delta {
                return Err(Error::Geometry(format!(
                    "fattened segments {i} and {j} overlap"
                )));
            }
        }
    }
    let n = segments.len();
    let frames: Vec<(Vec<f64>, Vec<Vec<f64>>)> = segments
        .iter()
        .map(|s| {
            let u = s.direction();
            (u.clone(), orthonormal_complement(&u))
        })
        .collect();
    let mut e1 = vec![0.0; d];
    e1[0] = 1.0;
    let straight_frame = orthonormal_complement(&e1);

    let point = |rng: &mut Rng, pw: &mut [f64], st: &mut [f64]| {
        let i = rng.random_range(0..n);
        let t = l * rng.random::<f64>();
        let mut w = [0.0; 8];
        sample_ball(rng, d - 1, &mut w);
        let (u, basis) = &frames[i];
        for c in 0..d {
            pw[c] = segments[i].a[c] + t * u[c];
            st[c] = (i as f64 * l + t) * e1[c];
        }
        for (k, (bk, sk)) in basis.iter().zip(&straight_frame).enumerate() {
            for c in 0..d {
                pw[c] += delta * w[k] * bk[c];
                st[c] += delta * w[k] * sk[c];
            }
        }
    };
    let draws = |seed: u64| {
        let blocks = n_samples.div_ceil(8192);
        let mut acc = [Moments::default(); 3];
        for b in 0..blocks {
            let mut rng = stream_rng(seed, b as u64);
            let count = 8192.min(n_samples - b * 8192);
            let (mut px, mut sx, mut py, mut sy) = ([0.0; 8], [0.0; 8], [0.0; 8], [0.0; 8]);
            for _ in 0..count {
                point(&mut rng, &mut px[..d], &mut sx[..d]);
                point(&mut rng, &mut py[..d], &mut sy[..d]);
                let hp = h.eval(dist(&px[..d], &py[..d]));
                let hs = h.eval(dist(&sx[..d], &sy[..d]));
                acc[0].push(hp);
                acc[1].push(hs);
                acc[2].push(hp - hs);
            }
        }
        acc
    };
    let acc = draws(seed);
    Ok(PiecewiseComparison {
        piecewise: acc[0].mean(),
        piecewise_se: acc[0].std_error(),
        straight: acc[1].mean(),
        straight_se: acc[1].std_error(),
        difference_se: acc[2].std_error(),
    })
}

/// Orthonormal basis of the complement of the unit vector `u`.
pub fn orthonormal_complement(u: &[f64]) -> Vec<Vec<f64>> {
    let d = u.len();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d - 1);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| u[a].abs().total_cmp(&u[b].abs()));
    for &c in &order {
        if basis.len() == d - 1 {
            break;
        }
        let mut v = vec![0.0; d];
        v[c] = 1.0;
        for _ in 0..2 {
            let p = dot(&v, u);
            for (vi, ui) in v.iter_mut().zip(u) {
                *vi -= p * ui;
            }
            for b in &basis {
                let p = dot(&v, b);
                for (vi, bi) in v.iter_mut().zip(b) {
                    *vi -= p * bi;
                }
            }
        }
        let nv = norm(&v);
        if nv > 1e-8 {
            basis.push(v.iter().map(|x| x / nv).collect());
        }
    }
    basis
}
