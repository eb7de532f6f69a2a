//! Flow Jacobians: Lyapunov spectrum and image volumes.
//!
//! A Jacobian `L` is advanced with a Gaussian gradient increment `dF`
//! (covariance `C_ikjl dt`). The default update is the exponential one,
//! `L <- exp(dF - M dt / 2) L` with `M_ij = sum_k C_ikkj`, which keeps
//! `det L > 0`, has `E[det] = 1` per step exactly and preserves `det = 1`
//! on the divergence-free model. The plain Euler update `L <- (I + dF) L`
//! is available as [`JacobianScheme::Euler`].

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covmodel::IsotropicModel;
use crate::error::{Error, Result};
use crate::geometry::SetDescriptor;
use crate::linalg::{factorize_psd, FactorStats, Factorizer, PsdFactor, SmallMat, MAX_DIM};
use crate::rng::{derive_seed, stream_rng, Rng};
use crate::simcore::{canonical_order, save_steps, NoiseSource, StepConfig};
use crate::stats::Moments;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianScheme {
    #[default]
    Exponential,
    Euler,
}

/// Samples gradient increments `dF` at a single point.
#[derive(Debug, Clone)]
pub struct GradientSampler {
    d: usize,
    factor: PsdFactor,
    sdt: f64,
    half_m_dt: SmallMat,
}

impl GradientSampler {
    pub fn new(model: &IsotropicModel, dt: f64) -> Result<Self> {
        let d = model.d();
        let c = model.gradient_cov();
        // no jitter: the trace direction must stay exactly degenerate when
        // the model is divergence free
        let factor = factorize_psd(&c.as_matrix(), d * d, 0.0)?;
        Ok(Self {
            d,
            factor,
            sdt: dt.sqrt(),
            half_m_dt: c.contraction().scale(0.5 * dt),
        })
    }

    /// `dF` from `d^2` standard normals.
    pub fn increment_from(&self, z: &[f64]) -> SmallMat {
        let d = self.d;
        let mut out = [0.0; MAX_DIM * MAX_DIM];
        self.factor.apply(z, &mut out[..d * d]);
        SmallMat::from_fn(d, |i, j| self.sdt * out[i * d + j])
    }

    pub fn sample(&self, rng: &mut Rng) -> SmallMat {
        let mut z = [0.0; MAX_DIM * MAX_DIM];
        for v in z[..self.d * self.d].iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        self.increment_from(&z[..self.d * self.d])
    }
}

/// `L <- exp(dF - M dt/2) L` or `L <- (I + dF) L`, together with the log
/// of the determinant of the step factor (NaN if it is not positive).
#[inline]
fn apply_increment(
    l: &SmallMat,
    df: &SmallMat,
    half_m_dt: &SmallMat,
    scheme: JacobianScheme,
) -> (SmallMat, f64) {
    match scheme {
        JacobianScheme::Exponential => {
            let omega = SmallMat::from_fn(l.order(), |i, j| df[(i, j)] - half_m_dt[(i, j)]);
            (omega.exp() * *l, omega.trace())
        }
        JacobianScheme::Euler => {
            let step = SmallMat::identity(l.order()).add(df);
            let det = step.det();
            (step * *l, if det > 0.0 { det.ln() } else { f64::NAN })
        }
    }
}

/// One step of the one-point linearization.
pub fn onepoint_linearization_step(
    l: &SmallMat,
    sampler: &GradientSampler,
    scheme: JacobianScheme,
    rng: &mut Rng,
) -> SmallMat {
    let df = sampler.sample(rng);
    apply_increment(l, &df, &sampler.half_m_dt, scheme).0
}

/// Lyapunov exponent estimates over replicates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovEstimate {
    pub estimates: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub targets: Vec<f64>,
    /// Per replicate, the exponents in QR order.
    pub per_replicate: Vec<Vec<f64>>,
}

/// Propagates one-point Jacobians to time `horizon`, re-orthonormalizing
/// by QR every `reorth_every` steps, and averages `(1/T) sum log|R_ii|`.
pub fn lyapunov_estimate(
    model: &IsotropicModel,
    horizon: f64,
    cfg: &StepConfig,
    replicates: usize,
    reorth_every: usize,
    scheme: JacobianScheme,
) -> Result<LyapunovEstimate> {
    if replicates < 2 {
        return Err(Error::InvalidArgument(
            "need at least two replicates".into(),
        ));
    }
    if reorth_every == 0 {
        return Err(Error::InvalidArgument(
            "re-orthonormalization cadence must be positive".into(),
        ));
    }
    let steps = cfg.steps_to(horizon)?;
    if steps == 0 {
        return Err(Error::InvalidArgument("horizon must be positive".into()));
    }
    let d = model.d();
    let sampler = GradientSampler::new(model, cfg.dt)?;
    let t = steps as f64 * cfg.dt;
    let per_replicate: Vec<Vec<f64>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(cfg.seed, r as u64);
            let mut l = SmallMat::identity(d);
            let mut acc = vec![0.0; d];
            for k in 1..=steps {
                l = onepoint_linearization_step(&l, &sampler, scheme, &mut rng);
                if k % reorth_every as u64 == 0 || k == steps {
                    let (q, diag) = l.qr();
                    for i in 0..d {
                        acc[i] += diag[i].abs().ln();
                    }
                    l = q;
                    // keep the orientation of each column consistent
                    for j in 0..d {
                        if diag[j] < 0.0 {
                            for i in 0..d {
                                l[(i, j)] = -l[(i, j)];
                            }
                        }
                    }
                }
                if !l.is_finite() {
                    return Err(Error::Numerical(format!(
                        "Jacobian overflow in replicate {r}"
                    )));
                }
            }
            Ok(acc.iter().map(|a| a / t).collect())
        })
        .collect::<Result<_>>()?;
    let mut estimates = Vec::with_capacity(d);
    let mut std_errors = Vec::with_capacity(d);
    for i in 0..d {
        let col: Vec<f64> = per_replicate.iter().map(|v| v[i]).collect();
        let (m, se) = crate::stats::mc_mean_se(&col)?;
        estimates.push(m);
        std_errors.push(se);
    }
    Ok(LyapunovEstimate {
        estimates,
        std_errors,
        targets: model.lyapunov_spectrum(),
        per_replicate,
    })
}

/// `det L_T` of `count` independent one-point Jacobians.
///
/// `L` is split as `Q R` every few steps and only `Q` is propagated, with
/// `ln |det R|` accumulated, so the determinant stays accurate when `L` is
/// badly conditioned.
pub fn determinant_drift(
    model: &IsotropicModel,
    horizon: f64,
    cfg: &StepConfig,
    count: usize,
    scheme: JacobianScheme,
) -> Result<Vec<f64>> {
    const SPLIT_EVERY: u64 = 10;
    let steps = cfg.steps_to(horizon)?;
    let sampler = GradientSampler::new(model, cfg.dt)?;
    let d = model.d();
    Ok((0..count)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(cfg.seed, r as u64);
            let mut l = SmallMat::identity(d);
            let (mut log_r, mut sign) = (0.0, 1.0);
            for k in 1..=steps {
                l = onepoint_linearization_step(&l, &sampler, scheme, &mut rng);
                if k % SPLIT_EVERY == 0 {
                    let (q, diag) = l.qr();
                    for v in &diag[..d] {
                        log_r += v.abs().ln();
                        sign *= v.signum();
                    }
                    l = q;
                }
            }
            sign * l.det() * log_r.exp()
        })
        .collect())
}

/// Positions and Jacobians of `n` markers.
///
/// `log_dets` accumulates the log-determinants of the step factors; it
/// equals `ln det L` but stays accurate when `L` is badly conditioned.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    pub d: usize,
    pub positions: Vec<f64>,
    pub jacobians: Vec<SmallMat>,
    pub log_dets: Vec<f64>,
    pub time: f64,
    pub step_count: u64,
}

impl AugmentedState {
    /// Markers at `positions` with identity Jacobians.
    pub fn new(d: usize, positions: Vec<f64>) -> Result<Self> {
        if d == 0 || d > MAX_DIM || positions.len() % d != 0 {
            return Err(Error::InvalidArgument(
                "positions length is not a multiple of d".into(),
            ));
        }
        let n = positions.len() / d;
        Ok(Self {
            d,
            positions,
            jacobians: vec![SmallMat::identity(d); n],
            log_dets: vec![0.0; n],
            time: 0.0,
            step_count: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.jacobians.len()
    }

    pub fn point(&self, p: usize) -> &[f64] {
        &self.positions[p * self.d..(p + 1) * self.d]
    }

    pub fn determinants(&self) -> Vec<f64> {
        self.log_dets.iter().map(|v| v.exp()).collect()
    }
}

/// Layout of one marker's block in the joint Gaussian vector:
/// `[W_1..W_d, F_11, F_12, .., F_dd]` with `F_ij = d_j W_i`.
#[inline]
fn block_size(d: usize) -> usize {
    d + d * d
}

/// Joint covariance of velocity and velocity-gradient increments (per unit
/// time) at the given markers, row-major of order `n (d + d^2)`.
pub fn coupled_covariance(model: &IsotropicModel, positions: &[f64], out: &mut Vec<f64>) {
    coupled_covariance_upper(model, positions, out);
    let nn = (positions.len() / model.d()) * block_size(model.d());
    for r in 0..nn {
        for c in r + 1..nn {
            out[c * nn + r] = out[r * nn + c];
        }
    }
}

/// Blocks on and above the block diagonal of [`coupled_covariance`].
fn coupled_covariance_upper(model: &IsotropicModel, positions: &[f64], out: &mut Vec<f64>) {
    let d = model.d();
    let n = positions.len() / d;
    let bs = block_size(d);
    let nn = n * bs;
    out.resize(nn * nn, 0.0);
    let mut b = [0.0; MAX_DIM * MAX_DIM];
    let mut g = vec![0.0; d * d * d];
    let mut h = vec![0.0; d * d * d * d];
    let mut z = [0.0; MAX_DIM];
    for p in 0..n {
        for q in p..n {
            for i in 0..d {
                z[i] = positions[p * d + i] - positions[q * d + i];
            }
            model.derivatives_into(&z[..d], &mut b[..d * d], &mut g, Some(&mut h));
            let (rp, cq) = (p * bs, q * bs);
            // rows of marker p, columns of marker q
            for i in 0..d {
                let row = &mut out[(rp + i) * nn + cq..(rp + i) * nn + cq + bs];
                for k in 0..d {
                    row[k] = b[i * d + k];
                    for l in 0..d {
                        row[d + k * d + l] = -g[(i * d + k) * d + l];
                    }
                }
            }
            for i in 0..d {
                for j in 0..d {
                    let r = rp + d + i * d + j;
                    let row = &mut out[r * nn + cq..r * nn + cq + bs];
                    for k in 0..d {
                        row[k] = g[(i * d + k) * d + j];
                        for l in 0..d {
                            row[d + k * d + l] = -h[((i * d + k) * d + j) * d + l];
                        }
                    }
                }
            }
        }
    }
}

/// Reusable buffers for the coupled positions + Jacobians step.
pub struct AugmentedStepper {
    model: IsotropicModel,
    cfg: StepConfig,
    scheme: JacobianScheme,
    half_m_dt: SmallMat,
    cov: Vec<f64>,
    z: Vec<f64>,
    inc: Vec<f64>,
    factorizer: Factorizer,
    pub stats: FactorStats,
}

impl AugmentedStepper {
    pub fn new(model: IsotropicModel, cfg: StepConfig, scheme: JacobianScheme) -> Result<Self> {
        cfg.validate()?;
        let half_m_dt = model.gradient_cov().contraction().scale(0.5 * cfg.dt);
        Ok(Self {
            model,
            cfg,
            scheme,
            half_m_dt,
            cov: Vec::new(),
            z: Vec::new(),
            inc: Vec::new(),
            factorizer: Factorizer::new(),
            stats: FactorStats::default(),
        })
    }

    pub fn step(&mut self, state: &mut AugmentedState, noise: &mut NoiseSource) -> Result<()> {
        let d = self.model.d();
        let n = state.n();
        let bs = block_size(d);
        let nn = n * bs;
        if noise.len() != n {
            return Err(Error::InvalidArgument(
                "noise source has the wrong number of streams".into(),
            ));
        }
        self.z.resize(nn, 0.0);
        noise.fill(&mut self.z);
        coupled_covariance_upper(&self.model, &state.positions, &mut self.cov);
        let f = self.factorizer.factorize(&self.cov, nn, self.cfg.jitter)?;
        self.stats.record(f.route, f.clipped);
        self.inc.resize(nn, 0.0);
        f.apply(&self.z, &mut self.inc);
        let sdt = self.cfg.dt.sqrt();
        for p in 0..n {
            let blk = &self.inc[p * bs..(p + 1) * bs];
            for i in 0..d {
                state.positions[p * d + i] += sdt * blk[i];
            }
            let df = SmallMat::from_fn(d, |i, j| sdt * blk[d + i * d + j]);
            let (l, ld) = apply_increment(&state.jacobians[p], &df, &self.half_m_dt, self.scheme);
            state.jacobians[p] = l;
            state.log_dets[p] += ld;
        }
        state.step_count += 1;
        state.time = state.step_count as f64 * self.cfg.dt;
        if state.log_dets.iter().any(|v| v.is_nan()) {
            return Err(Error::Numerical(format!(
                "nonpositive Jacobian determinant at t = {}; reduce dt",
                state.time
            )));
        }
        if state.positions.iter().any(|v| !v.is_finite())
            || state.jacobians.iter().any(|l| !l.is_finite())
        {
            return Err(Error::Numerical("non-finite augmented state".into()));
        }
        Ok(())
    }
}

/// Simulates markers and their Jacobians, saving at `save_times`. Markers
/// are processed in lexicographic order of their initial positions.
pub fn simulate_augmented(
    initial: &[f64],
    model: &IsotropicModel,
    cfg: &StepConfig,
    scheme: JacobianScheme,
    horizon: f64,
    save_times: &[f64],
    replicate: u64,
) -> Result<(Vec<AugmentedState>, FactorStats)> {
    let d = model.d();
    let (total, steps) = save_steps(cfg, horizon, save_times)?;
    let order = canonical_order(d, initial);
    let sorted: Vec<f64> = order
        .iter()
        .flat_map(|&p| initial[p * d..(p + 1) * d].to_vec())
        .collect();
    let mut state = AugmentedState::new(d, sorted)?;
    let n = state.n();
    let mut noise = NoiseSource::new(cfg.seed, replicate, n);
    let mut stepper = AugmentedStepper::new(*model, *cfg, scheme)?;
    let unpermute = |s: &AugmentedState| {
        let mut out = s.clone();
        for (rank, &p) in order.iter().enumerate() {
            out.positions[p * d..(p + 1) * d].copy_from_slice(s.point(rank));
            out.jacobians[p] = s.jacobians[rank];
            out.log_dets[p] = s.log_dets[rank];
        }
        out
    };
    let mut snaps = Vec::with_capacity(steps.len());
    let mut next = 0;
    for k in 0..=total {
        if k > 0 {
            stepper.step(&mut state, &mut noise)?;
        }
        while next < steps.len() && steps[next] == k {
            snaps.push(unpermute(&state));
            next += 1;
        }
    }
    Ok((snaps, stepper.stats))
}

/// Marker positions, Jacobian determinants per save time, for one replicate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateVolume {
    pub determinants: Vec<Vec<f64>>,
    pub positions: Vec<Vec<f64>>,
}

/// Replicated volume simulation of a set `A`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VolumeRun {
    pub model: IsotropicModel,
    pub set: SetDescriptor,
    pub measure: f64,
    pub n_markers: usize,
    pub times: Vec<f64>,
    pub replicates: Vec<ReplicateVolume>,
    pub factor_stats: FactorStats,
}

/// One row of a volume or second-moment curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub t: f64,
    pub estimate: f64,
    pub std_error: f64,
}

impl VolumeRun {
    /// `V_t = (λ(A)/n) sum_p det L_t^(p)` for replicate `r` at save index `k`.
    pub fn volume(&self, r: usize, k: usize) -> f64 {
        let dets = &self.replicates[r].determinants[k];
        self.measure * (dets.iter().sum::<f64>() / self.n_markers as f64)
    }

    /// Volumes of all replicates at save index `k`.
    pub fn volumes_at(&self, k: usize) -> Vec<f64> {
        (0..self.replicates.len())
            .map(|r| self.volume(r, k))
            .collect()
    }

    pub fn time_index(&self, t: f64) -> Option<usize> {
        self.times
            .iter()
            .position(|&s| (s - t).abs() <= 1e-9 * t.max(1.0))
    }

    /// Mean volume across replicates per save time.
    pub fn curve(&self) -> Vec<CurvePoint> {
        (0..self.times.len())
            .map(|k| {
                let mut m = Moments::default();
                for v in self.volumes_at(k) {
                    m.push(v);
                }
                CurvePoint {
                    t: self.times[k],
                    estimate: m.mean(),
                    std_error: m.std_error(),
                }
            })
            .collect()
    }
}

/// Marker positions for replicate `r`.
pub fn sample_markers(set: &SetDescriptor, n: usize, seed: u64, replicate: u64) -> Vec<f64> {
    let mut rng = stream_rng(derive_seed(seed, replicate), 0x4D41_524B);
    let d = set.dim();
    let mut out = vec![0.0; n * d];
    for p in 0..n {
        set.sample_into(&mut rng, &mut out[p * d..(p + 1) * d]);
    }
    out
}

/// Runs `replicates` coupled simulations with `n_markers` i.i.d. uniform
/// markers in `set`.
#[allow(clippy::too_many_arguments)]
pub fn volume_estimate(
    set: &SetDescriptor,
    model: &IsotropicModel,
    cfg: &StepConfig,
    scheme: JacobianScheme,
    horizon: f64,
    save_times: &[f64],
    n_markers: usize,
    replicates: usize,
) -> Result<VolumeRun> {
    set.validate()?;
    if set.dim() != model.d() {
        return Err(Error::InvalidArgument(
            "set dimension differs from the model".into(),
        ));
    }
    if n_markers < 2 || replicates < 2 {
        return Err(Error::InvalidArgument(
            "need at least two markers and two replicates".into(),
        ));
    }
    let (_, steps) = save_steps(cfg, horizon, save_times)?;
    let times: Vec<f64> = steps.iter().map(|&k| k as f64 * cfg.dt).collect();
    let results: Vec<(ReplicateVolume, FactorStats)> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let markers = sample_markers(set, n_markers, cfg.seed, r as u64);
            let (snaps, stats) =
                simulate_augmented(&markers, model, cfg, scheme, horizon, &times, r as u64)?;
            let mut determinants = Vec::with_capacity(snaps.len());
            for s in &snaps {
                let dets = s.determinants();
                if dets.iter().any(|&v| !(v > 0.0)) {
                    return Err(Error::Numerical(format!(
                        "nonpositive Jacobian determinant in replicate {r} at t = {}; reduce dt",
                        s.time
                    )));
                }
                determinants.push(dets);
            }
            let positions = snaps.into_iter().map(|s| s.positions).collect();
            Ok((
                ReplicateVolume {
                    determinants,
                    positions,
                },
                stats,
            ))
        })
        .collect::<Result<_>>()?;
    let mut factor_stats = FactorStats::default();
    let mut reps = Vec::with_capacity(replicates);
    for (rv, st) in results {
        factor_stats.merge(&st);
        reps.push(rv);
    }
    Ok(VolumeRun {
        model: *model,
        set: set.clone(),
        measure: set.measure(),
        n_markers,
        times,
        replicates: reps,
        factor_stats,
    })
}

/// Second moment of the image volume per save time, estimated by the
/// off-diagonal pair average `λ(A)^2/(n(n-1)) sum_{p != q} det_p det_q` so
/// that the marker self-pairs do not contribute.
pub fn second_moment_curve(run: &VolumeRun) -> Vec<CurvePoint> {
    let n = run.n_markers as f64;
    let lam2 = run.measure * run.measure;
    (0..run.times.len())
        .map(|k| {
            let mut m = Moments::default();
            for rep in &run.replicates {
                let dets = &rep.determinants[k];
                let s: f64 = dets.iter().sum();
                let s2: f64 = dets.iter().map(|v| v * v).sum();
                m.push(lam2 * (s * s - s2) / (n * (n - 1.0)));
            }
            CurvePoint {
                t: run.times[k],
                estimate: m.mean(),
                std_error: m.std_error(),
            }
        })
        .collect()
}
