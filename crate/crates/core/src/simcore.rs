//! Euler-Maruyama simulation of the n-point motion and of the distance
//! process, plus the quadratic-variation functional of the two-point motion.
//!
//! Increments of the n-point motion are drawn with covariance exactly
//! `b(x_p - x_q) dt` between particles `p` and `q`, so each particle is a
//! standard Brownian motion.

use std::io::{Read, Write};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::covmodel::IsotropicModel;
use crate::error::{Error, Result};
use crate::linalg::{FactorStats, Factorizer};
use crate::rng::{particle_rng, Rng};

/// Time-stepping parameters. The scheme is always Euler-Maruyama.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepConfig {
    pub dt: f64,
    /// Diagonal regularization added before the Cholesky attempt.
    #[serde(default = "default_jitter")]
    pub jitter: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_jitter() -> f64 {
    1e-12
}

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            jitter: 1e-12,
            seed: 0,
        }
    }
}

impl StepConfig {
    pub fn new(dt: f64, seed: u64) -> Result<Self> {
        let c = Self {
            dt,
            seed,
            ..Self::default()
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "dt = {} must be positive",
                self.dt
            )));
        }
        if !(self.jitter >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "jitter = {} must be nonnegative",
                self.jitter
            )));
        }
        Ok(())
    }

    /// Number of steps to reach `t`; fails unless `t` is a multiple of `dt`.
    pub fn steps_to(&self, t: f64) -> Result<u64> {
        if !(t >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "time {t} must be nonnegative"
            )));
        }
        let k = (t / self.dt).round();
        if (k * self.dt - t).abs() > 1e-9 * t.max(self.dt) {
            return Err(Error::InvalidArgument(format!(
                "time {t} is not a multiple of dt = {}",
                self.dt
            )));
        }
        Ok(k as u64)
    }
}

/// Positions of `n` particles in `R^d`, stored flat (`positions[p*d + i]`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NPointState {
    pub d: usize,
    pub positions: Vec<f64>,
    pub time: f64,
    pub step_count: u64,
}

impl NPointState {
    pub fn new(d: usize, positions: Vec<f64>) -> Result<Self> {
        if d == 0 || positions.len() % d != 0 {
            return Err(Error::InvalidArgument(
                "positions length is not a multiple of d".into(),
            ));
        }
        if positions.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("positions must be finite".into()));
        }
        Ok(Self {
            d,
            positions,
            time: 0.0,
            step_count: 0,
        })
    }

    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let d = points.first().map_or(0, |p| p.len());
        if points.iter().any(|p| p.len() != d) {
            return Err(Error::InvalidArgument(
                "points have different dimensions".into(),
            ));
        }
        Self::new(d, points.concat())
    }

    pub fn n(&self) -> usize {
        self.positions.len() / self.d
    }

    pub fn point(&self, p: usize) -> &[f64] {
        &self.positions[p * self.d..(p + 1) * self.d]
    }
}

/// Per-particle Gaussian streams; particle `p` always draws from stream `p`.
pub struct NoiseSource {
    streams: Vec<Rng>,
}

impl NoiseSource {
    pub fn new(seed: u64, replicate: u64, n: usize) -> Self {
        Self {
            streams: (0..n)
                .map(|p| particle_rng(seed, replicate, p as u64))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.streams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.streams.is_empty()
    }

    /// Fills `z` with `z.len() / n` standard normals per particle, particle
    /// blocks in index order.
    pub fn fill(&mut self, z: &mut [f64]) {
        let n = self.streams.len();
        let per = z.len() / n;
        for (rng, block) in self.streams.iter_mut().zip(z.chunks_mut(per)) {
            for v in block {
                *v = StandardNormal.sample(rng);
            }
        }
    }
}

/// Separation (in units of `ell`) beyond which two particles are treated
/// as uncorrelated; every entry of `b` is below `1e-19` there.
pub const FAR_FIELD: f64 = 10.0;

/// Reusable buffers for n-point steps.
pub struct NPointStepper {
    model: IsotropicModel,
    cfg: StepConfig,
    cov: Vec<f64>,
    z: Vec<f64>,
    inc: Vec<f64>,
    order: Vec<usize>,
    group: Vec<usize>,
    zu: Vec<f64>,
    factorizer: Factorizer,
    pub stats: FactorStats,
}

impl NPointStepper {
    pub fn new(model: IsotropicModel, cfg: StepConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            model,
            cfg,
            cov: Vec::new(),
            z: Vec::new(),
            inc: Vec::new(),
            order: Vec::new(),
            group: Vec::new(),
            zu: Vec::new(),
            factorizer: Factorizer::new(),
            stats: FactorStats::default(),
        })
    }

    /// Advances `state` by one step. Particles at exactly the same position
    /// move together (coincidence is preserved by the flow).
    pub fn step(&mut self, state: &mut NPointState, noise: &mut NoiseSource) -> Result<()> {
        let d = self.model.d();
        let n = state.n();
        if state.d != d {
            return Err(Error::InvalidArgument(
                "state dimension differs from the model".into(),
            ));
        }
        if noise.len() != n {
            return Err(Error::InvalidArgument(
                "noise source has the wrong number of streams".into(),
            ));
        }
        self.z.resize(n * d, 0.0);
        noise.fill(&mut self.z);

        // groups of coincident particles: sort, then merge equal neighbours
        let pos = &state.positions;
        let point = |p: usize| &pos[p * d..(p + 1) * d];
        self.order.clear();
        self.order.extend(0..n);
        self.order.sort_unstable_by(|&a, &b| {
            point(a)
                .iter()
                .zip(point(b))
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        self.group.clear();
        self.group.resize(n, 0);
        let mut uniq: Vec<usize> = Vec::with_capacity(n);
        for (i, &p) in self.order.iter().enumerate() {
            if i == 0 || point(self.order[i - 1]) != point(p) {
                uniq.push(p);
            }
            self.group[p] = uniq.len() - 1;
        }
        // uniq[g] is the smallest index of its group; keep groups in index order
        let mut by_index: Vec<usize> = (0..uniq.len()).collect();
        by_index.sort_unstable_by_key(|&g| uniq[g]);
        let mut rank = vec![0usize; uniq.len()];
        for (r, &g) in by_index.iter().enumerate() {
            rank[g] = r;
        }
        let uniq: Vec<usize> = by_index.iter().map(|&g| uniq[g]).collect();
        for g in self.group.iter_mut() {
            *g = rank[*g];
        }

        let m = uniq.len();
        let sdt = self.cfg.dt.sqrt();
        self.inc.resize(m * d, 0.0);
        if m == 1 {
            let p = uniq[0];
            for i in 0..d {
                self.inc[i] = sdt * self.z[p * d + i];
            }
        } else {
            let nd = m * d;
            self.cov.resize(nd * nd, 0.0);
            covariance_upper(&self.model, pos, &uniq, &mut self.cov);
            let f = self.factorizer.factorize(&self.cov, nd, self.cfg.jitter)?;
            self.stats.record(f.route, f.clipped);
            self.zu.clear();
            for &p in &uniq {
                self.zu.extend_from_slice(&self.z[p * d..(p + 1) * d]);
            }
            self.zu.resize(nd.max(f.rank()), 0.0);
            f.apply(&self.zu, &mut self.inc[..nd]);
            for v in &mut self.inc[..nd] {
                *v *= sdt;
            }
        }
        for p in 0..n {
            let a = self.group[p];
            for i in 0..d {
                state.positions[p * d + i] += self.inc[a * d + i];
            }
        }
        state.step_count += 1;
        state.time = state.step_count as f64 * self.cfg.dt;
        if state.positions.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite position after step".into()));
        }
        Ok(())
    }
}

/// Upper triangle of the covariance of the increments of the points
/// `pos[idx]`, blocks in the order of `idx`. Pairs farther apart than
/// `FAR_FIELD * ell` get zero blocks.
fn covariance_upper(model: &IsotropicModel, pos: &[f64], idx: &[usize], cov: &mut [f64]) {
    let d = model.d();
    let nd = idx.len() * d;
    let inv = 1.0 / model.ell();
    let g = model.gamma();
    let cg = g - model.alpha();
    let far2 = FAR_FIELD * FAR_FIELD;
    let mut u = [0.0; crate::linalg::MAX_DIM];
    for (a, &p) in idx.iter().enumerate() {
        for i in 0..d {
            let row = (a * d + i) * nd + a * d;
            let blk = &mut cov[row..row + d];
            blk.iter_mut().for_each(|v| *v = 0.0);
            blk[i] = 1.0;
        }
        for (c, &q) in idx.iter().enumerate().skip(a + 1) {
            let mut r2 = 0.0;
            for i in 0..d {
                u[i] = (pos[p * d + i] - pos[q * d + i]) * inv;
                r2 += u[i] * u[i];
            }
            if r2 > far2 {
                for i in 0..d {
                    let row = (a * d + i) * nd + c * d;
                    cov[row..row + d].iter_mut().for_each(|v| *v = 0.0);
                }
                continue;
            }
            let e = (-0.5 * r2).exp();
            let diag = e * (1.0 - g * r2);
            let ec = e * cg;
            for i in 0..d {
                let row = (a * d + i) * nd + c * d;
                let blk = &mut cov[row..row + d];
                let s = ec * u[i];
                for (v, &uk) in blk.iter_mut().zip(&u[..d]) {
                    *v = s * uk;
                }
                blk[i] += diag;
            }
        }
    }
}

/// One n-point step from `state`.
pub fn npoint_step(
    state: &NPointState,
    model: &IsotropicModel,
    cfg: &StepConfig,
    noise: &mut NoiseSource,
) -> Result<NPointState> {
    let mut s = state.clone();
    NPointStepper::new(*model, *cfg)?.step(&mut s, noise)?;
    Ok(s)
}

/// Snapshots of one replicate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub snapshots: Vec<NPointState>,
    pub factor_stats: FactorStats,
}

/// Lexicographic order of the points, used to assign noise streams so that
/// permuting the inputs permutes the outputs.
pub fn canonical_order(d: usize, positions: &[f64]) -> Vec<usize> {
    let n = positions.len() / d;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        let (pa, pb) = (
            &positions[a * d..(a + 1) * d],
            &positions[b * d..(b + 1) * d],
        );
        for (x, y) in pa.iter().zip(pb) {
            match x.total_cmp(y) {
                std::cmp::Ordering::Equal => continue,
                o => return o,
            }
        }
        std::cmp::Ordering::Equal
    });
    idx
}

/// Converts save times into sorted, deduplicated step indices.
pub fn save_steps(cfg: &StepConfig, horizon: f64, save_times: &[f64]) -> Result<(u64, Vec<u64>)> {
    let total = cfg.steps_to(horizon)?;
    let mut steps = Vec::with_capacity(save_times.len());
    for &t in save_times {
        let k = cfg.steps_to(t)?;
        if k > total {
            return Err(Error::InvalidArgument(format!(
                "save time {t} exceeds the horizon {horizon}"
            )));
        }
        steps.push(k);
    }
    steps.sort_unstable();
    steps.dedup();
    Ok((total, steps))
}

/// Simulates replicate `replicate` from `initial` up to `horizon`, saving
/// the state at `save_times` (each a multiple of `dt`; time 0 allowed).
pub fn simulate_npoints(
    initial: &NPointState,
    model: &IsotropicModel,
    cfg: &StepConfig,
    horizon: f64,
    save_times: &[f64],
    replicate: u64,
) -> Result<Trajectory> {
    let d = model.d();
    if initial.d != d {
        return Err(Error::InvalidArgument(
            "initial state dimension differs from the model".into(),
        ));
    }
    let (total, steps) = save_steps(cfg, horizon, save_times)?;
    let n = initial.n();
    let order = canonical_order(d, &initial.positions);
    let mut state = NPointState::new(
        d,
        order
            .iter()
            .flat_map(|&p| initial.point(p).to_vec())
            .collect(),
    )?;
    let mut noise = NoiseSource::new(cfg.seed, replicate, n);
    let mut stepper = NPointStepper::new(*model, *cfg)?;
    let unpermute = |s: &NPointState| {
        let mut pos = vec![0.0; n * d];
        for (rank, &p) in order.iter().enumerate() {
            pos[p * d..(p + 1) * d].copy_from_slice(s.point(rank));
        }
        NPointState {
            d,
            positions: pos,
            time: s.time,
            step_count: s.step_count,
        }
    };
    let mut snapshots = Vec::with_capacity(steps.len());
    let mut next = 0;
    for k in 0..=total {
        if k > 0 {
            stepper.step(&mut state, &mut noise)?;
        }
        while next < steps.len() && steps[next] == k {
            snapshots.push(unpermute(&state));
            next += 1;
        }
    }
    Ok(Trajectory {
        snapshots,
        factor_stats: stepper.stats,
    })
}

/// Threshold below which the distance SDE uses its small-distance expansion.
const NEAR_ZERO: f64 = 1e-8;

/// One Euler-Maruyama step of
/// `d rho = (d-1)(1 - B_N(rho))/rho dt + sqrt(2 (1 - B_L(rho))) dW`
/// with standard normal input `z`. Zero is absorbing and negative
/// proposals are reflected.
pub fn distance_step(r: f64, model: &IsotropicModel, cfg: &StepConfig, z: f64) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    let dm1 = model.d() as f64 - 1.0;
    let (drift, diff) = if r < NEAR_ZERO * model.ell() {
        let (bl, bn) = model.beta_params();
        (dm1 * bn * r / 2.0, bl.sqrt() * r)
    } else {
        (
            dm1 * model.one_minus_b_n(r) / r,
            (2.0 * model.one_minus_b_l(r)).sqrt(),
        )
    };
    (r + drift * cfg.dt + diff * cfg.dt.sqrt() * z).abs()
}

/// Distance after `horizon` starting from `r0`, driven by `rng`.
pub fn simulate_distance(
    r0: f64,
    model: &IsotropicModel,
    cfg: &StepConfig,
    horizon: f64,
    rng: &mut Rng,
) -> Result<f64> {
    if !(r0 >= 0.0) {
        return Err(Error::InvalidArgument(
            "initial distance must be nonnegative".into(),
        ));
    }
    let k = cfg.steps_to(horizon)?;
    let mut r = r0;
    for _ in 0..k {
        r = distance_step(r, model, cfg, StandardNormal.sample(rng));
    }
    Ok(r)
}

/// `<xi . (phi(x), phi(y))>_t / t` along a two-point trajectory, with the
/// cross term carried with coefficient 2:
/// `<.>_t = ∫_0^t (|alpha|^2 + |beta|^2 + 2 alpha^T b(phi_s(x) - phi_s(y)) beta) ds`,
/// integrated by the trapezoid rule over the snapshots. The first entry is
/// skipped when `t = 0`.
pub fn quad_variation_curve(
    traj: &Trajectory,
    model: &IsotropicModel,
    xi: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let d = model.d();
    if xi.len() != 2 * d {
        return Err(Error::InvalidArgument(
            "direction must have length 2d".into(),
        ));
    }
    let norm2: f64 = xi.iter().map(|v| v * v).sum();
    if (norm2 - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidArgument(
            "direction must be a unit vector".into(),
        ));
    }
    let snaps = &traj.snapshots;
    if snaps
        .first()
        .map_or(true, |s| s.n() != 2 || s.step_count != 0)
    {
        return Err(Error::InvalidArgument(
            "need a two-point trajectory saved from time 0".into(),
        ));
    }
    let (alpha, beta) = xi.split_at(d);
    let base: f64 =
        alpha.iter().map(|v| v * v).sum::<f64>() + beta.iter().map(|v| v * v).sum::<f64>();
    let mut b = vec![0.0; d * d];
    let mut x = vec![0.0; d];
    let mut rate = |s: &NPointState| {
        for i in 0..d {
            x[i] = s.positions[i] - s.positions[d + i];
        }
        model.b_into(&x, &mut b);
        let mut cross = 0.0;
        for i in 0..d {
            for j in 0..d {
                cross += alpha[i] * beta[j] * b[i * d + j];
            }
        }
        base + 2.0 * cross
    };
    let mut out = Vec::with_capacity(snaps.len() - 1);
    let mut acc = 0.0;
    let mut prev = rate(&snaps[0]);
    for w in snaps.windows(2) {
        let cur = rate(&w[1]);
        acc += 0.5 * (w[1].time - w[0].time) * (prev + cur);
        prev = cur;
        if w[1].time > 0.0 {
            out.push((w[1].time, acc / w[1].time));
        }
    }
    Ok(out)
}

/// Writes `replicate,t,particle,x1..xd` rows.
pub fn write_csv<W: Write>(
    mut w: W,
    replicate: usize,
    traj: &Trajectory,
    header: bool,
) -> Result<()> {
    let Some(first) = traj.snapshots.first() else {
        return Ok(());
    };
    let d = first.d;
    if header {
        write!(w, "replicate,t,particle")?;
        for i in 1..=d {
            write!(w, ",x{i}")?;
        }
        writeln!(w)?;
    }
    for s in &traj.snapshots {
        for p in 0..s.n() {
            write!(w, "{replicate},{},{p}", s.time)?;
            for v in s.point(p) {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

const MAGIC: &[u8; 4] = b"IBF1";

/// Binary snapshots: `"IBF1"`, then `d`, `n`, `count` as little-endian
/// `u64`, then `count` records of `n d + 1` little-endian `f64` (time
/// followed by the flat positions).
pub fn write_binary<W: Write>(mut w: W, snapshots: &[&NPointState]) -> Result<()> {
    let (d, n) = snapshots.first().map_or((0, 0), |s| (s.d, s.n()));
    if snapshots.iter().any(|s| s.d != d || s.n() != n) {
        return Err(Error::InvalidArgument("snapshots differ in shape".into()));
    }
    w.write_all(MAGIC)?;
    for v in [d as u64, n as u64, snapshots.len() as u64] {
        w.write_all(&v.to_le_bytes())?;
    }
    for s in snapshots {
        w.write_all(&s.time.to_le_bytes())?;
        for v in &s.positions {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads the format written by [`write_binary`]. Step counts are not stored
/// and come back as zero.
pub fn read_binary<R: Read>(mut r: R) -> Result<Vec<NPointState>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::InvalidArgument("not an IBF1 snapshot file".into()));
    }
    let mut word = [0u8; 8];
    let mut next_u64 = |r: &mut R| -> Result<u64> {
        r.read_exact(&mut word)?;
        Ok(u64::from_le_bytes(word))
    };
    let d = next_u64(&mut r)? as usize;
    let n = next_u64(&mut r)? as usize;
    let count = next_u64(&mut r)? as usize;
    let mut out = Vec::with_capacity(count);
    let mut buf = [0u8; 8];
    for _ in 0..count {
        r.read_exact(&mut buf)?;
        let time = f64::from_le_bytes(buf);
        let mut positions = Vec::with_capacity(n * d);
        for _ in 0..n * d {
            r.read_exact(&mut buf)?;
            positions.push(f64::from_le_bytes(buf));
        }
        out.push(NPointState {
            d,
            positions,
            time,
            step_count: 0,
        });
    }
    Ok(out)
}
