//! Experiment drivers: each turns an [`ExperimentConfig`] into an
//! [`ExperimentReport`] whose pass flags encode the expected behavior of
//! the flow (dispersion, volume martingale, persistence, Lyapunov spectrum,
//! distance process, quadratic variation).

pub mod config;
pub mod report;
pub mod svg;
pub mod targets;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde_json::json;

pub use config::{apply_override, Experiment, ExperimentConfig, InitialMeasure, Options, TestSet};
pub use report::{
    Check, DataTable, ExperimentOutput, ExperimentReport, RunInfo, Series, SeriesPoint,
    SCHEMA_VERSION,
};

use crate::covmodel::IsotropicModel;
use crate::error::{Error, Result};
use crate::geometry::{self, SetDescriptor};
use crate::invariant::{persistence_lower_bound, second_moment_integral, PsiTable, RadialKernel};
use crate::linalg::FactorStats;
use crate::linearization::{
    lyapunov_estimate, sample_markers, second_moment_curve, volume_estimate, VolumeRun,
};
use crate::rng::{derive_seed, stream_rng};
use crate::simcore::{
    quad_variation_curve, save_steps, simulate_distance, simulate_npoints, NPointState,
};
use crate::stats::{ks_critical, ks_two_sample, mc_mean_se, median_with_se, Moments};

/// Sizes the global worker pool from `IBF_THREADS` (all cores when unset)
/// and returns the number of workers in use.
pub fn configure_threads() -> usize {
    if let Some(n) = std::env::var("IBF_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        // a pool that already exists keeps its size
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    rayon::current_num_threads()
}

/// Runs the experiment named in the config.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    match cfg.experiment {
        Experiment::Dispersion => run_dispersion_forward(cfg),
        Experiment::ImageDispersion => run_dispersion_image(cfg),
        Experiment::Martingale => run_martingale_suite(cfg),
        Experiment::Persistence => run_persistence_suite(cfg),
        Experiment::Lyapunov => run_lyapunov_suite(cfg),
        Experiment::DistanceCheck => run_distance_crosscheck(cfg),
        Experiment::QuadraticVariation => run_quadratic_variation(cfg),
    }
}

/// `n` i.i.d. draws from the initial measure for replicate `r`.
pub fn sample_initial(measure: &InitialMeasure, d: usize, n: usize, seed: u64, r: u64) -> Vec<f64> {
    match measure {
        InitialMeasure::Uniform { set } => sample_markers(set, n, seed, r),
        InitialMeasure::Gaussian { scale } => {
            let mut rng = stream_rng(derive_seed(seed, r), 0x4741_5553);
            (0..n * d)
                .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect()
        }
    }
}

fn moments(xs: impl IntoIterator<Item = f64>) -> Moments {
    let mut m = Moments::default();
    xs.into_iter().for_each(|x| m.push(x));
    m
}

fn point(t: f64, m: &Moments, target: Option<f64>) -> SeriesPoint {
    SeriesPoint {
        t,
        estimate: m.mean(),
        std_error: m.std_error(),
        target,
    }
}

fn saved_times(cfg: &ExperimentConfig, times: &[f64]) -> Result<Vec<f64>> {
    let step = cfg.step_config()?;
    let (_, steps) = save_steps(&step, cfg.horizon, times)?;
    Ok(steps.iter().map(|&k| k as f64 * step.dt).collect())
}

fn uniform_set(cfg: &ExperimentConfig) -> Result<&SetDescriptor> {
    match &cfg.initial {
        Some(InitialMeasure::Uniform { set }) => Ok(set),
        _ => Err(Error::Config(format!(
            "{} needs `initial` to be a uniform measure on a set",
            cfg.experiment.name()
        ))),
    }
}

fn index_of(times: &[f64], t: f64) -> Option<usize> {
    times
        .iter()
        .position(|&s| (s - t).abs() <= 1e-9 * t.abs().max(1.0))
}

/// Flags whether `v` decreases strictly along the sequence.
fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

/// Theorem of forward dispersion: the empirical law of `phi_t(x_i)/sqrt(t)`
/// approaches the standard Gaussian.
pub fn run_dispersion_forward(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let model = cfg.model;
    if !model.is_transient() {
        return Err(Error::Refused(format!(
            "model (d = {}, alpha = {}) is not known to be transient; forward dispersion needs transience",
            model.d(),
            model.alpha()
        )));
    }
    let measure = cfg
        .initial
        .as_ref()
        .ok_or_else(|| Error::Config("dispersion needs an initial measure".into()))?;
    if cfg.test_sets.is_empty() {
        return Err(Error::Config(
            "dispersion needs at least one test set".into(),
        ));
    }
    if cfg.n_particles == 0 || cfg.save_times.iter().any(|&t| t <= 0.0) {
        return Err(Error::Config(
            "dispersion needs particles and positive save times".into(),
        ));
    }
    let d = model.d();
    let n = cfg.n_particles;
    let step = cfg.step_config()?;
    let times = saved_times(cfg, &cfg.save_times)?;

    // per replicate: [time][set] fractions
    let per_rep: Vec<(Vec<Vec<f64>>, FactorStats)> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let init = NPointState::new(d, sample_initial(measure, d, n, cfg.seed, r as u64))?;
            let traj = simulate_npoints(&init, &model, &step, cfg.horizon, &times, r as u64)?;
            let l = traj
                .snapshots
                .iter()
                .zip(&times)
                .map(|(s, &t)| {
                    cfg.test_sets
                        .iter()
                        .map(|a| {
                            (0..n)
                                .filter(|&p| a.contains_scaled(s.point(p), t.sqrt()))
                                .count() as f64
                                / n as f64
                        })
                        .collect()
                })
                .collect();
            Ok((l, traj.factor_stats))
        })
        .collect::<Result<_>>()?;

    let mut report = ExperimentReport::new(cfg);
    let mut stats = FactorStats::default();
    per_rep.iter().for_each(|(_, s)| stats.merge(s));
    report.factor_stats = Some(stats);
    let mut table = DataTable::new("fractions", &["replicate", "t", "set", "l_hat"]);
    for (r, (l, _)) in per_rep.iter().enumerate() {
        for (k, &t) in times.iter().enumerate() {
            for (j, v) in l[k].iter().enumerate() {
                table.rows.push(vec![r as f64, t, j as f64, *v]);
            }
        }
    }
    for (j, a) in cfg.test_sets.iter().enumerate() {
        let label = a.label();
        let target = targets::gaussian_mass(
            a,
            d,
            cfg.options.target_samples,
            derive_seed(cfg.seed, 0x7A26_0000 + j as u64),
        );
        let mut mean_pts = Vec::new();
        let mut err_pts = Vec::new();
        for (k, &t) in times.iter().enumerate() {
            let m = moments(per_rep.iter().map(|(l, _)| l[k][j]));
            let e = moments(
                per_rep
                    .iter()
                    .map(|(l, _)| (l[k][j] - target.value).powi(2)),
            );
            mean_pts.push(point(t, &m, Some(target.value)));
            err_pts.push(point(t, &e, None));
        }
        let tail: Vec<f64> = err_pts
            .iter()
            .rev()
            .take(3)
            .rev()
            .map(|p| p.estimate)
            .collect();
        let last = *err_pts.last().expect("at least one save time");
        report.push_check(Check::custom(
            format!("l2_decreasing[{label}]"),
            "L2 error strictly decreasing over the last three save times (target: value at the first of them)",
            last.estimate,
            last.std_error,
            tail[0],
            tail.len() >= 2 && strictly_decreasing(&tail),
        ));
        let fin = *mean_pts.last().expect("at least one save time");
        report.push_check(Check::within_se(
            format!("final_mean[{label}]"),
            fin.estimate,
            fin.std_error.hypot(target.std_error),
            target.value,
            3.0,
        ));
        report.series.push(Series {
            name: format!("l_hat[{label}]"),
            points: mean_pts,
        });
        report.series.push(Series {
            name: format!("l2_error[{label}]"),
            points: err_pts,
        });
        if target.std_error > 0.0 {
            report.notes.push(format!(
                "target for {label} by Monte Carlo: {} (SE {:e})",
                target.value, target.std_error
            ));
        }
    }
    report.notes.push(
        "convergence is tested on the listed sets only; no uniformity over Borel sets is claimed"
            .into(),
    );
    Ok(ExperimentOutput {
        report,
        tables: vec![table],
    })
}

fn require_expanding(model: &IsotropicModel, what: &str) -> Result<()> {
    if model.top_lyapunov() <= 0.0 {
        return Err(Error::Refused(format!(
            "{what} needs a positive top Lyapunov exponent, model has {}",
            model.top_lyapunov()
        )));
    }
    Ok(())
}

/// Markers uniform in the initial set, propagated with their Jacobians.
pub fn volume_run(cfg: &ExperimentConfig) -> Result<VolumeRun> {
    cfg.validate()?;
    let set = uniform_set(cfg)?;
    let step = cfg.step_config()?;
    volume_estimate(
        set,
        &cfg.model,
        &step,
        cfg.options.scheme,
        cfg.horizon,
        &cfg.save_times,
        cfg.n_particles,
        cfg.replicates,
    )
}

/// Image dispersion: the part of `phi_t(B)` inside `sqrt(t) A` approaches
/// the Gaussian mass of `A` times the image volume.
pub fn run_dispersion_image(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    require_expanding(&cfg.model, "image dispersion")?;
    if cfg.test_sets.is_empty() {
        return Err(Error::Config(
            "image dispersion needs at least one test set".into(),
        ));
    }
    let run = volume_run(cfg)?;
    dispersion_image_report(cfg, &run)
}

/// Report of [`run_dispersion_image`] from an existing volume run.
pub fn dispersion_image_report(
    cfg: &ExperimentConfig,
    run: &VolumeRun,
) -> Result<ExperimentOutput> {
    let d = run.model.d();
    let n = run.n_markers as f64;
    let lam = run.measure;
    let thresholds = &cfg.options.omega_thresholds;
    let proxy = cfg.options.persistence_threshold;
    let mut report = ExperimentReport::new(cfg);
    report.factor_stats = Some(run.factor_stats);
    let mut table = DataTable::new(
        "image",
        &["replicate", "t", "set", "volume", "intersection"],
    );

    let mut omega = vec![Vec::new(); thresholds.len()];
    for (k, &t) in run.times.iter().enumerate() {
        let vols = run.volumes_at(k);
        for (i, &thr) in thresholds.iter().enumerate() {
            let m = moments(vols.iter().map(|&v| if v > thr * lam { 1.0 } else { 0.0 }));
            omega[i].push(point(t, &m, None));
        }
    }
    for (i, &thr) in thresholds.iter().enumerate() {
        report.series.push(Series {
            name: format!("omega_fraction@{thr}"),
            points: std::mem::take(&mut omega[i]),
        });
    }

    for (j, a) in cfg.test_sets.iter().enumerate() {
        let label = a.label();
        let phi = targets::gaussian_mass(
            a,
            d,
            cfg.options.target_samples,
            derive_seed(cfg.seed, 0x7A26_0000 + j as u64),
        );
        let mut sq = Vec::new();
        let mut ratios: Vec<Vec<SeriesPoint>> = vec![Vec::new(); thresholds.len()];
        let mut proxy_ratio = Vec::new();
        for (k, &t) in run.times.iter().enumerate() {
            let sq_t = t.sqrt();
            let mut sq_m = Moments::default();
            let mut per_thr = vec![Moments::default(); thresholds.len()];
            let mut proxy_m = Moments::default();
            for (r, rep) in run.replicates.iter().enumerate() {
                let dets = &rep.determinants[k];
                let pos = &rep.positions[k];
                let inside: Vec<bool> = (0..run.n_markers)
                    .map(|p| a.contains_scaled(&pos[p * d..(p + 1) * d], sq_t))
                    .collect();
                let (mut s, mut s2, mut hit) = (0.0, 0.0, 0.0);
                for (p, &det) in dets.iter().enumerate() {
                    let g = det * (if inside[p] { 1.0 } else { 0.0 } - phi.value);
                    s += g;
                    s2 += g * g;
                    if inside[p] {
                        hit += det;
                    }
                }
                // off-diagonal pair average: unbiased for E[(∫_B det f)^2]
                sq_m.push(lam * lam * (s * s - s2) / (n * (n - 1.0)));
                let vol = run.volume(r, k);
                let inter = lam * (hit / n);
                table.rows.push(vec![r as f64, t, j as f64, vol, inter]);
                for (i, &thr) in thresholds.iter().enumerate() {
                    if vol > thr * lam {
                        per_thr[i].push(inter / vol);
                    }
                }
                if vol > proxy * lam {
                    proxy_m.push(inter / vol);
                }
            }
            sq.push(point(t, &sq_m, Some(0.0)));
            for (i, m) in per_thr.iter().enumerate() {
                ratios[i].push(point(t, m, Some(phi.value)));
            }
            proxy_ratio.push(proxy_m);
        }
        let (first, last) = (sq[0], *sq.last().expect("at least one save time"));
        let both_zero = first.estimate == 0.0 && last.estimate == 0.0 && last.std_error == 0.0;
        report.push_check(Check::custom(
            format!("sq_diff_decreasing[{label}]"),
            "squared difference at the last save time below its value at the first (or both identically 0)",
            last.estimate,
            last.std_error,
            first.estimate,
            both_zero || last.estimate < first.estimate,
        ));
        let need = cfg.options.min_conditioned.max(2);
        match proxy_ratio.iter().rposition(|m| m.n >= need as u64) {
            Some(k) => {
                let pm = &proxy_ratio[k];
                let mut c = Check::within_se(
                    format!("ratio[{label}]"),
                    pm.mean(),
                    pm.std_error().hypot(phi.std_error),
                    phi.value,
                    3.0,
                );
                c.rule = format!(
                    "{} at t = {}, the last save time with at least {need} replicates above the volume threshold",
                    c.rule, run.times[k]
                );
                report.push_check(c);
            }
            None => report.push_check(Check::custom(
                format!("ratio[{label}]"),
                format!("needs at least {need} replicates above the volume threshold"),
                f64::NAN,
                f64::NAN,
                phi.value,
                false,
            )),
        }
        report.series.push(Series {
            name: format!("sq_diff[{label}]"),
            points: sq,
        });
        for (i, &thr) in thresholds.iter().enumerate() {
            report.series.push(Series {
                name: format!("ratio[{label}]@{thr}"),
                points: std::mem::take(&mut ratios[i]),
            });
        }
    }
    report.notes.push(format!(
        "conditioning on the survival event is approximated by V_t > {proxy} λ(B); ratios at the other thresholds are reported for sensitivity"
    ));
    Ok(ExperimentOutput {
        report,
        tables: vec![table],
    })
}

/// Volume martingale: `E V_t = λ(A)` and the second moment against `∫∫ psi`.
pub fn run_martingale_suite(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let run = volume_run(cfg)?;
    martingale_report(cfg, &run)
}

fn volume_table(run: &VolumeRun) -> DataTable {
    let mut table = DataTable::new("volumes", &["replicate", "t", "volume"]);
    for r in 0..run.replicates.len() {
        for (k, &t) in run.times.iter().enumerate() {
            table.rows.push(vec![r as f64, t, run.volume(r, k)]);
        }
    }
    table
}

/// Report of [`run_martingale_suite`] from an existing volume run.
pub fn martingale_report(cfg: &ExperimentConfig, run: &VolumeRun) -> Result<ExperimentOutput> {
    let lam = run.measure;
    let mut report = ExperimentReport::new(cfg);
    report.factor_stats = Some(run.factor_stats);
    let curve = run.curve();
    report.series.push(Series {
        name: "volume".into(),
        points: curve
            .iter()
            .map(|c| SeriesPoint {
                t: c.t,
                estimate: c.estimate,
                std_error: c.std_error,
                target: Some(lam),
            })
            .collect(),
    });
    if let Some(k) = index_of(&run.times, 0.0) {
        let c = curve[k];
        report.push_check(Check::custom(
            "volume@0",
            "estimate equals λ(A) exactly with SE 0",
            c.estimate,
            c.std_error,
            lam,
            c.estimate == lam && c.std_error == 0.0,
        ));
    }
    for &t in &cfg.options.check_times {
        let k = index_of(&run.times, t)
            .ok_or_else(|| Error::Config(format!("check time {t} is not a save time")))?;
        let c = curve[k];
        report.push_check(Check::within_se(
            format!("volume@{t}"),
            c.estimate,
            c.std_error,
            lam,
            3.0,
        ));
    }

    let sm = second_moment_curve(run);
    let t2 = cfg.options.second_moment_time;
    let k2 = index_of(&run.times, t2);
    let mut target2 = None;
    if run.model.top_lyapunov() <= 0.0 {
        report
            .notes
            .push("second moment not compared: top Lyapunov exponent <= 0".into());
    } else if let Some(k) = k2 {
        let table = PsiTable::new(&run.model)?;
        let target = second_moment_integral(
            &table,
            &run.set,
            cfg.options.pair_samples,
            derive_seed(cfg.seed, 0x5053_4932),
        )?;
        let tol = cfg.options.second_moment_tolerance;
        let est = sm[k];
        report.push_check(Check::custom(
            format!("second_moment@{t2}"),
            format!("|estimate / target - 1| <= {tol}"),
            est.estimate,
            est.std_error,
            target.estimate,
            (est.estimate / target.estimate - 1.0).abs() <= tol,
        ));
        report.notes.push(format!(
            "psi pair integral by Monte Carlo: {} (SE {:e})",
            target.estimate, target.std_error
        ));
        target2 = Some(target.estimate);
    } else {
        report.notes.push(format!(
            "second moment not compared: {t2} is not a save time"
        ));
    }
    report.series.push(Series {
        name: "second_moment".into(),
        points: sm
            .iter()
            .enumerate()
            .map(|(k, c)| SeriesPoint {
                t: c.t,
                estimate: c.estimate,
                std_error: c.std_error,
                target: if Some(k) == k2 { target2 } else { None },
            })
            .collect(),
    });
    Ok(ExperimentOutput {
        report,
        tables: vec![volume_table(run)],
    })
}

/// Persistence of volume (or, for contracting models, its collapse).
pub fn run_persistence_suite(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let run = volume_run(cfg)?;
    persistence_report(cfg, &run)
}

/// Report of [`run_persistence_suite`] from an existing volume run.
pub fn persistence_report(cfg: &ExperimentConfig, run: &VolumeRun) -> Result<ExperimentOutput> {
    let model = run.model;
    let lam = run.measure;
    let opts = &cfg.options;
    let thr = opts.persistence_threshold * lam;
    let mut report = ExperimentReport::new(cfg);
    report.factor_stats = Some(run.factor_stats);
    let kt = run.times.len() - 1;
    let t_end = run.times[kt];
    let reps = run.replicates.len() as f64;

    report.series.push(Series {
        name: format!("survival@{}", opts.persistence_threshold),
        points: (0..run.times.len())
            .map(|k| {
                let m = moments(
                    run.volumes_at(k)
                        .into_iter()
                        .map(|v| if v > thr { 1.0 } else { 0.0 }),
                );
                point(run.times[k], &m, None)
            })
            .collect(),
    });

    let vols = run.volumes_at(kt);
    if model.volume_persists() {
        let small = vols.iter().filter(|&&v| v < thr).count() as f64 / reps;
        report.push_check(Check::custom(
            format!("small_volume_fraction@{t_end}"),
            format!(
                "fraction of replicates with V < {} λ(A) below {}",
                opts.persistence_threshold, opts.persistence_fraction
            ),
            small,
            (small * (1.0 - small) / reps).sqrt(),
            opts.persistence_fraction,
            small < opts.persistence_fraction,
        ));
        let table = PsiTable::new(&model)?;
        let bound = persistence_lower_bound(
            &table,
            &run.set,
            opts.pair_samples,
            derive_seed(cfg.seed, 0x5053_4932),
        )?;
        let surv = vols.iter().filter(|&&v| v > thr).count() as f64 / reps;
        let se = (surv * (1.0 - surv) / reps).sqrt();
        let combined = se.hypot(bound.std_error);
        report.push_check(Check::custom(
            format!("survival_vs_bound@{t_end}"),
            "P(V > threshold) >= lower bound - 3 SE (SE of the difference)",
            surv,
            combined,
            bound.bound,
            surv >= bound.bound - 3.0 * combined,
        ));
    } else if model.top_lyapunov() < 0.0 {
        let k1 = index_of(&run.times, opts.contraction_from).ok_or_else(|| {
            Error::Config(format!("{} is not a save time", opts.contraction_from))
        })?;
        let ratios: Vec<f64> = (0..run.replicates.len())
            .map(|r| run.volume(r, kt) / run.volume(r, k1))
            .collect();
        let (med, se) = median_with_se(&ratios)?;
        report.push_check(Check::custom(
            format!("median_ratio@{t_end}/{}", opts.contraction_from),
            format!("median of V_T / V_t0 <= {}", opts.contraction_factor),
            med,
            se,
            opts.contraction_factor,
            med <= opts.contraction_factor,
        ));
        report.series.push(Series {
            name: "median_volume".into(),
            points: (0..run.times.len())
                .map(|k| {
                    let (m, s) = median_with_se(&run.volumes_at(k)).expect("replicates present");
                    SeriesPoint {
                        t: run.times[k],
                        estimate: m,
                        std_error: s,
                        target: None,
                    }
                })
                .collect(),
        });
    } else {
        report.notes.push(
            "model is outside the persistence and contraction regimes; survival is reported without assertions".into(),
        );
    }
    Ok(ExperimentOutput {
        report,
        tables: vec![volume_table(run)],
    })
}

/// Lyapunov spectrum against `lambda_i = (d-i) beta_N/2 - i beta_L/2`.
pub fn run_lyapunov_suite(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let model = cfg.model;
    let step = cfg.step_config()?;
    let est = lyapunov_estimate(
        &model,
        cfg.horizon,
        &step,
        cfg.replicates,
        cfg.options.reorth_every,
        cfg.options.scheme,
    )?;
    let mut report = ExperimentReport::new(cfg);
    for i in 0..model.d() {
        report.push_check(Check::within_se_or_relative(
            format!("lambda_{}", i + 1),
            est.estimates[i],
            est.std_errors[i],
            est.targets[i],
            3.0,
            cfg.options.relative_tolerance,
        ));
    }
    report.series.push(Series {
        name: "exponents".into(),
        points: (0..model.d())
            .map(|i| SeriesPoint {
                t: (i + 1) as f64,
                estimate: est.estimates[i],
                std_error: est.std_errors[i],
                target: Some(est.targets[i]),
            })
            .collect(),
    });
    if model.is_volume_preserving() {
        let sums: Vec<f64> = est.per_replicate.iter().map(|v| v.iter().sum()).collect();
        let (m, se) = mc_mean_se(&sums)?;
        // the sum vanishes identically; allow for rounding when all replicates agree
        report.push_check(Check::custom(
            "exponent_sum",
            "|estimate| <= max(3 SE, 1e-10)",
            m,
            se,
            0.0,
            m.abs() <= (3.0 * se).max(1e-10),
        ));
    }
    report
        .notes
        .push("the series index t is the exponent number i".into());
    let mut table = DataTable::new("exponents", &["replicate", "i", "lambda"]);
    for (r, v) in est.per_replicate.iter().enumerate() {
        for (i, l) in v.iter().enumerate() {
            table.rows.push(vec![r as f64, (i + 1) as f64, *l]);
        }
    }
    Ok(ExperimentOutput {
        report,
        tables: vec![table],
    })
}

fn pair_at(d: usize, sep: f64) -> Vec<f64> {
    let mut v = vec![0.0; 2 * d];
    v[d] = sep;
    v
}

/// Law of `|phi_t(x) - phi_t(y)|` from the two-point motion against the
/// one-dimensional distance diffusion.
pub fn run_distance_crosscheck(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let model = cfg.model;
    let d = model.d();
    let step = cfg.step_config()?;
    let reps = cfg.replicates;
    let mut report = ExperimentReport::new(cfg);
    let mut table = DataTable::new(
        "distances",
        &["separation", "replicate", "two_point", "distance_sde"],
    );
    let mut stats = FactorStats::default();
    let mut two_pts = Vec::new();
    let mut one_pts = Vec::new();
    for (si, &sep) in cfg.options.separations.iter().enumerate() {
        let r0 = sep * model.ell();
        let two: Vec<(f64, FactorStats)> = (0..reps)
            .into_par_iter()
            .map(|r| {
                let init = NPointState::new(d, pair_at(d, r0))?;
                let traj = simulate_npoints(
                    &init,
                    &model,
                    &step,
                    cfg.horizon,
                    &[cfg.horizon],
                    (si * reps + r) as u64,
                )?;
                let s = &traj.snapshots[0];
                Ok((geometry::dist(s.point(0), s.point(1)), traj.factor_stats))
            })
            .collect::<Result<_>>()?;
        let one: Vec<f64> = (0..reps)
            .into_par_iter()
            .map(|r| {
                let mut rng = stream_rng(derive_seed(cfg.seed, 0xD157_0000 + si as u64), r as u64);
                simulate_distance(r0, &model, &step, cfg.horizon, &mut rng)
            })
            .collect::<Result<_>>()?;
        two.iter().for_each(|(_, s)| stats.merge(s));
        let two: Vec<f64> = two.into_iter().map(|(v, _)| v).collect();
        let ks = ks_two_sample(&two, &one)?;
        let crit = ks_critical(reps, reps, cfg.options.ks_level)?;
        report.push_check(Check::custom(
            format!("ks[separation={sep}]"),
            format!(
                "two-sample KS statistic below the {} critical value",
                cfg.options.ks_level
            ),
            ks,
            0.0,
            crit,
            ks < crit,
        ));
        let (m2, s2) = mc_mean_se(&two)?;
        let (m1, s1) = mc_mean_se(&one)?;
        two_pts.push(SeriesPoint {
            t: sep,
            estimate: m2,
            std_error: s2,
            target: Some(m1),
        });
        one_pts.push(SeriesPoint {
            t: sep,
            estimate: m1,
            std_error: s1,
            target: None,
        });
        for r in 0..reps {
            table.rows.push(vec![sep, r as f64, two[r], one[r]]);
        }
    }
    report.series.push(Series {
        name: "mean_distance_two_point".into(),
        points: two_pts,
    });
    report.series.push(Series {
        name: "mean_distance_sde".into(),
        points: one_pts,
    });
    report.factor_stats = Some(stats);
    report
        .notes
        .push("series index t is the initial separation in units of ell".into());
    Ok(ExperimentOutput {
        report,
        tables: vec![table],
    })
}

/// Normalized quadratic variation `<psi>_t / t` of the Cramér-Wold
/// projection of the two-point motion.
pub fn run_quadratic_variation(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let model = cfg.model;
    let d = model.d();
    let step = cfg.step_config()?;
    let (total, _) = save_steps(&step, cfg.horizon, &[])?;
    let every: Vec<f64> = (0..=total).map(|k| k as f64 * step.dt).collect();
    let report_times = saved_times(cfg, &cfg.save_times)?;
    let mut report = ExperimentReport::new(cfg);
    let s2 = std::f64::consts::FRAC_1_SQRT_2;

    // coincident points, xi = (e1, -e1)/sqrt 2: the projection vanishes
    let mut xi = vec![0.0; 2 * d];
    xi[0] = s2;
    xi[d] = -s2;
    let init = NPointState::new(d, vec![0.0; 2 * d])?;
    let traj = simulate_npoints(&init, &model, &step, cfg.horizon, &every, 0)?;
    let degenerate = quad_variation_curve(&traj, &model, &xi)?;
    let worst = degenerate.iter().map(|p| p.1.abs()).fold(0.0, f64::max);
    report.push_check(Check::custom(
        "degenerate",
        "max over t of |<psi>_t / t| equals 0 exactly",
        worst,
        0.0,
        0.0,
        worst == 0.0,
    ));

    xi[d] = s2;
    let transient = model.is_transient();
    let mut table = DataTable::new(
        "quadratic_variation",
        &["separation", "replicate", "t", "qv_over_t"],
    );
    for (si, &sep) in cfg.options.separations.iter().enumerate() {
        let curves: Vec<Vec<(f64, f64)>> = (0..cfg.replicates)
            .into_par_iter()
            .map(|r| {
                let init = NPointState::new(d, pair_at(d, sep * model.ell()))?;
                let traj = simulate_npoints(
                    &init,
                    &model,
                    &step,
                    cfg.horizon,
                    &every,
                    (1 + si * cfg.replicates + r) as u64,
                )?;
                let c = quad_variation_curve(&traj, &model, &xi)?;
                Ok(report_times
                    .iter()
                    .filter_map(|&t| {
                        c.iter()
                            .find(|p| (p.0 - t).abs() <= 1e-9 * t.max(1.0))
                            .copied()
                    })
                    .collect())
            })
            .collect::<Result<_>>()?;
        let times: Vec<f64> = curves[0].iter().map(|p| p.0).collect();
        let pts: Vec<SeriesPoint> = (0..times.len())
            .map(|k| point(times[k], &moments(curves.iter().map(|c| c[k].1)), Some(1.0)))
            .collect();
        for (r, c) in curves.iter().enumerate() {
            for p in c {
                table.rows.push(vec![sep, r as f64, p.0, p.1]);
            }
        }
        if let Some(last) = pts.last() {
            if transient {
                report.push_check(Check::custom(
                    format!("qv[separation={sep}]"),
                    "|estimate - 1| <= 0.05 at the last save time",
                    last.estimate,
                    last.std_error,
                    1.0,
                    (last.estimate - 1.0).abs() <= 0.05,
                ));
            }
        }
        report.series.push(Series {
            name: format!("qv[separation={sep}]"),
            points: pts,
        });
    }
    if !transient {
        report.notes.push(
            "model is not known to be transient; convergence to 1 is reported, not asserted".into(),
        );
    }
    Ok(ExperimentOutput {
        report,
        tables: vec![table],
    })
}

/// Small-distance exponent and far-field limit of psi for each model.
pub fn psi_asymptotics_report(
    models: &[IsotropicModel],
    tolerance: f64,
) -> Result<ExperimentOutput> {
    let mut report = ExperimentReport::standalone(
        "psi_asymptotics",
        json!({ "models": models, "tolerance": tolerance }),
    );
    let mut table = DataTable::new(
        "psi_asymptotics",
        &["d", "alpha", "ell", "fitted", "target", "psi_far"],
    );
    for m in models {
        let a = crate::invariant::check_asymptotics(m, tolerance)?;
        let tag = format!("d={},alpha={}", m.d(), m.alpha());
        report.push_check(Check::custom(
            format!("exponent[{tag}]"),
            format!("|fitted - (d-1) beta_N/beta_L + (d+1)| <= {tolerance}"),
            a.fitted_exponent,
            a.fit_residual,
            a.target_exponent,
            a.exponent_pass,
        ));
        report.push_check(Check::custom(
            format!("far_field[{tag}]"),
            "|psi(50 ell) - 1| <= 1e-6",
            a.psi_at_max,
            0.0,
            1.0,
            a.limit_pass,
        ));
        table.rows.push(vec![
            m.d() as f64,
            m.alpha(),
            m.ell(),
            a.fitted_exponent,
            a.target_exponent,
            a.psi_at_max,
        ]);
    }
    report
        .notes
        .push("the standard error column of the exponent checks holds the fit residual".into());
    Ok(ExperimentOutput {
        report,
        tables: vec![table],
    })
}

/// Cylinder kernel ratio against its one-dimensional bound on a grid of
/// half-lengths and radii, using the monotone majorant of psi.
pub fn cylinder_ratio_report(
    model: &IsotropicModel,
    half_lengths: &[f64],
    deltas: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<ExperimentOutput> {
    let table = PsiTable::new(model)?;
    let h = table.majorant_kernel();
    let mut report = ExperimentReport::standalone(
        "cylinder_ratio",
        json!({ "model": model, "half_lengths": half_lengths, "deltas": deltas, "n_samples": n_samples, "seed": seed }),
    );
    let mut out = DataTable::new(
        "cylinder_ratio",
        &["half_length", "delta", "estimate", "std_error", "reference"],
    );
    for (i, &l) in half_lengths.iter().enumerate() {
        for (j, &delta) in deltas.iter().enumerate() {
            let s = derive_seed(seed, (i * deltas.len() + j) as u64);
            let r = geometry::cylinder_kernel_ratio(
                &h,
                model.d(),
                l * model.ell(),
                delta * model.ell(),
                n_samples,
                s,
            )?;
            report.push_check(Check::custom(
                format!("ratio[L={l},delta={delta}]"),
                "estimate <= reference + 3 SE",
                r.estimate,
                r.std_error,
                r.reference,
                r.estimate <= r.reference + 3.0 * r.std_error,
            ));
            out.rows
                .push(vec![l, delta, r.estimate, r.std_error, r.reference]);
        }
    }
    report.notes.push("half-lengths and radii are in units of ell; the kernel is the nonincreasing majorant of psi".into());
    Ok(ExperimentOutput {
        report,
        tables: vec![out],
    })
}

/// Segment extraction from a polyline with its guarantees checked, and
/// optionally the piecewise-versus-straight kernel comparison.
pub fn extraction_report(
    polyline: &[geometry::Segment],
    length: f64,
    domain: &SetDescriptor,
    kernel: Option<&dyn RadialKernel>,
    n_samples: usize,
    seed: u64,
) -> Result<ExperimentOutput> {
    let ex = geometry::extract_segments(polyline, length, domain)?;
    let mut report = ExperimentReport::standalone(
        "extract",
        json!({ "polyline": polyline, "length": length, "domain": domain, "n_samples": n_samples, "seed": seed }),
    );
    let n = ex.segments.len() as f64;
    report.push_check(Check::custom(
        "total_length",
        "n l >= L / 7",
        n * ex.segment_length,
        0.0,
        length / 7.0,
        n * ex.segment_length >= length / 7.0,
    ));
    let mut min_gap = f64::INFINITY;
    for i in 0..ex.segments.len() {
        for j in i + 1..ex.segments.len() {
            min_gap = min_gap
                .min(ex.segments[i].distance_to_segment(&ex.segments[j]) - 2.0 * ex.bar_delta);
        }
    }
    report.push_check(Check::custom(
        "disjoint",
        "min pairwise segment distance - 2 bar_delta > 0",
        min_gap,
        0.0,
        0.0,
        min_gap > 0.0,
    ));
    let mut outside = 0usize;
    let per = 10_000;
    for (i, s) in ex.segments.iter().enumerate() {
        let c = SetDescriptor::piecewise(vec![s.clone()], ex.bar_delta)?;
        let mut rng = stream_rng(seed, i as u64);
        for _ in 0..per {
            if !domain.contains(&c.sample_uniform(&mut rng)) {
                outside += 1;
            }
        }
    }
    report.push_check(Check::custom(
        "contained",
        format!("all of {per} uniform points per fattened segment lie in the domain"),
        outside as f64,
        0.0,
        0.0,
        outside == 0,
    ));
    if let Some(h) = kernel {
        if ex.segments.len() >= 2 {
            let delta = 0.5 * ex.bar_delta;
            let c = geometry::piecewise_vs_straight(
                h,
                &ex.segments,
                delta,
                n_samples,
                derive_seed(seed, 0xC0DE),
            )?;
            report.push_check(Check::custom(
                "piecewise_vs_straight",
                "piecewise ratio <= straight ratio + 3 SE of the difference",
                c.piecewise,
                c.difference_se,
                c.straight,
                c.piecewise <= c.straight + 3.0 * c.difference_se,
            ));
        }
    }
    let mut table = DataTable::new("segments", &["slab", "ax", "ay", "bx", "by"]);
    if domain.dim() == 2 {
        for (s, slab) in ex.segments.iter().zip(&ex.slabs) {
            table
                .rows
                .push(vec![*slab as f64, s.a[0], s.a[1], s.b[0], s.b[1]]);
        }
    }
    report.notes.push(format!(
        "{} segments of length {} with bar_delta {} (effective L {})",
        ex.segments.len(),
        ex.segment_length,
        ex.bar_delta,
        ex.effective_length
    ));
    Ok(ExperimentOutput {
        report,
        tables: if domain.dim() == 2 {
            vec![table]
        } else {
            Vec::new()
        },
    })
}
