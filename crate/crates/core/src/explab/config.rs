//! Experiment configuration: TOML files with `--set key=value` overrides.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::covmodel::IsotropicModel;
use crate::error::{Error, Result};
use crate::geometry::SetDescriptor;
use crate::linearization::JacobianScheme;
use crate::simcore::StepConfig;

/// Experiment drivers available through [`super::run_experiment`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Dispersion,
    ImageDispersion,
    Martingale,
    Persistence,
    Lyapunov,
    DistanceCheck,
    QuadraticVariation,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Dispersion => "dispersion",
            Experiment::ImageDispersion => "image_dispersion",
            Experiment::Martingale => "martingale",
            Experiment::Persistence => "persistence",
            Experiment::Lyapunov => "lyapunov",
            Experiment::DistanceCheck => "distance_check",
            Experiment::QuadraticVariation => "quadratic_variation",
        }
    }
}

/// Target set for the dispersion experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestSet {
    /// `{x : x_1 <= a}`
    HalfSpace {
        a: f64,
    },
    WholeSpace,
    Empty,
    Set {
        set: SetDescriptor,
    },
}

impl TestSet {
    pub fn label(&self) -> String {
        match self {
            TestSet::HalfSpace { a } => format!("half_space(x1<={a})"),
            TestSet::WholeSpace => "whole_space".into(),
            TestSet::Empty => "empty".into(),
            TestSet::Set { set } => match set {
                SetDescriptor::Ball { radius, .. } => format!("ball(r={radius})"),
                SetDescriptor::Box { .. } => "box".into(),
                SetDescriptor::Cylinder { .. } => "cylinder".into(),
                SetDescriptor::PiecewiseCylinder { .. } => "piecewise_cylinder".into(),
            },
        }
    }

    /// Membership of `p` in `s A`.
    pub fn contains_scaled(&self, p: &[f64], s: f64) -> bool {
        match self {
            TestSet::HalfSpace { a } => p[0] <= a * s,
            TestSet::WholeSpace => true,
            TestSet::Empty => false,
            TestSet::Set { set } => set.scaled(s).contains(p),
        }
    }

    fn validate(&self, d: usize) -> Result<()> {
        match self {
            TestSet::Set { set } => {
                set.validate()?;
                if set.dim() != d {
                    return Err(Error::Config(
                        "test set dimension differs from the model".into(),
                    ));
                }
                Ok(())
            }
            TestSet::HalfSpace { a } if !a.is_finite() => {
                Err(Error::Config("half-space offset must be finite".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Initial measure `m` of the dispersion experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialMeasure {
    Uniform {
        set: SetDescriptor,
    },
    /// Isotropic centered Gaussian with standard deviation `scale`.
    Gaussian {
        scale: f64,
    },
}

/// Knobs of individual experiments; unused ones are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Options {
    pub jitter: f64,
    pub scheme: JacobianScheme,
    pub reorth_every: usize,
    /// Save times at which the volume mean is tested against `λ(A)`.
    pub check_times: Vec<f64>,
    /// Time of the second-moment comparison (skipped when not saved).
    pub second_moment_time: f64,
    pub second_moment_tolerance: f64,
    /// Pair samples for `∫∫ psi` and the persistence bound.
    pub pair_samples: usize,
    /// Survival threshold as a fraction of `λ(A)`.
    pub persistence_threshold: f64,
    pub persistence_fraction: f64,
    /// Thresholds (fractions of `λ(B)`) for the conditional ratio.
    pub omega_thresholds: Vec<f64>,
    /// Fewest surviving replicates for which the conditional ratio is tested.
    pub min_conditioned: usize,
    pub contraction_from: f64,
    pub contraction_factor: f64,
    pub separations: Vec<f64>,
    pub ks_level: f64,
    pub relative_tolerance: f64,
    /// Gaussian samples for targets without a closed form.
    pub target_samples: usize,
}

impl Default for Options {
    fn default() -> Self {
        Self {
            jitter: 1e-12,
            scheme: JacobianScheme::Exponential,
            reorth_every: 10,
            check_times: vec![1.0, 2.0, 5.0, 10.0],
            second_moment_time: 20.0,
            second_moment_tolerance: 0.15,
            pair_samples: 400_000,
            persistence_threshold: 0.01,
            persistence_fraction: 0.05,
            omega_thresholds: vec![0.001, 0.01, 0.1],
            min_conditioned: 2,
            contraction_from: 1.0,
            contraction_factor: 0.1,
            separations: vec![0.5, 1.0],
            ks_level: 0.05,
            relative_tolerance: 0.05,
            target_samples: 1_000_000,
        }
    }
}

/// Full description of one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub model: IsotropicModel,
    pub seed: u64,
    pub n_particles: usize,
    pub replicates: usize,
    pub dt: f64,
    pub horizon: f64,
    #[serde(default)]
    pub save_times: Vec<f64>,
    #[serde(default)]
    pub test_sets: Vec<TestSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialMeasure>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub options: Options,
}

impl ExperimentConfig {
    /// Built-in configuration of each experiment.
    pub fn preset(experiment: Experiment) -> Self {
        let model = |d, alpha| IsotropicModel::new(d, alpha, 1.0).expect("valid preset model");
        let unit_ball = Some(InitialMeasure::Uniform {
            set: SetDescriptor::unit_ball(2),
        });
        let base = ExperimentConfig {
            experiment,
            model: model(2, 0.0),
            seed: 20_240_601,
            n_particles: 64,
            replicates: 200,
            dt: 1e-3,
            horizon: 1.0,
            save_times: Vec::new(),
            test_sets: Vec::new(),
            initial: None,
            output_dir: None,
            options: Options::default(),
        };
        match experiment {
            Experiment::Dispersion => ExperimentConfig {
                dt: 0.01,
                horizon: 100.0,
                save_times: vec![10.0, 50.0, 100.0],
                test_sets: vec![
                    TestSet::HalfSpace { a: 0.0 },
                    TestSet::Set {
                        set: SetDescriptor::unit_ball(2),
                    },
                ],
                initial: unit_ball,
                ..base
            },
            Experiment::ImageDispersion => ExperimentConfig {
                model: model(2, 0.05),
                n_particles: 16,
                dt: 0.05,
                horizon: 100.0,
                save_times: vec![10.0, 20.0, 30.0, 50.0, 100.0],
                test_sets: vec![TestSet::HalfSpace { a: 0.0 }],
                initial: unit_ball,
                ..base
            },
            Experiment::Martingale | Experiment::Persistence => ExperimentConfig {
                model: model(2, 0.05),
                replicates: 400,
                dt: 0.04,
                horizon: 20.0,
                save_times: vec![0.0, 1.0, 2.0, 5.0, 10.0, 20.0],
                initial: unit_ball,
                ..base
            },
            Experiment::Lyapunov => ExperimentConfig {
                n_particles: 1,
                horizon: 50.0,
                ..base
            },
            Experiment::DistanceCheck => ExperimentConfig {
                n_particles: 2,
                replicates: 2000,
                ..base
            },
            Experiment::QuadraticVariation => ExperimentConfig {
                n_particles: 2,
                replicates: 100,
                dt: 0.01,
                horizon: 100.0,
                save_times: vec![1.0, 10.0, 50.0, 100.0],
                options: Options {
                    separations: vec![1.0, 100.0],
                    ..Options::default()
                },
                ..base
            },
        }
    }

    /// Parses a TOML document, applying `key=value` overrides (dotted keys,
    /// values in TOML syntax; bare words are taken as strings).
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Self::from_table(table)
    }

    /// Applies overrides on top of `self`.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut table = toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Self::from_table(table)
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        let cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn step_config(&self) -> Result<StepConfig> {
        let cfg = StepConfig {
            dt: self.dt,
            jitter: self.options.jitter,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates < 2 {
            return Err(Error::Config("replicates must be at least 2".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config("dt must be positive".into()));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config("horizon must be nonnegative".into()));
        }
        if let Some(t) = self
            .save_times
            .iter()
            .find(|&&t| !(0.0..=self.horizon).contains(&t))
        {
            return Err(Error::Config(format!(
                "save time {t} outside [0, {}]",
                self.horizon
            )));
        }
        let d = self.model.d();
        for s in &self.test_sets {
            s.validate(d)?;
        }
        match &self.initial {
            Some(InitialMeasure::Uniform { set }) => {
                set.validate()?;
                if set.dim() != d {
                    return Err(Error::Config(
                        "initial set dimension differs from the model".into(),
                    ));
                }
            }
            Some(InitialMeasure::Gaussian { scale }) if !(*scale > 0.0) => {
                return Err(Error::Config("Gaussian scale must be positive".into()));
            }
            _ => {}
        }
        Ok(())
    }
}

/// Sets `key=value` in a TOML table; dotted keys address nested tables.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() {
        return Err(Error::Config(format!(
            "override `{assignment}` has an empty key"
        )));
    }
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => {
                return Err(Error::Config(format!(
                    "override `{key}`: `{part}` is not a table"
                )))
            }
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
