use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use ibf_core::covmodel::battery;
use ibf_core::explab::{
    self, apply_override, Experiment, ExperimentConfig, ExperimentOutput, InitialMeasure,
    RunInfo,
};
use ibf_core::geometry::{Segment, SetDescriptor};
use ibf_core::invariant::PsiTable;
use ibf_core::simcore::{self, NPointState, StepConfig};
use ibf_core::IsotropicModel;

mod input;

#[derive(Parser)]
#[command(name = "ibf-lab", version, about = "Numerical lab for isotropic Brownian flows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Covariance model properties
    Model {
        #[command(subcommand)]
        command: ModelCommand,
    },
    /// Simulate the n-point motion and dump positions
    Simulate(SimulateArgs),
    /// Two-point invariant density
    Psi {
        #[command(subcommand)]
        command: PsiCommand,
    },
    /// Lyapunov spectrum from the one-point linearization
    Lyapunov(ExperimentArgs),
    /// Volume martingale and second moment of the image volume
    Volume(ExperimentArgs),
    /// Forward dispersion of a finite measure
    Dispersion(ExperimentArgs),
    /// Dispersion of the image of a set, weighted by volume
    ImageDispersion(ExperimentArgs),
    /// Persistence or decay of the image volume
    Persistence(ExperimentArgs),
    /// Two-point distance law against the one-dimensional distance SDE
    DistanceCheck(ExperimentArgs),
    /// Quadratic variation of the two-point projection
    QuadraticVariation(ExperimentArgs),
    /// Run whatever experiment a config file names
    Run(ExperimentArgs),
    /// Print the built-in config of an experiment as TOML
    Preset { experiment: ExperimentName },
    /// Kernel integrals over cylinders and segment extraction
    Geometry {
        #[command(subcommand)]
        command: GeometryCommand,
    },
}

#[derive(Subcommand)]
enum ModelCommand {
    /// Print parameters, exponents and regime as JSON
    Describe(ModelArgs),
}

#[derive(Subcommand)]
enum PsiCommand {
    /// Tabulate psi and its nonincreasing majorant as CSV
    Table {
        #[command(flatten)]
        model: ModelArgs,
        /// Number of log-spaced grid points
        #[arg(long, default_value_t = 400)]
        points: usize,
        /// Output file (stdout when absent)
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Fit the small-distance exponent and check the far-field limit
    CheckAsymptotics {
        #[command(flatten)]
        model: ModelArgs,
        /// Check every model of the default battery instead
        #[arg(long)]
        battery: bool,
        #[arg(long, default_value_t = 0.05)]
        tolerance: f64,
        #[command(flatten)]
        out: OutputArgs,
    },
}

#[derive(Subcommand)]
enum GeometryCommand {
    /// Kernel ratio of cylinders against the one-dimensional average
    CylinderRatio {
        #[command(flatten)]
        model: ModelArgs,
        /// Half-lengths in units of ell
        #[arg(long, value_delimiter = ',', default_values_t = [5.0, 10.0, 20.0, 50.0])]
        half_lengths: Vec<f64>,
        /// Radii in units of ell
        #[arg(long, value_delimiter = ',', default_values_t = [0.05, 0.1, 0.5])]
        deltas: Vec<f64>,
        #[arg(long, default_value_t = 200_000)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Extract disjoint segments from a polyline (CSV, one vertex per row)
    Extract {
        #[arg(long)]
        polyline: PathBuf,
        /// Chord length L
        #[arg(long)]
        length: f64,
        /// Domain as JSON, e.g. '{"kind":"ball","center":[0,0],"radius":10}'
        #[arg(long)]
        domain: String,
        /// Also compare the piecewise cylinder with a straight one, using the
        /// psi majorant of the model
        #[arg(long)]
        compare: bool,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 200_000)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[command(flatten)]
        out: OutputArgs,
    },
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// TOML file with a [model] table
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides of the config, e.g. model.alpha=0.25
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    ell: Option<f64>,
}

impl ModelArgs {
    fn model(&self, default: (usize, f64)) -> Result<IsotropicModel> {
        let mut table = match &self.config {
            Some(p) => toml::from_str::<toml::Table>(&read(p)?)
                .with_context(|| format!("parsing {}", p.display()))?,
            None => toml::Table::new(),
        };
        for s in &self.set {
            apply_override(&mut table, s)?;
        }
        let base = match table.remove("model") {
            Some(v) => v.try_into::<IsotropicModel>().context("reading [model]")?,
            None => IsotropicModel::new(default.0, default.1, 1.0)?,
        };
        Ok(IsotropicModel::new(
            self.d.unwrap_or(base.d()),
            self.alpha.unwrap_or(base.alpha()),
            self.ell.unwrap_or(base.ell()),
        )?)
    }
}

#[derive(Args, Clone)]
struct OutputArgs {
    /// Directory for report.json, CSV tables and plots
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write series.svg
    #[arg(long)]
    svg: bool,
}

#[derive(Args)]
struct ExperimentArgs {
    /// TOML config (the built-in preset when absent)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides, e.g. --set replicates=50 --set model.alpha=0.25
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentName {
    Dispersion,
    ImageDispersion,
    Volume,
    Persistence,
    Lyapunov,
    DistanceCheck,
    QuadraticVariation,
}

impl From<ExperimentName> for Experiment {
    fn from(e: ExperimentName) -> Self {
        match e {
            ExperimentName::Dispersion => Experiment::Dispersion,
            ExperimentName::ImageDispersion => Experiment::ImageDispersion,
            ExperimentName::Volume => Experiment::Martingale,
            ExperimentName::Persistence => Experiment::Persistence,
            ExperimentName::Lyapunov => Experiment::Lyapunov,
            ExperimentName::DistanceCheck => Experiment::DistanceCheck,
            ExperimentName::QuadraticVariation => Experiment::QuadraticVariation,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Binary,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Number of particles
    #[arg(long, short, default_value_t = 16)]
    n: usize,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    /// Horizon T
    #[arg(long, short = 'T', default_value_t = 1.0)]
    horizon: f64,
    #[arg(long, default_value_t = 1)]
    replicates: usize,
    /// Save times (default: 0 and T)
    #[arg(long, value_delimiter = ',')]
    save_times: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Initial points as CSV, one per row (default: n uniform points in the
    /// unit ball, drawn per replicate)
    #[arg(long)]
    initial: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Output file (stdout when absent; required for binary output)
    #[arg(long, short)]
    output: Option<PathBuf>,
}

fn read(p: &Path) -> Result<String> {
    std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))
}

fn writer(output: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match output {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

/// Prints the summary, writes the output directory and maps the pass flag
/// to the exit code.
fn finish(out: &ExperimentOutput, dir: Option<PathBuf>, svg: bool, started: Instant) -> Result<ExitCode> {
    print!("{}", out.report.summary());
    for n in &out.report.notes {
        println!("note: {n}");
    }
    if let Some(dir) = dir {
        let info = RunInfo {
            wall_time_seconds: started.elapsed().as_secs_f64(),
            threads: rayon::current_num_threads(),
        };
        out.write_to(&dir, &info, svg)?;
        eprintln!("wrote {}", dir.display());
    }
    Ok(if out.report.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn experiment(args: &ExperimentArgs, kind: Option<Experiment>) -> Result<ExitCode> {
    let cfg = match (&args.config, kind) {
        (Some(p), _) => ExperimentConfig::from_toml(&read(p)?, &args.set)?,
        (None, Some(k)) => ExperimentConfig::preset(k).with_overrides(&args.set)?,
        (None, None) => bail!("`run` needs --config"),
    };
    if let Some(k) = kind {
        if cfg.experiment != k {
            bail!(
                "config describes `{}`, not `{}`",
                cfg.experiment.name(),
                k.name()
            );
        }
    }
    explab::configure_threads();
    let started = Instant::now();
    let out = explab::run_experiment(&cfg)?;
    let dir = args
        .out
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("ibf-out").join(cfg.experiment.name()));
    finish(&out, Some(dir), args.out.svg, started)
}

fn describe(model: &IsotropicModel) -> serde_json::Value {
    let (bl, bn) = model.beta_params();
    let regime = model.regime();
    json!({
        "d": model.d(),
        "alpha": model.alpha(),
        "ell": model.ell(),
        "beta_L": bl,
        "beta_N": bn,
        "lyapunov": model.lyapunov_spectrum(),
        "regime": regime.regime,
        "convergence": regime.convergence,
        "volume_preserving": model.is_volume_preserving(),
        "volume_persists": model.volume_persists(),
        "psi_exponent": model.psi_exponent(),
    })
}

fn simulate(a: &SimulateArgs) -> Result<ExitCode> {
    let model = a.model.model((2, 0.0))?;
    let d = model.d();
    let step = StepConfig::new(a.dt, a.seed)?;
    let save = if a.save_times.is_empty() {
        vec![0.0, a.horizon]
    } else {
        a.save_times.clone()
    };
    if a.replicates == 0 {
        bail!("replicates must be positive");
    }
    let fixed = match &a.initial {
        Some(p) => {
            let pts = input::read_points(p)?;
            Some(NPointState::from_points(&pts)?)
        }
        None => None,
    };
    if let Some(s) = &fixed {
        if s.d != d {
            bail!("initial points have dimension {}, the model {d}", s.d);
        }
    }
    explab::configure_threads();
    let ball = InitialMeasure::Uniform {
        set: SetDescriptor::unit_ball(d),
    };
    let trajectories = (0..a.replicates as u64)
        .into_par_iter()
        .map(|r| {
            let init = match &fixed {
                Some(s) => s.clone(),
                None => NPointState::new(
                    d,
                    explab::sample_initial(&ball, d, a.n, a.seed, r),
                )?,
            };
            simcore::simulate_npoints(&init, &model, &step, a.horizon, &save, r)
        })
        .collect::<ibf_core::Result<Vec<_>>>()?;
    match a.format {
        Format::Csv => {
            let mut w = writer(&a.output)?;
            for (r, t) in trajectories.iter().enumerate() {
                simcore::write_csv(&mut w, r, t, r == 0)?;
            }
            w.flush()?;
        }
        Format::Binary => {
            if a.output.is_none() {
                bail!("binary output needs --output");
            }
            let snaps: Vec<&NPointState> =
                trajectories.iter().flat_map(|t| t.snapshots.iter()).collect();
            let mut w = writer(&a.output)?;
            simcore::write_binary(&mut w, &snaps)?;
            w.flush()?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let started = Instant::now();
    match cli.command {
        Command::Model {
            command: ModelCommand::Describe(m),
        } => {
            let model = m.model((2, 0.0))?;
            println!("{}", serde_json::to_string_pretty(&describe(&model))?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate(a) => simulate(&a),
        Command::Psi {
            command: PsiCommand::Table { model, points, output },
        } => {
            let table = PsiTable::with_points(&model.model((2, 0.05))?, points)?;
            let mut w = writer(&output)?;
            writeln!(w, "s,psi,majorant")?;
            for ((s, v), h) in table.grid.iter().zip(&table.values).zip(&table.majorant) {
                writeln!(w, "{s:e},{v:e},{h:e}")?;
            }
            w.flush()?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Psi {
            command:
                PsiCommand::CheckAsymptotics {
                    model,
                    battery: all,
                    tolerance,
                    out,
                },
        } => {
            let models = if all {
                battery()
            } else {
                vec![model.model((2, 0.05))?]
            };
            let o = explab::psi_asymptotics_report(&models, tolerance)?;
            println!("{}", o.report.to_json()?);
            if let Some(dir) = out.out {
                write_standalone(&o, &dir, out.svg, started)?;
            }
            Ok(exit(&o))
        }
        Command::Lyapunov(a) => experiment(&a, Some(Experiment::Lyapunov)),
        Command::Volume(a) => experiment(&a, Some(Experiment::Martingale)),
        Command::Dispersion(a) => experiment(&a, Some(Experiment::Dispersion)),
        Command::ImageDispersion(a) => experiment(&a, Some(Experiment::ImageDispersion)),
        Command::Persistence(a) => experiment(&a, Some(Experiment::Persistence)),
        Command::DistanceCheck(a) => experiment(&a, Some(Experiment::DistanceCheck)),
        Command::QuadraticVariation(a) => experiment(&a, Some(Experiment::QuadraticVariation)),
        Command::Run(a) => experiment(&a, None),
        Command::Preset { experiment } => {
            print!("{}", ExperimentConfig::preset(experiment.into()).to_toml()?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Geometry {
            command:
                GeometryCommand::CylinderRatio {
                    model,
                    half_lengths,
                    deltas,
                    samples,
                    seed,
                    out,
                },
        } => {
            explab::configure_threads();
            let o = explab::cylinder_ratio_report(
                &model.model((2, 0.05))?,
                &half_lengths,
                &deltas,
                samples,
                seed,
            )?;
            println!("{}", o.report.to_json()?);
            if let Some(dir) = out.out {
                write_standalone(&o, &dir, out.svg, started)?;
            }
            Ok(exit(&o))
        }
        Command::Geometry {
            command:
                GeometryCommand::Extract {
                    polyline,
                    length,
                    domain,
                    compare,
                    model,
                    samples,
                    seed,
                    out,
                },
        } => {
            let vertices = input::read_points(&polyline)?;
            let segments = vertices
                .windows(2)
                .map(|w| Segment::new(w[0].clone(), w[1].clone()))
                .collect::<ibf_core::Result<Vec<_>>>()?;
            let domain: SetDescriptor =
                serde_json::from_str(&domain).context("parsing --domain")?;
            explab::configure_threads();
            let table = if compare {
                Some(PsiTable::new(&model.model((domain.dim(), 0.05))?)?)
            } else {
                None
            };
            let kernel = table.as_ref().map(|t| t.majorant_kernel());
            let o = explab::extraction_report(
                &segments,
                length,
                &domain,
                kernel.as_ref().map(|k| k as &dyn ibf_core::invariant::RadialKernel),
                samples,
                seed,
            )?;
            println!("{}", o.report.to_json()?);
            if let Some(dir) = out.out {
                write_standalone(&o, &dir, out.svg, started)?;
            }
            Ok(exit(&o))
        }
    }
}

fn write_standalone(o: &ExperimentOutput, dir: &Path, svg: bool, started: Instant) -> Result<()> {
    let info = RunInfo {
        wall_time_seconds: started.elapsed().as_secs_f64(),
        threads: rayon::current_num_threads(),
    };
    o.write_to(dir, &info, svg)?;
    eprintln!("wrote {}", dir.display());
    Ok(())
}

fn exit(o: &ExperimentOutput) -> ExitCode {
    if o.report.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
