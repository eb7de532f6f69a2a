//! Browser bindings: model summary with the psi curve, an animated planar
//! particle cloud, and a Lyapunov spectrum estimate.

use serde_json::json;
use wasm_bindgen::prelude::*;

use ibf_core::explab::{sample_initial, InitialMeasure};
use ibf_core::geometry::SetDescriptor;
use ibf_core::invariant::PsiTable;
use ibf_core::linearization::{lyapunov_estimate, JacobianScheme};
use ibf_core::simcore::{NPointState, NPointStepper, NoiseSource, StepConfig};
use ibf_core::IsotropicModel;

fn err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// Exponents, regime flags and the psi table of the model, as JSON.
#[wasm_bindgen]
pub fn describe(d: usize, alpha: f64, points: usize) -> Result<String, JsError> {
    describe_json(d, alpha, points).map_err(err)
}

pub fn describe_json(d: usize, alpha: f64, points: usize) -> ibf_core::Result<String> {
    let m = IsotropicModel::new(d, alpha, 1.0)?;
    let (bl, bn) = m.beta_params();
    let t = PsiTable::with_points(&m, points)?;
    Ok(json!({
        "d": d,
        "alpha": alpha,
        "beta_L": bl,
        "beta_N": bn,
        "lyapunov": m.lyapunov_spectrum(),
        "transient": m.is_transient(),
        "volume_preserving": m.is_volume_preserving(),
        "volume_persists": m.volume_persists(),
        "psi_exponent": m.psi_exponent(),
        "s": t.grid,
        "psi": t.values,
        "majorant": t.majorant,
    })
    .to_string())
}

/// Planar n-point motion started from uniform points in the unit ball.
#[wasm_bindgen]
pub struct Cloud {
    state: NPointState,
    stepper: NPointStepper,
    noise: NoiseSource,
}

#[wasm_bindgen]
impl Cloud {
    #[wasm_bindgen(constructor)]
    pub fn new(alpha: f64, n: usize, dt: f64, seed: u64) -> Result<Cloud, JsError> {
        Cloud::create(alpha, n, dt, seed).map_err(err)
    }

    /// Advances `steps` steps.
    pub fn advance(&mut self, steps: u32) -> Result<(), JsError> {
        for _ in 0..steps {
            self.stepper
                .step(&mut self.state, &mut self.noise)
                .map_err(err)?;
        }
        Ok(())
    }

    pub fn time(&self) -> f64 {
        self.state.time
    }

    /// Flat `x1 y1 x2 y2 ...`.
    pub fn positions(&self) -> Vec<f64> {
        self.state.positions.clone()
    }
}

impl Cloud {
    pub fn create(alpha: f64, n: usize, dt: f64, seed: u64) -> ibf_core::Result<Cloud> {
        let model = IsotropicModel::new(2, alpha, 1.0)?;
        let ball = InitialMeasure::Uniform {
            set: SetDescriptor::unit_ball(2),
        };
        let state = NPointState::new(2, sample_initial(&ball, 2, n, seed, 0))?;
        let cfg = StepConfig::new(dt, seed)?;
        Ok(Cloud {
            state,
            stepper: NPointStepper::new(model, cfg)?,
            noise: NoiseSource::new(seed, 0, n),
        })
    }
}

/// Estimated and predicted Lyapunov exponents, as JSON.
#[wasm_bindgen]
pub fn lyapunov(
    d: usize,
    alpha: f64,
    horizon: f64,
    replicates: usize,
    seed: u64,
) -> Result<String, JsError> {
    lyapunov_json(d, alpha, horizon, replicates, seed).map_err(err)
}

pub fn lyapunov_json(
    d: usize,
    alpha: f64,
    horizon: f64,
    replicates: usize,
    seed: u64,
) -> ibf_core::Result<String> {
    let m = IsotropicModel::new(d, alpha, 1.0)?;
    let cfg = StepConfig::new(1e-2, seed)?;
    let e = lyapunov_estimate(&m, horizon, &cfg, replicates, 10, JacobianScheme::Exponential)?;
    Ok(json!({
        "estimates": e.estimates,
        "std_errors": e.std_errors,
        "targets": e.targets,
    })
    .to_string())
}
