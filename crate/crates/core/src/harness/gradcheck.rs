//! Analytic BPTT gradients against central finite differences.

use serde::{Deserialize, Serialize};

use crate::cells::CellKind;
use crate::engine::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::numeric::{relative_error, Rng};
use crate::params::ParamSet;

pub const FD_STEP: f64 = 1e-5;
pub const GRADCHECK_TOL: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckSpec {
    pub cell: CellKind,
    pub hidden: usize,
    pub layers: usize,
    /// Number of predictions in the window.
    pub steps: usize,
    pub vocab: usize,
    pub seed: u64,
    /// The checked objective is `loss_scale · loss_sum`.
    pub loss_scale: f64,
    pub init_bound: f64,
    pub ltm_biases: bool,
    pub gate3_linear: bool,
}

impl GradcheckSpec {
    /// d = 4, T = 8, V = 5, two layers.
    pub fn new(cell: CellKind, seed: u64) -> Self {
        GradcheckSpec {
            cell,
            hidden: 4,
            layers: 2,
            steps: 8,
            vocab: 5,
            seed,
            loss_scale: 1.0,
            init_bound: 0.5,
            ltm_biases: true,
            gate3_linear: false,
        }
    }

    fn model_config(&self) -> ModelConfig {
        ModelConfig {
            cell: self.cell,
            layers: self.layers,
            hidden: self.hidden,
            embed_dim: self.hidden,
            vocab: self.vocab,
            ltm_biases: self.ltm_biases,
            gate3_linear: self.gate3_linear,
            init_bound: Some(self.init_bound),
            ..ModelConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub cell: CellKind,
    pub seed: u64,
    pub max_rel_err: f64,
    /// Tensor and flat index of the worst entry.
    pub worst: (String, usize),
    pub checked: usize,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < GRADCHECK_TOL
    }
}

/// Compares every parameter entry's analytic gradient with the central
/// difference `(f(θ + h) - f(θ - h)) / 2h`, `h = 1e-5`.
pub fn gradcheck(spec: &GradcheckSpec) -> Result<GradcheckReport> {
    let rng = Rng::new(spec.seed);
    let mut model = Model::new(spec.model_config(), &mut rng.child("init"))?;
    let mut trng = rng.child("tokens");
    let tokens: Vec<usize> = (0..=spec.steps).map(|_| trng.below(spec.vocab)).collect();

    let pass = model.forward_sequence(&tokens, None)?;
    let grads = model.backward_sequence(&pass, spec.loss_scale)?;
    if !grads.all_finite() {
        return Err(Error::NonFiniteInput("analytic gradient"));
    }
    let analytic: Vec<(String, Vec<f64>)> = grads.tensors().into_iter().map(|t| (t.name, t.data.to_vec())).collect();

    let mut worst = (String::new(), 0);
    let mut max_rel_err = 0.0f64;
    let mut checked = 0;
    for (ti, (name, a)) in analytic.iter().enumerate() {
        for (i, &ai) in a.iter().enumerate() {
            let orig = model.tensors_mut()[ti][i];
            model.tensors_mut()[ti][i] = orig + FD_STEP;
            let up = model.score(&tokens, None)?.loss_sum;
            model.tensors_mut()[ti][i] = orig - FD_STEP;
            let down = model.score(&tokens, None)?.loss_sum;
            model.tensors_mut()[ti][i] = orig;
            let numeric = spec.loss_scale * (up - down) / (2.0 * FD_STEP);
            let err = relative_error(ai, numeric);
            if err > max_rel_err || err.is_nan() {
                max_rel_err = if err.is_nan() { f64::INFINITY } else { err };
                worst = (name.clone(), i);
            }
            checked += 1;
        }
    }
    Ok(GradcheckReport {
        cell: spec.cell,
        seed: spec.seed,
        max_rel_err,
        worst,
        checked,
    })
}

/// Runs the default check for `cell` and turns a failure into an error.
/// Experiments call this first so that nothing runs on a broken backward.
pub fn preflight(cell: CellKind) -> Result<()> {
    let r = gradcheck(&GradcheckSpec::new(cell, 0))?;
    if r.passed() {
        Ok(())
    } else {
        Err(Error::GradcheckFailed {
            cell: cell.to_string(),
            max_rel_err: r.max_rel_err,
            tol: GRADCHECK_TOL,
        })
    }
}
