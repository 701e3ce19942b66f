//! Long-horizon gradient and state probes on randomly initialized models.
//!
//! The model reads `T` uniform-random tokens and only the prediction at the
//! last step is scored, so `∂loss_T/∂x_1` measures how much gradient
//! survives the full horizon.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::gradcheck::preflight;
use crate::cells::{CellKind, CellParams, CellTrace};
use crate::engine::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::numeric::{init_uniform, Rng};
use crate::params::ParamSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub cell: CellKind,
    pub hidden: usize,
    pub layers: usize,
    pub vocab: usize,
    pub init_bound: Option<f64>,
    /// RNN only: redraw the recurrent block uniform in `±gain·sqrt(3/d)`,
    /// which gives it spectral radius close to `gain`.
    pub rnn_gain: Option<f64>,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            cell: CellKind::Ltm,
            hidden: 128,
            layers: 1,
            vocab: 32,
            init_bound: None,
            rnn_gain: None,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub horizon: usize,
    pub grad_x1_norm: f64,
    pub grad_param_norm: f64,
    /// Extremes of the cell state (`c` for LTM and LSTM, `h` otherwise) over
    /// every step and layer.
    pub c_min: f64,
    pub c_max: f64,
    /// LTM only: extremes of `C' = L' + c_prev`.
    pub cp_min: Option<f64>,
    pub cp_max: Option<f64>,
    pub nan_seen: bool,
}

fn build(cfg: &ProbeConfig, rng: &mut Rng) -> Result<Model> {
    let mc = ModelConfig {
        cell: cfg.cell,
        layers: cfg.layers,
        hidden: cfg.hidden,
        embed_dim: cfg.hidden,
        vocab: cfg.vocab,
        init_bound: cfg.init_bound,
        ..ModelConfig::default()
    };
    let mut model = Model::new(mc, rng)?;
    if let Some(gain) = cfg.rnn_gain {
        if cfg.cell != CellKind::Rnn {
            return Err(Error::Config("rnn_gain only applies to cell = rnn".into()));
        }
        let d = cfg.hidden;
        let bound = gain * (3.0 / d as f64).sqrt();
        for layer in &mut model.layers {
            if let CellParams::Rnn(p) = layer {
                let rec = init_uniform(rng, d, d, bound)?;
                for r in 0..d {
                    p.w.row_mut(r)[..d].copy_from_slice(rec.row(r));
                }
            }
        }
    }
    Ok(model)
}

struct Extremes {
    min: f64,
    max: f64,
    nan: bool,
}

impl Extremes {
    fn new() -> Self {
        Extremes {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            nan: false,
        }
    }

    fn see(&mut self, v: &[f64]) {
        for &x in v {
            if x.is_nan() {
                self.nan = true;
            } else {
                self.min = self.min.min(x);
                self.max = self.max.max(x);
            }
        }
    }
}

/// Probes each horizon with a fresh model and token stream drawn from
/// `cfg.seed`. For an LTM with gate 4 active, every `C` entry must lie in
/// (0, 1) and every `C'` entry in [0, 2); a violation is an error.
pub fn stability_probe(cfg: &ProbeConfig, horizons: &[usize]) -> Result<Vec<ProbeResult>> {
    preflight(cfg.cell)?;
    let mut out = Vec::with_capacity(horizons.len());
    for &t_len in horizons {
        if t_len == 0 {
            return Err(Error::Config("probe horizon must be at least 1".into()));
        }
        let rng = Rng::new(cfg.seed);
        let model = build(cfg, &mut rng.child("init"))?;
        let mut trng = rng.child("tokens");
        let tokens: Vec<usize> = (0..=t_len).map(|_| trng.below(cfg.vocab)).collect();

        let pass = model.forward_sequence(&tokens, None)?;
        let mut weights = vec![0.0; t_len];
        weights[t_len - 1] = 1.0;
        let back = model.backward_weighted(&pass, &weights)?;

        let mut state = Extremes::new();
        let mut cp = Extremes::new();
        let mut any_nan = !pass.loss_sum.is_finite();
        let check_ltm = cfg.cell == CellKind::Ltm && !model.config.gate_mask.open4;
        for (t, step) in pass.steps.iter().enumerate() {
            for (l, tr) in step.traces.iter().enumerate() {
                match tr {
                    CellTrace::Ltm(x) => {
                        state.see(&x.c);
                        cp.see(&x.cp);
                        if check_ltm {
                            if let Some(v) = x.c.iter().find(|&&v| !(v > 0.0 && v < 1.0)) {
                                return Err(Error::BoundViolation(format!(
                                    "T = {t_len}: C = {v} at step {} layer {l}",
                                    t + 1
                                )));
                            }
                            if let Some(v) = x.cp.iter().find(|&&v| !(0.0..2.0).contains(&v)) {
                                return Err(Error::BoundViolation(format!(
                                    "T = {t_len}: C' = {v} at step {} layer {l}",
                                    t + 1
                                )));
                            }
                        }
                    }
                    CellTrace::Lstm(x) => state.see(&x.c),
                    CellTrace::Gru(x) => state.see(&x.h),
                    CellTrace::Rnn(x) => state.see(&x.h),
                }
            }
        }
        let gx = back.input_grads[0].norm();
        let gp = back.params.norm();
        any_nan |= state.nan || cp.nan || gx.is_nan() || gp.is_nan() || !back.params.all_finite();
        let is_ltm = cfg.cell == CellKind::Ltm;
        out.push(ProbeResult {
            horizon: t_len,
            grad_x1_norm: gx,
            grad_param_norm: gp,
            c_min: state.min,
            c_max: state.max,
            cp_min: is_ltm.then_some(cp.min),
            cp_max: is_ltm.then_some(cp.max),
            nan_seen: any_nan,
        });
    }
    Ok(out)
}

/// `T,grad_x1_norm,grad_param_norm,c_min,c_max,nan`.
pub fn write_probe_csv<W: Write>(results: &[ProbeResult], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["T", "grad_x1_norm", "grad_param_norm", "c_min", "c_max", "nan"])?;
    for r in results {
        out.write_record([
            r.horizon.to_string(),
            r.grad_x1_norm.to_string(),
            r.grad_param_norm.to_string(),
            r.c_min.to_string(),
            r.c_max.to_string(),
            r.nan_seen.to_string(),
        ])?;
    }
    out.flush().map_err(|e| Error::io("writing probe csv", e))
}
