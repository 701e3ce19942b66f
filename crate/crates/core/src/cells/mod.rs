//! Recurrent cells as pure state transitions, each with an exact backward.
//!
//! Every cell maps `(params, state, x)` to a step trace and a new state. The
//! trace keeps every intermediate activation so that the backward pass never
//! recomputes a forward quantity.

mod gru;
mod lstm;
mod ltm;
mod rnn;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use gru::{gru_backward_into, gru_step, GruParams, GruStepTrace};
pub use lstm::{lstm_backward_into, lstm_step, LstmParams, LstmStepTrace};
pub use ltm::{ltm_backward, ltm_backward_into, ltm_step, LtmGradients, LtmParams, LtmStepTrace};
pub use rnn::{rnn_backward_into, rnn_step, RnnParams, RnnStepTrace};

use crate::error::{Error, Result};
use crate::numeric::{add_assign, Rng, ShapeError, Vector};
use crate::params::{ParamSet, TensorView};

pub(crate) fn check_len(op: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(ShapeError::Length { op, expected, got }.into());
    }
    Ok(())
}

pub(crate) fn check_finite(what: &'static str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteInput(what))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Ltm,
    Lstm,
    Gru,
    Rnn,
}

impl CellKind {
    pub const ALL: [CellKind; 4] = [CellKind::Ltm, CellKind::Lstm, CellKind::Gru, CellKind::Rnn];

    /// Whether the cell carries a separate cell state `c` next to `h`.
    pub fn has_cell_state(self) -> bool {
        matches!(self, CellKind::Ltm | CellKind::Lstm)
    }

    pub fn name(self) -> &'static str {
        match self {
            CellKind::Ltm => "ltm",
            CellKind::Lstm => "lstm",
            CellKind::Gru => "gru",
            CellKind::Rnn => "rnn",
        }
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CellKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ltm" => Ok(CellKind::Ltm),
            "lstm" => Ok(CellKind::Lstm),
            "gru" => Ok(CellKind::Gru),
            "rnn" => Ok(CellKind::Rnn),
            other => Err(Error::Config(format!("unknown cell kind {other:?}"))),
        }
    }
}

/// Which LTM gates are opened, i.e. replaced by a constant all-ones output.
/// Gate `k` produces `L_k` for k = 1, 2, 3 and the cell state `C` for k = 4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct GateMask {
    pub open1: bool,
    pub open2: bool,
    pub open3: bool,
    pub open4: bool,
}

impl GateMask {
    /// All gates active.
    pub const CLOSED: GateMask = GateMask {
        open1: false,
        open2: false,
        open3: false,
        open4: false,
    };

    /// A mask with exactly the listed gates (numbered 1..=4) opened.
    pub fn opened(gates: &[usize]) -> Self {
        let mut m = GateMask::default();
        for &k in gates {
            m.set(k, true);
        }
        m
    }

    pub fn is_open(&self, gate: usize) -> bool {
        match gate {
            1 => self.open1,
            2 => self.open2,
            3 => self.open3,
            4 => self.open4,
            _ => panic!("gate index {gate} outside 1..=4"),
        }
    }

    pub fn set(&mut self, gate: usize, open: bool) {
        match gate {
            1 => self.open1 = open,
            2 => self.open2 = open,
            3 => self.open3 = open,
            4 => self.open4 = open,
            _ => panic!("gate index {gate} outside 1..=4"),
        }
    }

    pub fn open_count(&self) -> usize {
        (1..=4).filter(|&k| self.is_open(k)).count()
    }
}

/// Recurrent state carried between steps. `c` is empty for cells without a
/// separate cell state (GRU, RNN).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CellState {
    pub h: Vector,
    pub c: Vector,
}

impl CellState {
    pub fn zeros(h_len: usize, c_len: usize) -> Self {
        CellState {
            h: Vector::zeros(h_len),
            c: Vector::zeros(c_len),
        }
    }

    /// The zero initial state for a cell of `kind` and hidden size `d`.
    pub fn initial(kind: CellKind, d: usize) -> Self {
        CellState::zeros(d, if kind.has_cell_state() { d } else { 0 })
    }
}

/// Gradients flowing out of one step towards the previous state and the input.
#[derive(Debug, Clone, PartialEq)]
pub struct StepGrads {
    pub h_prev: Vector,
    pub c_prev: Vector,
    pub x: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellParams {
    Ltm(LtmParams),
    Lstm(LstmParams),
    Gru(GruParams),
    Rnn(RnnParams),
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellTrace {
    Ltm(LtmStepTrace),
    Lstm(LstmStepTrace),
    Gru(GruStepTrace),
    Rnn(RnnStepTrace),
}

impl CellTrace {
    pub fn h(&self) -> &Vector {
        match self {
            CellTrace::Ltm(t) => &t.h,
            CellTrace::Lstm(t) => &t.h,
            CellTrace::Gru(t) => &t.h,
            CellTrace::Rnn(t) => &t.h,
        }
    }
}

/// Construction options shared by every cell kind.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellShape {
    pub kind: CellKind,
    pub hidden: usize,
    pub input: usize,
    /// LTM only: add per-gate biases.
    pub ltm_biases: bool,
    /// LTM only: no sigmoid on `L3`.
    pub gate3_linear: bool,
}

impl CellParams {
    pub fn zeros(shape: CellShape) -> Result<Self> {
        shape.validate()?;
        let (d, n) = (shape.hidden, shape.input);
        Ok(match shape.kind {
            CellKind::Ltm => CellParams::Ltm(LtmParams::zeros(d, shape.ltm_biases, shape.gate3_linear)),
            CellKind::Lstm => CellParams::Lstm(LstmParams::zeros(d, n)),
            CellKind::Gru => CellParams::Gru(GruParams::zeros(d, n)),
            CellKind::Rnn => CellParams::Rnn(RnnParams::zeros(d, n)),
        })
    }

    pub fn random(shape: CellShape, rng: &mut Rng, bound: f64) -> Result<Self> {
        shape.validate()?;
        let (d, n) = (shape.hidden, shape.input);
        Ok(match shape.kind {
            CellKind::Ltm => CellParams::Ltm(LtmParams::random(d, shape.ltm_biases, shape.gate3_linear, rng, bound)?),
            CellKind::Lstm => CellParams::Lstm(LstmParams::random(d, n, rng, bound)?),
            CellKind::Gru => CellParams::Gru(GruParams::random(d, n, rng, bound)?),
            CellKind::Rnn => CellParams::Rnn(RnnParams::random(d, n, rng, bound)?),
        })
    }

    pub fn kind(&self) -> CellKind {
        match self {
            CellParams::Ltm(_) => CellKind::Ltm,
            CellParams::Lstm(_) => CellKind::Lstm,
            CellParams::Gru(_) => CellKind::Gru,
            CellParams::Rnn(_) => CellKind::Rnn,
        }
    }

    pub fn hidden(&self) -> usize {
        match self {
            CellParams::Ltm(p) => p.hidden(),
            CellParams::Lstm(p) => p.hidden(),
            CellParams::Gru(p) => p.hidden(),
            CellParams::Rnn(p) => p.hidden(),
        }
    }

    pub fn input(&self) -> usize {
        match self {
            CellParams::Ltm(p) => p.hidden(),
            CellParams::Lstm(p) => p.input(),
            CellParams::Gru(p) => p.input(),
            CellParams::Rnn(p) => p.input(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            CellParams::Ltm(p) => CellParams::Ltm(p.zeros_like()),
            CellParams::Lstm(p) => CellParams::Lstm(p.zeros_like()),
            CellParams::Gru(p) => CellParams::Gru(p.zeros_like()),
            CellParams::Rnn(p) => CellParams::Rnn(p.zeros_like()),
        }
    }

    pub fn initial_state(&self) -> CellState {
        CellState::initial(self.kind(), self.hidden())
    }

    /// One forward step. `mask` only affects LTM cells.
    pub fn step(&self, s: &CellState, x: &[f64], mask: &GateMask) -> Result<(CellTrace, CellState)> {
        Ok(match self {
            CellParams::Ltm(p) => {
                let (t, s) = ltm_step(p, s, x, mask)?;
                (CellTrace::Ltm(t), s)
            }
            CellParams::Lstm(p) => {
                let (t, s) = lstm_step(p, s, x)?;
                (CellTrace::Lstm(t), s)
            }
            CellParams::Gru(p) => {
                let (t, s) = gru_step(p, s, x)?;
                (CellTrace::Gru(t), s)
            }
            CellParams::Rnn(p) => {
                let (t, s) = rnn_step(p, s, x)?;
                (CellTrace::Rnn(t), s)
            }
        })
    }

    /// Backward through one step; parameter gradients accumulate into `grads`.
    pub fn backward_into(
        &self,
        trace: &CellTrace,
        grad_h: &[f64],
        grad_c: &[f64],
        mask: &GateMask,
        grads: &mut CellParams,
    ) -> Result<StepGrads> {
        match (self, trace, grads) {
            (CellParams::Ltm(p), CellTrace::Ltm(t), CellParams::Ltm(g)) => ltm_backward_into(p, t, grad_h, grad_c, mask, g),
            (CellParams::Lstm(p), CellTrace::Lstm(t), CellParams::Lstm(g)) => lstm_backward_into(p, t, grad_h, grad_c, g),
            (CellParams::Gru(p), CellTrace::Gru(t), CellParams::Gru(g)) => gru_backward_into(p, t, grad_h, g),
            (CellParams::Rnn(p), CellTrace::Rnn(t), CellParams::Rnn(g)) => rnn_backward_into(p, t, grad_h, g),
            _ => Err(Error::TraceMismatch(format!(
                "{} parameters given a trace or gradient buffer of another cell kind",
                self.kind()
            ))),
        }
    }
}

impl CellShape {
    fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::Config("hidden size must be at least 1".into()));
        }
        if self.kind == CellKind::Ltm && self.input != self.hidden {
            return Err(Error::Config(format!(
                "an LTM cell adds its input to its previous output, so input size ({}) must equal hidden size ({})",
                self.input, self.hidden
            )));
        }
        Ok(())
    }
}

impl ParamSet for CellParams {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        match self {
            CellParams::Ltm(p) => p.tensors(),
            CellParams::Lstm(p) => p.tensors(),
            CellParams::Gru(p) => p.tensors(),
            CellParams::Rnn(p) => p.tensors(),
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            CellParams::Ltm(p) => p.tensors_mut(),
            CellParams::Lstm(p) => p.tensors_mut(),
            CellParams::Gru(p) => p.tensors_mut(),
            CellParams::Rnn(p) => p.tensors_mut(),
        }
    }
}

/// Result of advancing a layer stack by one token.
#[derive(Debug, Clone)]
pub struct StackStep {
    pub traces: Vec<CellTrace>,
    pub states: Vec<CellState>,
    pub top_h: Vector,
}

/// Runs one step through a stack: the `h` of layer `l - 1` is the input of
/// layer `l`.
pub fn stack_step(layers: &[CellParams], states: &[CellState], x: &[f64], mask: &GateMask) -> Result<StackStep> {
    if layers.is_empty() {
        return Err(Error::Config("a stack needs at least one layer".into()));
    }
    check_len("stack states", layers.len(), states.len())?;
    let mut traces = Vec::with_capacity(layers.len());
    let mut next = Vec::with_capacity(layers.len());
    let mut input = x.to_vec();
    for (l, (p, s)) in layers.iter().zip(states).enumerate() {
        if p.input() != input.len() {
            return Err(Error::Config(format!(
                "layer {l} expects input of size {}, got {}",
                p.input(),
                input.len()
            )));
        }
        let (t, ns) = p.step(s, &input, mask)?;
        input = ns.h.to_vec();
        traces.push(t);
        next.push(ns);
    }
    Ok(StackStep {
        traces,
        states: next,
        top_h: Vector::from(input),
    })
}

/// Gradient carried backwards in time for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct StateGrad {
    pub h: Vector,
    pub c: Vector,
}

impl StateGrad {
    pub fn zeros_for(p: &CellParams) -> Self {
        let s = p.initial_state();
        StateGrad { h: s.h, c: s.c }
    }
}

/// Backward through one stack step.
///
/// `carry[l]` holds the gradient with respect to layer `l`'s output state at
/// this step coming from later steps; on return it holds the gradient with
/// respect to the state at the previous step. Returns the gradient with
/// respect to the stack input `x`.
pub fn stack_backward_into(
    layers: &[CellParams],
    traces: &[CellTrace],
    grad_top_h: &[f64],
    carry: &mut [StateGrad],
    mask: &GateMask,
    grads: &mut [CellParams],
) -> Result<Vector> {
    check_len("stack traces", layers.len(), traces.len())?;
    check_len("stack carry", layers.len(), carry.len())?;
    check_len("stack grads", layers.len(), grads.len())?;
    let mut from_above = grad_top_h.to_vec();
    for l in (0..layers.len()).rev() {
        let mut gh = carry[l].h.to_vec();
        check_len("stack grad_h", gh.len(), from_above.len())?;
        add_assign(&mut gh, &from_above);
        let sg = layers[l].backward_into(&traces[l], &gh, &carry[l].c, mask, &mut grads[l])?;
        carry[l] = StateGrad {
            h: sg.h_prev,
            c: sg.c_prev,
        };
        from_above = sg.x.into_vec();
    }
    Ok(Vector::from(from_above))
}
