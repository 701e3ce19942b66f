//! Elman RNN: `y = tanh(W [y_prev; x] + b)`.

use serde::{Deserialize, Serialize};

use super::{check_finite, check_len, CellState, StepGrads};
use crate::error::{Error, Result};
use crate::numeric::{self, init_uniform, Matrix, Rng, Vector};
use crate::params::{view, ParamSet, TensorView};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnParams {
    pub w: Matrix,
    pub b: Vector,
}

impl RnnParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        RnnParams {
            w: Matrix::zeros(hidden, hidden + input),
            b: Vector::zeros(hidden),
        }
    }

    pub fn random(hidden: usize, input: usize, rng: &mut Rng, bound: f64) -> Result<Self> {
        Ok(RnnParams {
            w: init_uniform(rng, hidden, hidden + input, bound)?,
            b: Vector::zeros(hidden),
        })
    }

    pub fn hidden(&self) -> usize {
        self.w.rows()
    }

    pub fn input(&self) -> usize {
        self.w.cols() - self.hidden()
    }

    pub fn zeros_like(&self) -> Self {
        RnnParams::zeros(self.hidden(), self.input())
    }
}

impl ParamSet for RnnParams {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        let (d, c) = self.w.shape();
        vec![view("w", &[d, c], self.w.as_slice()), view("b", &[d], &self.b)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.w.as_mut_slice(), &mut self.b[..]]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RnnStepTrace {
    pub x: Vector,
    pub h_prev: Vector,
    /// `[h_prev; x]`
    pub cat: Vector,
    pub h: Vector,
}

pub fn rnn_step(p: &RnnParams, s: &CellState, x: &[f64]) -> Result<(RnnStepTrace, CellState)> {
    let d = p.hidden();
    check_len("rnn input", p.input(), x.len())?;
    check_len("rnn h_prev", d, s.h.len())?;
    check_finite("rnn input", x)?;

    let cat = s.h.concat(x);
    let mut a = Vector::zeros(d);
    numeric::matvec_into(&p.w, &cat, &mut a);
    numeric::add_assign(&mut a, &p.b);
    let h = numeric::tanh(&a);
    let next = CellState {
        h: h.clone(),
        c: Vector::default(),
    };
    Ok((
        RnnStepTrace {
            x: Vector::from(x.to_vec()),
            h_prev: s.h.clone(),
            cat,
            h,
        },
        next,
    ))
}

pub fn rnn_backward_into(p: &RnnParams, t: &RnnStepTrace, grad_h: &[f64], grads: &mut RnnParams) -> Result<StepGrads> {
    let d = p.hidden();
    if t.cat.len() != p.w.cols() || t.h.len() != d {
        return Err(Error::TraceMismatch(format!(
            "rnn trace has input of length {}, parameters expect {}",
            t.cat.len(),
            p.w.cols()
        )));
    }
    check_len("rnn grad_h", d, grad_h.len())?;
    let da: Vec<f64> = (0..d).map(|k| grad_h[k] * (1.0 - t.h[k] * t.h[k])).collect();
    numeric::outer_acc(&mut grads.w, &da, &t.cat);
    numeric::add_assign(&mut grads.b, &da);
    let mut dcat = vec![0.0; t.cat.len()];
    numeric::matvec_t_acc(&p.w, &da, &mut dcat);
    let x = Vector::from(dcat.split_off(d));
    Ok(StepGrads {
        h_prev: Vector::from(dcat),
        c_prev: Vector::default(),
        x,
    })
}
