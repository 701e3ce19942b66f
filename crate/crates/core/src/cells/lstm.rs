//! Standard LSTM over the concatenation `[h_prev; x]`.
//!
//! ```text
//! i = σ(Wi z + bi)   f = σ(Wf z + bf)   o = σ(Wo z + bo)   g = tanh(Wg z + bg)
//! c = f ⊙ c_prev + i ⊙ g
//! h = o ⊙ tanh(c)
//! ```

use serde::{Deserialize, Serialize};

use super::{check_finite, check_len, CellState, StepGrads};
use crate::error::{Error, Result};
use crate::numeric::{self, init_uniform, Matrix, Rng, Vector};
use crate::params::{view, ParamSet, TensorView};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub wi: Matrix,
    pub wf: Matrix,
    pub wo: Matrix,
    pub wg: Matrix,
    pub bi: Vector,
    pub bf: Vector,
    pub bo: Vector,
    pub bg: Vector,
}

impl LstmParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        let w = || Matrix::zeros(hidden, hidden + input);
        LstmParams {
            wi: w(),
            wf: w(),
            wo: w(),
            wg: w(),
            bi: Vector::zeros(hidden),
            bf: Vector::zeros(hidden),
            bo: Vector::zeros(hidden),
            bg: Vector::zeros(hidden),
        }
    }

    pub fn random(hidden: usize, input: usize, rng: &mut Rng, bound: f64) -> Result<Self> {
        let cols = hidden + input;
        let mut p = LstmParams::zeros(hidden, input);
        p.wi = init_uniform(rng, hidden, cols, bound)?;
        p.wf = init_uniform(rng, hidden, cols, bound)?;
        p.wo = init_uniform(rng, hidden, cols, bound)?;
        p.wg = init_uniform(rng, hidden, cols, bound)?;
        Ok(p)
    }

    pub fn hidden(&self) -> usize {
        self.wi.rows()
    }

    pub fn input(&self) -> usize {
        self.wi.cols() - self.hidden()
    }

    pub fn zeros_like(&self) -> Self {
        LstmParams::zeros(self.hidden(), self.input())
    }
}

impl ParamSet for LstmParams {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        let (d, c) = self.wi.shape();
        vec![
            view("wi", &[d, c], self.wi.as_slice()),
            view("wf", &[d, c], self.wf.as_slice()),
            view("wo", &[d, c], self.wo.as_slice()),
            view("wg", &[d, c], self.wg.as_slice()),
            view("bi", &[d], &self.bi),
            view("bf", &[d], &self.bf),
            view("bo", &[d], &self.bo),
            view("bg", &[d], &self.bg),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.wi.as_mut_slice(),
            self.wf.as_mut_slice(),
            self.wo.as_mut_slice(),
            self.wg.as_mut_slice(),
            &mut self.bi[..],
            &mut self.bf[..],
            &mut self.bo[..],
            &mut self.bg[..],
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmStepTrace {
    pub x: Vector,
    pub h_prev: Vector,
    pub c_prev: Vector,
    /// `[h_prev; x]`
    pub z: Vector,
    pub i: Vector,
    pub f: Vector,
    pub o: Vector,
    pub g: Vector,
    pub c: Vector,
    pub tanh_c: Vector,
    pub h: Vector,
}

fn affine(w: &Matrix, b: &Vector, z: &[f64]) -> Vector {
    let mut out = Vector::zeros(w.rows());
    numeric::matvec_into(w, z, &mut out);
    numeric::add_assign(&mut out, b);
    out
}

pub fn lstm_step(p: &LstmParams, s: &CellState, x: &[f64]) -> Result<(LstmStepTrace, CellState)> {
    let d = p.hidden();
    check_len("lstm input", p.input(), x.len())?;
    check_len("lstm h_prev", d, s.h.len())?;
    check_len("lstm c_prev", d, s.c.len())?;
    check_finite("lstm input", x)?;

    let z = s.h.concat(x);
    let i = numeric::sigmoid(&affine(&p.wi, &p.bi, &z));
    let f = numeric::sigmoid(&affine(&p.wf, &p.bf, &z));
    let o = numeric::sigmoid(&affine(&p.wo, &p.bo, &z));
    let g = numeric::tanh(&affine(&p.wg, &p.bg, &z));
    let c: Vector = (0..d).map(|k| f[k] * s.c[k] + i[k] * g[k]).collect();
    let tanh_c = numeric::tanh(&c);
    let h: Vector = o.iter().zip(tanh_c.iter()).map(|(a, b)| a * b).collect();

    let next = CellState { h: h.clone(), c: c.clone() };
    Ok((
        LstmStepTrace {
            x: Vector::from(x.to_vec()),
            h_prev: s.h.clone(),
            c_prev: s.c.clone(),
            z,
            i,
            f,
            o,
            g,
            c,
            tanh_c,
            h,
        },
        next,
    ))
}

pub fn lstm_backward_into(
    p: &LstmParams,
    t: &LstmStepTrace,
    grad_h: &[f64],
    grad_c: &[f64],
    grads: &mut LstmParams,
) -> Result<StepGrads> {
    let d = p.hidden();
    if t.z.len() != p.wi.cols() || t.h.len() != d {
        return Err(Error::TraceMismatch(format!(
            "lstm trace has z of length {}, parameters expect {}",
            t.z.len(),
            p.wi.cols()
        )));
    }
    check_len("lstm grad_h", d, grad_h.len())?;
    check_len("lstm grad_c", d, grad_c.len())?;

    let mut dzi = vec![0.0; d];
    let mut dzf = vec![0.0; d];
    let mut dzo = vec![0.0; d];
    let mut dzg = vec![0.0; d];
    let mut dc_prev = Vector::zeros(d);
    for k in 0..d {
        let dc = grad_c[k] + grad_h[k] * t.o[k] * (1.0 - t.tanh_c[k] * t.tanh_c[k]);
        let do_ = grad_h[k] * t.tanh_c[k];
        dzi[k] = dc * t.g[k] * t.i[k] * (1.0 - t.i[k]);
        dzf[k] = dc * t.c_prev[k] * t.f[k] * (1.0 - t.f[k]);
        dzo[k] = do_ * t.o[k] * (1.0 - t.o[k]);
        dzg[k] = dc * t.i[k] * (1.0 - t.g[k] * t.g[k]);
        dc_prev[k] = dc * t.f[k];
    }

    let mut dz = vec![0.0; t.z.len()];
    for (dzk, w, gw, gb) in [
        (&dzi, &p.wi, &mut grads.wi, &mut grads.bi),
        (&dzf, &p.wf, &mut grads.wf, &mut grads.bf),
        (&dzo, &p.wo, &mut grads.wo, &mut grads.bo),
        (&dzg, &p.wg, &mut grads.wg, &mut grads.bg),
    ] {
        numeric::outer_acc(gw, dzk, &t.z);
        numeric::add_assign(gb, dzk);
        numeric::matvec_t_acc(w, dzk, &mut dz);
    }
    let x = Vector::from(dz.split_off(d));
    Ok(StepGrads {
        h_prev: Vector::from(dz),
        c_prev: dc_prev,
        x,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_params_open_every_gate_halfway() {
        let p = LstmParams::zeros(3, 2);
        let (t, s) = lstm_step(&p, &CellState::zeros(3, 3), &[0.0, 0.0]).unwrap();
        for k in 0..3 {
            assert_eq!(t.i[k], 0.5);
            assert_eq!(t.f[k], 0.5);
            assert_eq!(t.o[k], 0.5);
            assert_eq!(t.g[k], 0.0);
        }
        assert_eq!(s.h, Vector::zeros(3));
    }

    #[test]
    fn forget_gate_scales_previous_cell() {
        // With i = 0 (large negative bias) the cell is f ⊙ c_prev.
        let mut p = LstmParams::zeros(1, 1);
        p.bi = Vector::from(vec![-800.0]);
        let s = CellState {
            h: Vector::zeros(1),
            c: Vector::from(vec![0.8]),
        };
        let (t, _) = lstm_step(&p, &s, &[0.0]).unwrap();
        assert!((t.c[0] - 0.4).abs() < 1e-12);
    }
}
