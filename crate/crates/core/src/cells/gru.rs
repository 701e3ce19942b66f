//! GRU with update gate `z` and reset gate `r`, in the concatenated form:
//!
//! ```text
//! z = σ(Wz [h_prev; x] + bz)
//! r = σ(Wr [h_prev; x] + br)
//! n = tanh(Wn [r ⊙ h_prev; x] + bn)
//! h = (1 - z) ⊙ n + z ⊙ h_prev
//! ```

use serde::{Deserialize, Serialize};

use super::{check_finite, check_len, CellState, StepGrads};
use crate::error::{Error, Result};
use crate::numeric::{self, init_uniform, Matrix, Rng, Vector};
use crate::params::{view, ParamSet, TensorView};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruParams {
    pub wz: Matrix,
    pub wr: Matrix,
    pub wn: Matrix,
    pub bz: Vector,
    pub br: Vector,
    pub bn: Vector,
}

impl GruParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        let w = || Matrix::zeros(hidden, hidden + input);
        GruParams {
            wz: w(),
            wr: w(),
            wn: w(),
            bz: Vector::zeros(hidden),
            br: Vector::zeros(hidden),
            bn: Vector::zeros(hidden),
        }
    }

    pub fn random(hidden: usize, input: usize, rng: &mut Rng, bound: f64) -> Result<Self> {
        let cols = hidden + input;
        let mut p = GruParams::zeros(hidden, input);
        p.wz = init_uniform(rng, hidden, cols, bound)?;
        p.wr = init_uniform(rng, hidden, cols, bound)?;
        p.wn = init_uniform(rng, hidden, cols, bound)?;
        Ok(p)
    }

    pub fn hidden(&self) -> usize {
        self.wz.rows()
    }

    pub fn input(&self) -> usize {
        self.wz.cols() - self.hidden()
    }

    pub fn zeros_like(&self) -> Self {
        GruParams::zeros(self.hidden(), self.input())
    }
}

impl ParamSet for GruParams {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        let (d, c) = self.wz.shape();
        vec![
            view("wz", &[d, c], self.wz.as_slice()),
            view("wr", &[d, c], self.wr.as_slice()),
            view("wn", &[d, c], self.wn.as_slice()),
            view("bz", &[d], &self.bz),
            view("br", &[d], &self.br),
            view("bn", &[d], &self.bn),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.wz.as_mut_slice(),
            self.wr.as_mut_slice(),
            self.wn.as_mut_slice(),
            &mut self.bz[..],
            &mut self.br[..],
            &mut self.bn[..],
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruStepTrace {
    pub x: Vector,
    pub h_prev: Vector,
    /// `[h_prev; x]`
    pub cat: Vector,
    pub z: Vector,
    pub r: Vector,
    /// `[r ⊙ h_prev; x]`
    pub reset_cat: Vector,
    pub n: Vector,
    pub h: Vector,
}

pub fn gru_step(p: &GruParams, s: &CellState, x: &[f64]) -> Result<(GruStepTrace, CellState)> {
    let d = p.hidden();
    check_len("gru input", p.input(), x.len())?;
    check_len("gru h_prev", d, s.h.len())?;
    check_finite("gru input", x)?;

    let cat = s.h.concat(x);
    let mut z = Vector::zeros(d);
    numeric::matvec_into(&p.wz, &cat, &mut z);
    numeric::add_assign(&mut z, &p.bz);
    let z = numeric::sigmoid(&z);
    let mut r = Vector::zeros(d);
    numeric::matvec_into(&p.wr, &cat, &mut r);
    numeric::add_assign(&mut r, &p.br);
    let r = numeric::sigmoid(&r);

    let rh: Vector = r.iter().zip(s.h.iter()).map(|(a, b)| a * b).collect();
    let reset_cat = rh.concat(x);
    let mut n = Vector::zeros(d);
    numeric::matvec_into(&p.wn, &reset_cat, &mut n);
    numeric::add_assign(&mut n, &p.bn);
    let n = numeric::tanh(&n);
    let h: Vector = (0..d).map(|k| (1.0 - z[k]) * n[k] + z[k] * s.h[k]).collect();

    let next = CellState {
        h: h.clone(),
        c: Vector::default(),
    };
    Ok((
        GruStepTrace {
            x: Vector::from(x.to_vec()),
            h_prev: s.h.clone(),
            cat,
            z,
            r,
            reset_cat,
            n,
            h,
        },
        next,
    ))
}

pub fn gru_backward_into(p: &GruParams, t: &GruStepTrace, grad_h: &[f64], grads: &mut GruParams) -> Result<StepGrads> {
    let d = p.hidden();
    if t.cat.len() != p.wz.cols() || t.h.len() != d {
        return Err(Error::TraceMismatch(format!(
            "gru trace has input of length {}, parameters expect {}",
            t.cat.len(),
            p.wz.cols()
        )));
    }
    check_len("gru grad_h", d, grad_h.len())?;

    let mut dh_prev: Vec<f64> = (0..d).map(|k| grad_h[k] * t.z[k]).collect();
    let dzn: Vec<f64> = (0..d)
        .map(|k| grad_h[k] * (1.0 - t.z[k]) * (1.0 - t.n[k] * t.n[k]))
        .collect();
    let dzz: Vec<f64> = (0..d)
        .map(|k| grad_h[k] * (t.h_prev[k] - t.n[k]) * t.z[k] * (1.0 - t.z[k]))
        .collect();

    numeric::outer_acc(&mut grads.wn, &dzn, &t.reset_cat);
    numeric::add_assign(&mut grads.bn, &dzn);
    let mut d_reset_cat = vec![0.0; t.reset_cat.len()];
    numeric::matvec_t_acc(&p.wn, &dzn, &mut d_reset_cat);
    let mut dx = d_reset_cat.split_off(d);
    let d_rh = d_reset_cat;

    let mut dzr = vec![0.0; d];
    for k in 0..d {
        dh_prev[k] += d_rh[k] * t.r[k];
        dzr[k] = d_rh[k] * t.h_prev[k] * t.r[k] * (1.0 - t.r[k]);
    }

    let mut dcat = vec![0.0; t.cat.len()];
    numeric::outer_acc(&mut grads.wz, &dzz, &t.cat);
    numeric::add_assign(&mut grads.bz, &dzz);
    numeric::matvec_t_acc(&p.wz, &dzz, &mut dcat);
    numeric::outer_acc(&mut grads.wr, &dzr, &t.cat);
    numeric::add_assign(&mut grads.br, &dzr);
    numeric::matvec_t_acc(&p.wr, &dzr, &mut dcat);

    numeric::add_assign(&mut dh_prev, &dcat[..d]);
    numeric::add_assign(&mut dx, &dcat[d..]);
    Ok(StepGrads {
        h_prev: Vector::from(dh_prev),
        c_prev: Vector::default(),
        x: Vector::from(dx),
    })
}
