//! The Long Term Memory cell.
//!
//! One step, with `u = h_prev + x` and every gate a sigmoid unless opened:
//!
//! ```text
//! L1 = gate1(W1 u)          L2 = gate2(W2 u)
//! L' = L1 ⊙ L2              C' = L' + c_prev
//! C  = gate4(W4 C')         L3 = gate3(W3 u)
//! h  = C ⊙ L3
//! ```
//!
//! The cell state is never multiplied by a forget factor: `c_prev` enters
//! `C'` additively and is then squashed back into (0, 1) by gate 4.

use serde::{Deserialize, Serialize};

use super::{check_finite, check_len, CellState, GateMask, StepGrads};
use crate::error::{Error, Result};
use crate::numeric::{self, init_uniform, Matrix, Rng, Vector};
use crate::params::{view, ParamSet, TensorView};

/// What a gate does with its pre-activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum GateFn {
    Sigmoid,
    /// Identity on the pre-activation; only used for `L3` when the output
    /// gate is configured linear.
    Linear,
    /// Constant all-ones output. The weight product is not computed.
    Open,
}

pub(crate) fn gate_forward(w: &Matrix, b: Option<&Vector>, u: &[f64], f: GateFn) -> Vector {
    if f == GateFn::Open {
        return Vector::filled(w.rows(), 1.0);
    }
    let mut z = Vector::zeros(w.rows());
    numeric::matvec_into(w, u, &mut z);
    if let Some(b) = b {
        numeric::add_assign(&mut z, b);
    }
    if f == GateFn::Sigmoid {
        for v in z.iter_mut() {
            *v = numeric::sigmoid_scalar(*v);
        }
    }
    z
}

/// Backpropagates `dy` through `y = f(W u + b)`, accumulating into the weight
/// and bias gradients and into `du`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gate_backward(
    f: GateFn,
    w: &Matrix,
    gw: &mut Matrix,
    gb: Option<&mut Vector>,
    y: &[f64],
    u: &[f64],
    dy: &[f64],
    du: &mut [f64],
) {
    let dz: Vector = match f {
        GateFn::Open => return,
        GateFn::Linear => Vector::from(dy.to_vec()),
        GateFn::Sigmoid => dy
            .iter()
            .zip(y)
            .map(|(g, s)| g * s * (1.0 - s))
            .collect(),
    };
    numeric::outer_acc(gw, &dz, u);
    if let Some(gb) = gb {
        numeric::add_assign(gb, &dz);
    }
    numeric::matvec_t_acc(w, &dz, du);
}

/// Weights of one LTM cell of hidden size `d`. All four matrices are `d × d`
/// because the input is added to the previous output before each product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtmParams {
    pub w1: Matrix,
    pub w2: Matrix,
    pub w3: Matrix,
    pub w4: Matrix,
    pub b1: Option<Vector>,
    pub b2: Option<Vector>,
    pub b3: Option<Vector>,
    pub b4: Option<Vector>,
    /// Use `L3 = W3 u` without a sigmoid.
    pub gate3_linear: bool,
}

impl LtmParams {
    pub fn zeros(d: usize, biases: bool, gate3_linear: bool) -> Self {
        let b = || biases.then(|| Vector::zeros(d));
        LtmParams {
            w1: Matrix::zeros(d, d),
            w2: Matrix::zeros(d, d),
            w3: Matrix::zeros(d, d),
            w4: Matrix::zeros(d, d),
            b1: b(),
            b2: b(),
            b3: b(),
            b4: b(),
            gate3_linear,
        }
    }

    /// Weights uniform in `[-bound, bound]`; biases, when present, start at zero.
    pub fn random(d: usize, biases: bool, gate3_linear: bool, rng: &mut Rng, bound: f64) -> Result<Self> {
        let mut p = LtmParams::zeros(d, biases, gate3_linear);
        p.w1 = init_uniform(rng, d, d, bound)?;
        p.w2 = init_uniform(rng, d, d, bound)?;
        p.w3 = init_uniform(rng, d, d, bound)?;
        p.w4 = init_uniform(rng, d, d, bound)?;
        Ok(p)
    }

    pub fn hidden(&self) -> usize {
        self.w1.rows()
    }

    pub fn zeros_like(&self) -> Self {
        LtmParams::zeros(self.hidden(), self.b1.is_some(), self.gate3_linear)
    }

    fn validate(&self) -> Result<()> {
        let d = self.hidden();
        for (name, w) in [("w1", &self.w1), ("w2", &self.w2), ("w3", &self.w3), ("w4", &self.w4)] {
            if w.shape() != (d, d) {
                return Err(Error::Config(format!("ltm {name} is {:?}, expected ({d}, {d})", w.shape())));
            }
        }
        for b in [&self.b1, &self.b2, &self.b3, &self.b4].into_iter().flatten() {
            check_len("ltm bias", d, b.len())?;
        }
        Ok(())
    }

    fn gate_fns(&self, mask: &GateMask) -> [GateFn; 4] {
        let pick = |open: bool, closed: GateFn| if open { GateFn::Open } else { closed };
        let l3 = if self.gate3_linear { GateFn::Linear } else { GateFn::Sigmoid };
        [
            pick(mask.open1, GateFn::Sigmoid),
            pick(mask.open2, GateFn::Sigmoid),
            pick(mask.open3, l3),
            pick(mask.open4, GateFn::Sigmoid),
        ]
    }
}

impl ParamSet for LtmParams {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        let d = self.hidden();
        let mut out = vec![
            view("w1", &[d, d], self.w1.as_slice()),
            view("w2", &[d, d], self.w2.as_slice()),
            view("w3", &[d, d], self.w3.as_slice()),
            view("w4", &[d, d], self.w4.as_slice()),
        ];
        for (name, b) in [("b1", &self.b1), ("b2", &self.b2), ("b3", &self.b3), ("b4", &self.b4)] {
            if let Some(b) = b {
                out.push(view(name, &[d], b));
            }
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![
            self.w1.as_mut_slice(),
            self.w2.as_mut_slice(),
            self.w3.as_mut_slice(),
            self.w4.as_mut_slice(),
        ];
        for b in [&mut self.b1, &mut self.b2, &mut self.b3, &mut self.b4].into_iter().flatten() {
            out.push(&mut b[..]);
        }
        out
    }
}

/// Every intermediate activation of one LTM step.
#[derive(Debug, Clone, PartialEq)]
pub struct LtmStepTrace {
    pub x: Vector,
    pub h_prev: Vector,
    pub c_prev: Vector,
    pub l1: Vector,
    pub l2: Vector,
    /// `L1 ⊙ L2`
    pub lp: Vector,
    /// `L' + c_prev`
    pub cp: Vector,
    pub c: Vector,
    pub l3: Vector,
    pub h: Vector,
}

pub fn ltm_step(p: &LtmParams, s: &CellState, x: &[f64], mask: &GateMask) -> Result<(LtmStepTrace, CellState)> {
    p.validate()?;
    let d = p.hidden();
    check_len("ltm input", d, x.len())?;
    check_len("ltm h_prev", d, s.h.len())?;
    check_len("ltm c_prev", d, s.c.len())?;
    check_finite("ltm input", x)?;

    let [f1, f2, f3, f4] = p.gate_fns(mask);
    let u: Vec<f64> = s.h.iter().zip(x).map(|(h, x)| h + x).collect();
    let l1 = gate_forward(&p.w1, p.b1.as_ref(), &u, f1);
    let l2 = gate_forward(&p.w2, p.b2.as_ref(), &u, f2);
    let lp: Vector = l1.iter().zip(l2.iter()).map(|(a, b)| a * b).collect();
    let cp: Vector = lp.iter().zip(s.c.iter()).map(|(a, b)| a + b).collect();
    let c = gate_forward(&p.w4, p.b4.as_ref(), &cp, f4);
    let l3 = gate_forward(&p.w3, p.b3.as_ref(), &u, f3);
    let h: Vector = c.iter().zip(l3.iter()).map(|(a, b)| a * b).collect();

    let next = CellState { h: h.clone(), c: c.clone() };
    let trace = LtmStepTrace {
        x: Vector::from(x.to_vec()),
        h_prev: s.h.clone(),
        c_prev: s.c.clone(),
        l1,
        l2,
        lp,
        cp,
        c,
        l3,
        h,
    };
    Ok((trace, next))
}

/// Gradients of `grad_h · h_t + grad_c · C_t` for one step.
#[derive(Debug, Clone)]
pub struct LtmGradients {
    pub params: LtmParams,
    pub h_prev: Vector,
    pub c_prev: Vector,
    pub x: Vector,
}

pub fn ltm_backward(
    p: &LtmParams,
    trace: &LtmStepTrace,
    grad_h: &[f64],
    grad_c: &[f64],
    mask: &GateMask,
) -> Result<LtmGradients> {
    let mut params = p.zeros_like();
    let g = ltm_backward_into(p, trace, grad_h, grad_c, mask, &mut params)?;
    Ok(LtmGradients {
        params,
        h_prev: g.h_prev,
        c_prev: g.c_prev,
        x: g.x,
    })
}

/// As [`ltm_backward`], accumulating parameter gradients into `grads`.
pub fn ltm_backward_into(
    p: &LtmParams,
    trace: &LtmStepTrace,
    grad_h: &[f64],
    grad_c: &[f64],
    mask: &GateMask,
    grads: &mut LtmParams,
) -> Result<StepGrads> {
    let d = p.hidden();
    for (what, v) in [
        ("trace x", &trace.x),
        ("trace h_prev", &trace.h_prev),
        ("trace c", &trace.c),
        ("trace h", &trace.h),
    ] {
        if v.len() != d {
            return Err(Error::TraceMismatch(format!("{what} has length {}, cell has d = {d}", v.len())));
        }
    }
    check_len("ltm grad_h", d, grad_h.len())?;
    check_len("ltm grad_c", d, grad_c.len())?;
    if grads.hidden() != d || grads.b1.is_some() != p.b1.is_some() {
        return Err(Error::TraceMismatch("gradient buffer layout differs from parameters".into()));
    }

    let [f1, f2, f3, f4] = p.gate_fns(mask);
    let u: Vec<f64> = trace.h_prev.iter().zip(trace.x.iter()).map(|(h, x)| h + x).collect();
    let mut du = vec![0.0; d];

    // h = C ⊙ L3
    let mut dc: Vec<f64> = grad_c.to_vec();
    let mut dl3 = vec![0.0; d];
    for i in 0..d {
        dc[i] += grad_h[i] * trace.l3[i];
        dl3[i] = grad_h[i] * trace.c[i];
    }
    gate_backward(f3, &p.w3, &mut grads.w3, grads.b3.as_mut(), &trace.l3, &u, &dl3, &mut du);

    // C = gate4(W4 C')
    let mut dcp = vec![0.0; d];
    gate_backward(f4, &p.w4, &mut grads.w4, grads.b4.as_mut(), &trace.c, &trace.cp, &dc, &mut dcp);

    // C' = L' + c_prev, L' = L1 ⊙ L2
    let dl1: Vec<f64> = dcp.iter().zip(trace.l2.iter()).map(|(g, l)| g * l).collect();
    let dl2: Vec<f64> = dcp.iter().zip(trace.l1.iter()).map(|(g, l)| g * l).collect();
    gate_backward(f1, &p.w1, &mut grads.w1, grads.b1.as_mut(), &trace.l1, &u, &dl1, &mut du);
    gate_backward(f2, &p.w2, &mut grads.w2, grads.b2.as_mut(), &trace.l2, &u, &dl2, &mut du);

    Ok(StepGrads {
        h_prev: Vector::from(du.clone()),
        c_prev: Vector::from(dcp),
        x: Vector::from(du),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn zero_weights_give_the_quarter_pattern() {
        let p = LtmParams::zeros(3, false, false);
        let (t, s) = ltm_step(&p, &CellState::zeros(3, 3), &[0.0; 3], &GateMask::default()).unwrap();
        for i in 0..3 {
            assert_eq!(t.l1[i], 0.5);
            assert_eq!(t.l2[i], 0.5);
            assert_eq!(t.lp[i], 0.25);
            assert_eq!(t.cp[i], 0.25);
            assert_eq!(t.c[i], 0.5);
            assert_eq!(t.l3[i], 0.5);
            assert_eq!(t.h[i], 0.25);
        }
        assert_eq!(s.h, t.h);
        assert_eq!(s.c, t.c);
    }

    #[test]
    fn scalar_cell_matches_hand_computation() {
        // Computed at 30 digits: L1 = L2 = σ(1), L' = σ(1)², C = σ(L'), h = C·σ(1).
        let one = Matrix::identity(1);
        let mut p = LtmParams::zeros(1, false, false);
        p.w1 = one.clone();
        p.w2 = one.clone();
        p.w3 = one.clone();
        p.w4 = one;
        let (t, _) = ltm_step(&p, &CellState::zeros(1, 1), &[1.0], &GateMask::default()).unwrap();
        assert!(close(t.l1[0], 0.731_058_578_630_004_9, 1e-15));
        assert!(close(t.l2[0], 0.731_058_578_630_004_9, 1e-15));
        assert!(close(t.lp[0], 0.534_446_645_388_523_0, 1e-15));
        assert!(close(t.cp[0], 0.534_446_645_388_523_0, 1e-15));
        assert!(close(t.c[0], 0.630_519_622_912_954_0, 1e-15));
        assert!(close(t.l3[0], 0.731_058_578_630_004_9, 1e-15));
        assert!(close(t.h[0], 0.460_946_779_325_070_8, 1e-15));
    }

    #[test]
    fn open_gate4_pins_cell_state_to_one() {
        let mut rng = Rng::new(3);
        let p = LtmParams::random(4, true, false, &mut rng, 0.8).unwrap();
        let s = CellState {
            h: Vector::from(vec![0.1, 0.2, 0.3, 0.4]),
            c: Vector::from(vec![0.9, 0.1, 0.5, 0.5]),
        };
        let mask = GateMask { open4: true, ..Default::default() };
        let (t, next) = ltm_step(&p, &s, &[0.3, -0.2, 0.0, 1.0], &mask).unwrap();
        assert!(t.c.iter().all(|&v| v == 1.0));
        assert_eq!(t.h, t.l3);
        assert_eq!(next.c, Vector::filled(4, 1.0));
    }

    #[test]
    fn linear_output_gate_skips_the_sigmoid() {
        let mut p = LtmParams::zeros(1, false, true);
        p.w3 = Matrix::identity(1);
        let (t, _) = ltm_step(&p, &CellState::zeros(1, 1), &[2.0], &GateMask::default()).unwrap();
        assert_eq!(t.l3[0], 2.0);
        assert_eq!(t.h[0], 0.5 * 2.0);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = Rng::new(11);
        let p = LtmParams::random(5, true, false, &mut rng, 0.5).unwrap();
        let x: Vec<f64> = (0..5).map(|i| i as f64 * 0.1).collect();
        let (t, _) = ltm_step(&p, &CellState::zeros(5, 5), &x, &GateMask::default()).unwrap();
        let g = ltm_backward(&p, &t, &[0.0; 5], &[0.0; 5], &GateMask::default()).unwrap();
        assert_eq!(g.params.norm(), 0.0);
        assert_eq!(g.h_prev.norm() + g.c_prev.norm() + g.x.norm(), 0.0);
    }

    #[test]
    fn open_gate_has_zero_weight_gradient() {
        let mut rng = Rng::new(12);
        let p = LtmParams::random(5, false, false, &mut rng, 0.5).unwrap();
        let x = [0.2, -0.1, 0.4, 0.0, 0.3];
        for k in 1..=4 {
            let mask = GateMask::opened(&[k]);
            let (t, _) = ltm_step(&p, &CellState::zeros(5, 5), &x, &mask).unwrap();
            let g = ltm_backward(&p, &t, &[1.0; 5], &[0.5; 5], &mask).unwrap();
            let w = [&g.params.w1, &g.params.w2, &g.params.w3, &g.params.w4][k - 1];
            assert!(w.as_slice().iter().all(|&v| v == 0.0), "gate {k}");
        }
    }

    #[test]
    fn rejects_bad_input() {
        let p = LtmParams::zeros(3, false, false);
        let s = CellState::zeros(3, 3);
        assert!(ltm_step(&p, &s, &[0.0; 2], &GateMask::default()).is_err());
        assert!(ltm_step(&p, &s, &[0.0, f64::NAN, 0.0], &GateMask::default()).is_err());
        let (t, _) = ltm_step(&p, &s, &[0.0; 3], &GateMask::default()).unwrap();
        let other = LtmParams::zeros(4, false, false);
        assert!(matches!(
            ltm_backward(&other, &t, &[0.0; 4], &[0.0; 4], &GateMask::default()),
            Err(Error::TraceMismatch(_))
        ));
    }
}
