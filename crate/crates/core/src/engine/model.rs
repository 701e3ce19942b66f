//! Embedding → cell stack → softmax projection, unrolled over a token window.

use serde::{Deserialize, Serialize};

use crate::cells::{stack_backward_into, stack_step, CellKind, CellParams, CellShape, CellState, CellTrace, GateMask, StateGrad};
use crate::error::{Error, Result};
use crate::numeric::{self, init_uniform, Matrix, Rng, Vector};
use crate::params::{view, ParamSet, TensorView};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    #[default]
    Uniform,
    /// Every parameter zero; the model predicts the uniform distribution.
    Zeros,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub cell: CellKind,
    pub layers: usize,
    pub hidden: usize,
    /// Must equal `hidden` for LTM cells.
    pub embed_dim: usize,
    /// Filled in from the corpus when left at 0.
    pub vocab: usize,
    /// Reuse the embedding as the output projection (needs `embed_dim == hidden`).
    pub tie_embeddings: bool,
    pub gate_mask: GateMask,
    pub gate3_linear: bool,
    /// LTM only: per-gate biases.
    pub ltm_biases: bool,
    pub init: Init,
    /// Half-width of the uniform init; `1/sqrt(hidden)` when absent.
    pub init_bound: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            cell: CellKind::Ltm,
            layers: 2,
            hidden: 128,
            embed_dim: 128,
            vocab: 0,
            tie_embeddings: false,
            gate_mask: GateMask::CLOSED,
            gate3_linear: false,
            ltm_biases: false,
            init: Init::Uniform,
            init_bound: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.layers == 0 {
            return bad("layers must be at least 1".into());
        }
        if self.hidden == 0 || self.embed_dim == 0 {
            return bad("hidden and embed_dim must be at least 1".into());
        }
        if self.vocab < 2 {
            return bad(format!("vocab must be at least 2, got {}", self.vocab));
        }
        if self.cell == CellKind::Ltm && self.embed_dim != self.hidden {
            return bad(format!(
                "LTM adds the embedded token to its previous output, so embed_dim ({}) must equal hidden ({})",
                self.embed_dim, self.hidden
            ));
        }
        if self.tie_embeddings && self.embed_dim != self.hidden {
            return bad("tie_embeddings needs embed_dim == hidden".into());
        }
        if let Some(b) = self.init_bound {
            if !(b > 0.0 && b.is_finite()) {
                return bad(format!("init_bound must be positive and finite, got {b}"));
            }
        }
        Ok(())
    }

    pub fn bound(&self) -> f64 {
        self.init_bound.unwrap_or(1.0 / (self.hidden as f64).sqrt())
    }

    fn layer_shape(&self, l: usize) -> CellShape {
        CellShape {
            kind: self.cell,
            hidden: self.hidden,
            input: if l == 0 { self.embed_dim } else { self.hidden },
            ltm_biases: self.ltm_biases,
            gate3_linear: self.gate3_linear,
        }
    }
}

/// Model parameters. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    /// `vocab × embed_dim`
    pub embedding: Matrix,
    pub layers: Vec<CellParams>,
    /// `vocab × hidden`; `None` when tied to the embedding.
    pub proj: Option<Matrix>,
    pub proj_bias: Vector,
}

impl Model {
    /// Initializes from `rng`. Draw order: embedding, layers bottom-up, projection.
    pub fn new(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        if config.init == Init::Zeros {
            return Model::zeros(config);
        }
        let b = config.bound();
        let embedding = init_uniform(rng, config.vocab, config.embed_dim, b)?;
        let layers = (0..config.layers)
            .map(|l| CellParams::random(config.layer_shape(l), rng, b))
            .collect::<Result<Vec<_>>>()?;
        let proj = if config.tie_embeddings {
            None
        } else {
            Some(init_uniform(rng, config.vocab, config.hidden, b)?)
        };
        Ok(Model {
            proj_bias: Vector::zeros(config.vocab),
            config,
            embedding,
            layers,
            proj,
        })
    }

    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layers = (0..config.layers)
            .map(|l| CellParams::zeros(config.layer_shape(l)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Model {
            embedding: Matrix::zeros(config.vocab, config.embed_dim),
            layers,
            proj: (!config.tie_embeddings).then(|| Matrix::zeros(config.vocab, config.hidden)),
            proj_bias: Vector::zeros(config.vocab),
            config,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Model {
            config: self.config.clone(),
            embedding: Matrix::zeros(self.embedding.rows(), self.embedding.cols()),
            layers: self.layers.iter().map(CellParams::zeros_like).collect(),
            proj: self.proj.as_ref().map(|p| Matrix::zeros(p.rows(), p.cols())),
            proj_bias: Vector::zeros(self.proj_bias.len()),
        }
    }

    pub fn vocab(&self) -> usize {
        self.config.vocab
    }

    pub fn initial_states(&self) -> Vec<CellState> {
        self.layers.iter().map(CellParams::initial_state).collect()
    }

    fn output(&self) -> &Matrix {
        self.proj.as_ref().unwrap_or(&self.embedding)
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.len() < 2 {
            return Err(Error::SequenceTooShort { need: 2, got: tokens.len() });
        }
        let v = self.vocab();
        if let Some(&id) = tokens.iter().find(|&&id| id >= v) {
            return Err(Error::TokenOutOfRange { id, vocab: v });
        }
        Ok(())
    }

    fn check_states(&self, states: &[CellState]) -> Result<()> {
        let want = self.initial_states();
        if states.len() != want.len()
            || states
                .iter()
                .zip(&want)
                .any(|(s, w)| s.h.len() != w.h.len() || s.c.len() != w.c.len())
        {
            return Err(Error::Config("initial states do not match the model's layers".into()));
        }
        Ok(())
    }

    /// Log-softmax pieces for one step: returns probabilities and `-ln p[target]`.
    fn softmax_nll(&self, h: &[f64], target: usize) -> (Vec<f64>, f64) {
        let w = self.output();
        let mut logits = self.proj_bias.to_vec();
        let mut z = vec![0.0; w.rows()];
        numeric::matvec_into(w, h, &mut z);
        numeric::add_assign(&mut logits, &z);
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let target_logit = logits[target];
        let mut sum = 0.0;
        for l in logits.iter_mut() {
            *l = (*l - max).exp();
            sum += *l;
        }
        let nll = sum.ln() + max - target_logit;
        for l in logits.iter_mut() {
            *l /= sum;
        }
        (logits, nll)
    }

    /// Runs the window and keeps everything the backward pass needs.
    ///
    /// Step `t` reads `tokens[t]` and predicts `tokens[t + 1]`, so a window of
    /// `n` tokens yields `n - 1` loss terms. `init` defaults to the zero state.
    pub fn forward_sequence(&self, tokens: &[usize], init: Option<&[CellState]>) -> Result<ForwardPass> {
        self.check_tokens(tokens)?;
        let mut states = match init {
            Some(s) => {
                self.check_states(s)?;
                s.to_vec()
            }
            None => self.initial_states(),
        };
        let n = tokens.len() - 1;
        let mut steps = Vec::with_capacity(n);
        let mut per_step = Vec::with_capacity(n);
        let mut loss_sum = 0.0;
        for t in 0..n {
            let x = self.embedding.row(tokens[t]);
            let st = stack_step(&self.layers, &states, x, &self.config.gate_mask)?;
            let (probs, nll) = self.softmax_nll(&st.top_h, tokens[t + 1]);
            loss_sum += nll;
            per_step.push(nll);
            states = st.states;
            steps.push(StepCache {
                traces: st.traces,
                top_h: st.top_h,
                probs,
            });
        }
        Ok(ForwardPass {
            loss_sum,
            per_step_nll: per_step,
            final_states: states,
            tokens: tokens.to_vec(),
            steps,
        })
    }

    /// Loss of a window without caching traces. Matches
    /// [`forward_sequence`](Self::forward_sequence) bit for bit.
    pub fn score(&self, tokens: &[usize], init: Option<&[CellState]>) -> Result<Score> {
        self.check_tokens(tokens)?;
        let mut states = match init {
            Some(s) => {
                self.check_states(s)?;
                s.to_vec()
            }
            None => self.initial_states(),
        };
        let mut loss_sum = 0.0;
        let mut steps = 0;
        for w in tokens.windows(2) {
            let st = stack_step(&self.layers, &states, self.embedding.row(w[0]), &self.config.gate_mask)?;
            loss_sum += self.softmax_nll(&st.top_h, w[1]).1;
            steps += 1;
            states = st.states;
        }
        Ok(Score {
            loss_sum,
            steps,
            final_states: states,
        })
    }

    /// Gradient of `loss_scale · loss_sum` over the whole window.
    pub fn backward_sequence(&self, pass: &ForwardPass, loss_scale: f64) -> Result<Model> {
        let w = vec![loss_scale; pass.steps.len()];
        Ok(self.backward_weighted(pass, &w)?.params)
    }

    /// Gradient of `Σ_t weights[t] · nll_t`, plus the gradient with respect to
    /// each step's embedded input.
    pub fn backward_weighted(&self, pass: &ForwardPass, weights: &[f64]) -> Result<Backward> {
        let n = pass.steps.len();
        if weights.len() != n || pass.tokens.len() != n + 1 {
            return Err(Error::TraceMismatch(format!(
                "{} loss weights for a pass of {} steps",
                weights.len(),
                n
            )));
        }
        if let Some(s) = pass.steps.first() {
            if s.traces.len() != self.layers.len() || s.probs.len() != self.vocab() {
                return Err(Error::TraceMismatch("forward pass was produced by a different model shape".into()));
            }
        }
        let mut g = self.zeros_like();
        let mut carry: Vec<StateGrad> = self.layers.iter().map(StateGrad::zeros_for).collect();
        let mut input_grads = vec![Vector::default(); n];
        let d = self.config.hidden;
        let tied = self.proj.is_none();
        let mut dx_out = vec![Vector::default(); if tied { n } else { 0 }];
        for t in (0..n).rev() {
            let step = &pass.steps[t];
            let target = pass.tokens[t + 1];
            let mut dlogits = step.probs.clone();
            dlogits[target] -= 1.0;
            for v in dlogits.iter_mut() {
                *v *= weights[t];
            }
            let mut dh = vec![0.0; d];
            numeric::matvec_t_acc(self.output(), &dlogits, &mut dh);
            numeric::add_assign(&mut g.proj_bias, &dlogits);
            match g.proj.as_mut() {
                Some(gp) => numeric::outer_acc(gp, &dlogits, &step.top_h),
                None => dx_out[t] = Vector::from(dlogits),
            }
            let dx = stack_backward_into(
                &self.layers,
                &step.traces,
                &dh,
                &mut carry,
                &self.config.gate_mask,
                &mut g.layers,
            )?;
            let row = g.embedding.row_mut(pass.tokens[t]);
            numeric::add_assign(row, &dx);
            input_grads[t] = dx;
        }
        if tied {
            for (t, dl) in dx_out.iter().enumerate() {
                numeric::outer_acc(&mut g.embedding, dl, &pass.steps[t].top_h);
            }
        }
        Ok(Backward {
            params: g,
            input_grads,
        })
    }
}

impl ParamSet for Model {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut out = vec![view("embedding", &[self.embedding.rows(), self.embedding.cols()], self.embedding.as_slice())];
        for (l, layer) in self.layers.iter().enumerate() {
            for mut t in layer.tensors() {
                t.name = format!("layers.{l}.{}", t.name);
                out.push(t);
            }
        }
        if let Some(p) = &self.proj {
            out.push(view("proj", &[p.rows(), p.cols()], p.as_slice()));
        }
        out.push(view("proj_bias", &[self.proj_bias.len()], &self.proj_bias));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![self.embedding.as_mut_slice()];
        for layer in &mut self.layers {
            out.extend(layer.tensors_mut());
        }
        if let Some(p) = &mut self.proj {
            out.push(p.as_mut_slice());
        }
        out.push(&mut self.proj_bias[..]);
        out
    }
}

#[derive(Debug, Clone)]
pub struct StepCache {
    pub traces: Vec<CellTrace>,
    pub top_h: Vector,
    pub probs: Vec<f64>,
}

/// Output of [`Model::forward_sequence`].
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub loss_sum: f64,
    pub per_step_nll: Vec<f64>,
    pub final_states: Vec<CellState>,
    pub tokens: Vec<usize>,
    pub steps: Vec<StepCache>,
}

#[derive(Debug, Clone)]
pub struct Score {
    pub loss_sum: f64,
    pub steps: usize,
    pub final_states: Vec<CellState>,
}

#[derive(Debug, Clone)]
pub struct Backward {
    pub params: Model,
    /// `input_grads[t]` is the gradient with respect to the embedded token read at step `t`.
    pub input_grads: Vec<Vector>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(cell: CellKind, d: usize, v: usize) -> ModelConfig {
        ModelConfig {
            cell,
            layers: 2,
            hidden: d,
            embed_dim: d,
            vocab: v,
            init_bound: Some(0.5),
            ..ModelConfig::default()
        }
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = Model::zeros(cfg(CellKind::Ltm, 3, 4)).unwrap();
        let p = m.forward_sequence(&[0, 1, 2, 3, 0], None).unwrap();
        for nll in p.per_step_nll {
            assert!((nll - 4f64.ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn two_tokens_one_term() {
        let m = Model::new(cfg(CellKind::Gru, 3, 4), &mut Rng::new(1)).unwrap();
        let p = m.forward_sequence(&[2, 1], None).unwrap();
        assert_eq!(p.per_step_nll.len(), 1);
        assert_eq!(p.loss_sum, p.per_step_nll[0]);
    }

    #[test]
    fn rejects_bad_tokens() {
        let m = Model::zeros(cfg(CellKind::Rnn, 2, 3)).unwrap();
        assert!(matches!(m.forward_sequence(&[0, 3], None), Err(Error::TokenOutOfRange { id: 3, vocab: 3 })));
        assert!(matches!(m.forward_sequence(&[0], None), Err(Error::SequenceTooShort { .. })));
        assert!(matches!(m.forward_sequence(&[], None), Err(Error::SequenceTooShort { .. })));
    }

    #[test]
    fn score_matches_forward() {
        for kind in CellKind::ALL {
            let m = Model::new(cfg(kind, 4, 6), &mut Rng::new(3)).unwrap();
            let toks = [1, 5, 2, 0, 0, 3, 4];
            let a = m.forward_sequence(&toks, None).unwrap();
            let b = m.score(&toks, None).unwrap();
            assert_eq!(a.loss_sum, b.loss_sum);
            assert_eq!(a.final_states, b.final_states);
        }
    }

    #[test]
    fn ltm_needs_matching_embedding() {
        let mut c = cfg(CellKind::Ltm, 4, 5);
        c.embed_dim = 3;
        assert!(matches!(Model::new(c, &mut Rng::new(0)), Err(Error::Config(_))));
    }

    #[test]
    fn tensor_names_follow_layout() {
        let m = Model::zeros(cfg(CellKind::Rnn, 2, 3)).unwrap();
        let names: Vec<String> = m.tensors().into_iter().map(|t| t.name).collect();
        assert_eq!(
            names,
            ["embedding", "layers.0.w", "layers.0.b", "layers.1.w", "layers.1.b", "proj", "proj_bias"]
        );
    }
}
