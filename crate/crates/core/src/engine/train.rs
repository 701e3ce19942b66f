//! Truncated-BPTT training over contiguous batch streams.
//!
//! The training split is cut into `batch_size` contiguous shards. Each shard
//! is a stream whose recurrent state is carried from one window to the next
//! and reset at the start of every epoch. A window of `bptt_len` predictions
//! is run on every stream, the per-stream gradients are summed in stream
//! order, and one optimizer update follows. Summation order never depends on
//! the worker count, so results are identical for any `jobs`.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::metrics::{evaluate, Metrics};
use super::model::Model;
use super::optim::{clip_grad_norm, Clip, OptimizerConfig};
use super::report::{ReportSink, RunReport};
use crate::cells::CellState;
use crate::data::Corpus;
use crate::error::{Error, Result};
use crate::numeric::Rng;
use crate::params::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrDecay {
    /// Multiply the learning rate by `factor` every `every` epochs.
    pub every: usize,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub bptt_len: usize,
    pub epochs: usize,
    pub optimizer: OptimizerConfig,
    pub grad_clip: Clip,
    pub lr_decay: Option<LrDecay>,
    pub seed: u64,
    /// Worker threads for the per-stream forward/backward.
    pub jobs: usize,
    /// Fill `seconds` in run reports.
    pub record_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            bptt_len: 64,
            epochs: 20,
            optimizer: OptimizerConfig::default(),
            grad_clip: Clip::Auto,
            lr_decay: None,
            seed: 1,
            jobs: 1,
            record_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.bptt_len == 0 {
            return Err(Error::Config("bptt_len must be at least 1".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        if let Some(d) = self.lr_decay {
            if d.every == 0 || !(d.factor > 0.0 && d.factor.is_finite()) {
                return Err(Error::Config("lr_decay needs every >= 1 and a positive factor".into()));
            }
        }
        self.optimizer.validate()
    }

    /// Learning rate in effect during 0-based epoch `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let lr = self.optimizer.lr();
        match self.lr_decay {
            Some(d) => lr * d.factor.powi((epoch / d.every) as i32),
            None => lr,
        }
    }
}

/// Initializes a model from the seed's `"init"` child stream.
pub fn init_model(config: super::model::ModelConfig, seed: u64) -> Result<Model> {
    Model::new(config, &mut Rng::new(seed).child("init"))
}

/// Splits `ids` into `batch` contiguous shards of equal length, dropping the tail.
pub fn shard(ids: &[usize], batch: usize) -> Result<Vec<&[usize]>> {
    let len = ids.len() / batch;
    if len < 2 {
        return Err(Error::SequenceTooShort {
            need: 2 * batch,
            got: ids.len(),
        });
    }
    Ok(ids.chunks_exact(len).take(batch).collect())
}

/// `[start, end]` token ranges (inclusive) of consecutive windows over a
/// stream of `len` tokens, each with at most `bptt` predictions.
pub fn windows(len: usize, bptt: usize) -> Vec<(usize, usize)> {
    (0..len.saturating_sub(1))
        .step_by(bptt)
        .map(|s| (s, (s + bptt).min(len - 1)))
        .collect()
}

/// Loss and gradient of one sequence under truncation: the stream is cut
/// into windows of `bptt` predictions, state flows forward across the cuts,
/// gradients do not. Returns the total loss and the summed gradient of
/// `loss_scale · loss`.
pub fn truncated_gradient(model: &Model, tokens: &[usize], bptt: usize, loss_scale: f64) -> Result<(f64, Model)> {
    if bptt == 0 {
        return Err(Error::Config("bptt_len must be at least 1".into()));
    }
    if tokens.len() < 2 {
        return Err(Error::SequenceTooShort { need: 2, got: tokens.len() });
    }
    let mut grads = model.zeros_like();
    let mut states = model.initial_states();
    let mut loss = 0.0;
    for (s, e) in windows(tokens.len(), bptt) {
        let pass = model.forward_sequence(&tokens[s..=e], Some(&states))?;
        grads.add_from(&model.backward_sequence(&pass, loss_scale)?);
        loss += pass.loss_sum;
        states = pass.final_states;
    }
    Ok((loss, grads))
}

struct StreamOut {
    loss: f64,
    grads: Model,
    states: Vec<CellState>,
}

fn report(epoch: usize, split: &str, m: Metrics, norms: Option<(f64, f64)>, seconds: Option<f64>) -> RunReport {
    RunReport {
        epoch,
        split: split.into(),
        nll: m.nll_mean,
        ppl: m.perplexity,
        bpc: m.bpc,
        grad_norm_mean: norms.map(|n| n.0),
        grad_norm_max: norms.map(|n| n.1),
        seconds,
    }
}

/// Trains a freshly initialized model for `cfg.epochs` epochs.
pub fn train(model: Model, corpus: &Corpus, cfg: &TrainConfig, sink: &mut dyn ReportSink) -> Result<Checkpoint> {
    let ckpt = Checkpoint::initial(model, cfg.clone(), Some(corpus));
    resume(ckpt, corpus, sink)
}

/// Continues training from `ckpt` until `ckpt.train.epochs` epochs are done.
pub fn resume(mut ckpt: Checkpoint, corpus: &Corpus, sink: &mut dyn ReportSink) -> Result<Checkpoint> {
    let cfg = ckpt.train.clone();
    cfg.validate()?;
    if ckpt.model.vocab() != corpus.vocab.len() {
        return Err(Error::Config(format!(
            "model vocabulary has {} entries, corpus has {}",
            ckpt.model.vocab(),
            corpus.vocab.len()
        )));
    }
    if let Some(v) = &ckpt.vocab {
        if v != &corpus.vocab {
            return Err(Error::Config("checkpoint vocabulary differs from the corpus vocabulary".into()));
        }
    }
    if ckpt.epoch >= cfg.epochs {
        return Ok(ckpt);
    }
    let streams = shard(&corpus.train, cfg.batch_size)?;
    let wins = windows(streams[0].len(), cfg.bptt_len);
    let clip = cfg.grad_clip.resolve(ckpt.model.config.cell);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", cfg.jobs)))?;

    while ckpt.epoch < cfg.epochs {
        let started = Instant::now();
        let lr = cfg.lr_at(ckpt.epoch);
        let mut states: Vec<Vec<CellState>> = vec![ckpt.model.initial_states(); streams.len()];
        let (mut loss_total, mut steps_total) = (0.0, 0usize);
        let (mut norm_sum, mut norm_max) = (0.0, 0.0f64);

        for (w, &(s, e)) in wins.iter().enumerate() {
            let count = (e - s) * streams.len();
            let scale = 1.0 / count as f64;
            let model = &ckpt.model;
            let run = |(stream, st): (&&[usize], &Vec<CellState>)| -> Result<StreamOut> {
                let pass = model.forward_sequence(&stream[s..=e], Some(st))?;
                let grads = model.backward_sequence(&pass, scale)?;
                Ok(StreamOut {
                    loss: pass.loss_sum,
                    grads,
                    states: pass.final_states,
                })
            };
            let outs: Vec<StreamOut> = if cfg.jobs == 1 {
                streams.iter().zip(&states).map(run).collect::<Result<_>>()?
            } else {
                pool.install(|| streams.par_iter().zip(states.par_iter()).map(run).collect::<Result<_>>())?
            };

            let mut grads = ckpt.model.zeros_like();
            let mut loss = 0.0;
            for (k, o) in outs.into_iter().enumerate() {
                loss += o.loss;
                grads.add_from(&o.grads);
                states[k] = o.states;
            }
            let norm = clip_grad_norm(&mut grads, clip);
            if !loss.is_finite() || !norm.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: ckpt.epoch + 1,
                    window: w,
                    start: s,
                    end: e,
                    loss: loss / count as f64,
                });
            }
            ckpt.optim.apply(&cfg.optimizer, lr, &mut ckpt.model, &grads);
            loss_total += loss;
            steps_total += count;
            norm_sum += norm;
            norm_max = norm_max.max(norm);
        }

        ckpt.epoch += 1;
        let train_m = Metrics::from_nll(loss_total / steps_total as f64, steps_total);
        let secs = cfg.record_time.then(|| started.elapsed().as_secs_f64());
        sink.emit(&report(
            ckpt.epoch,
            "train",
            train_m,
            Some((norm_sum / wins.len() as f64, norm_max)),
            secs,
        ))?;
        if corpus.valid.len() >= 2 {
            let started = Instant::now();
            let m = evaluate(&ckpt.model, &corpus.valid)?;
            if !m.nll_mean.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: ckpt.epoch,
                    window: 0,
                    start: 0,
                    end: corpus.valid.len() - 1,
                    loss: m.nll_mean,
                });
            }
            let secs = cfg.record_time.then(|| started.elapsed().as_secs_f64());
            sink.emit(&report(ckpt.epoch, "valid", m, None, secs))?;
        }
    }
    Ok(ckpt)
}
