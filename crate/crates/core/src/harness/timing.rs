//! Wall-clock cost of training and evaluation against window length.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::Corpus;
use crate::engine::{init_model, train, Model, ModelConfig, NullSink, TrainConfig};
use crate::error::{Error, Result};

/// Window lengths of the reference sequence-length table.
pub const TABLE_LENGTHS: [usize; 11] = [50, 100, 200, 250, 300, 350, 400, 450, 500, 600, 1000];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub len: usize,
    /// Seconds for one training epoch with `bptt_len = len`.
    pub train_time: f64,
    /// Seconds to score the test split in chained windows of `len`.
    pub eval_time: f64,
    /// Tokens scored during evaluation.
    pub eval_tokens: usize,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Scores `ids` in windows of `len` predictions, carrying state across them.
fn windowed_eval(model: &Model, ids: &[usize], len: usize) -> Result<usize> {
    let mut states = model.initial_states();
    let mut scored = 0;
    for (s, e) in crate::engine::windows(ids.len(), len) {
        let r = model.score(&ids[s..=e], Some(&states))?;
        scored += r.steps;
        states = r.final_states;
    }
    Ok(scored)
}

/// For each length, the median over `repeats` runs of one training epoch and
/// one windowed pass over the test split. Lengths must be ascending.
pub fn timing_sweep(
    lens: &[usize],
    model: &ModelConfig,
    train_cfg: &TrainConfig,
    corpus: &Corpus,
    repeats: usize,
) -> Result<Vec<TimingRow>> {
    if lens.is_empty() || lens.contains(&0) {
        return Err(Error::Config("timing lengths must be non-empty and positive".into()));
    }
    if lens.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("timing lengths must be strictly ascending".into()));
    }
    if repeats == 0 {
        return Err(Error::Config("repeats must be at least 1".into()));
    }
    let mut model = model.clone();
    if model.vocab == 0 {
        model.vocab = corpus.vocab.len();
    }
    // Validation is not part of the training time.
    let train_only = Corpus {
        valid: Vec::new(),
        ..corpus.clone()
    };
    let mut rows = Vec::with_capacity(lens.len());
    for &len in lens {
        let cfg = TrainConfig {
            bptt_len: len,
            epochs: 1,
            ..train_cfg.clone()
        };
        let (mut tt, mut et) = (Vec::new(), Vec::new());
        let mut eval_tokens = 0;
        for _ in 0..repeats {
            let m = init_model(model.clone(), cfg.seed)?;
            let started = Instant::now();
            let ckpt = train(m, &train_only, &cfg, &mut NullSink)?;
            tt.push(started.elapsed().as_secs_f64());
            let started = Instant::now();
            eval_tokens = windowed_eval(&ckpt.model, &corpus.test, len)?;
            et.push(started.elapsed().as_secs_f64());
        }
        rows.push(TimingRow {
            len,
            train_time: median(tt),
            eval_time: median(et),
            eval_tokens,
        });
    }
    Ok(rows)
}

/// `len,train_time,eval_time`.
pub fn write_timing_csv<W: Write>(rows: &[TimingRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["len", "train_time", "eval_time"])?;
    for r in rows {
        out.write_record([r.len.to_string(), r.train_time.to_string(), r.eval_time.to_string()])?;
    }
    out.flush().map_err(|e| Error::io("writing timing csv", e))
}
