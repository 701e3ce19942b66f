//! Evaluation metrics. Losses are nats everywhere else; conversion to bits
//! and perplexity happens only here.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use super::model::Model;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Number of predicted tokens.
    pub tokens: usize,
    /// Mean negative log-likelihood in nats.
    pub nll_mean: f64,
    pub perplexity: f64,
    pub bpc: f64,
}

impl Metrics {
    /// `bpc = nll / ln 2` and `perplexity = exp(bpc · ln 2)`, so the identity
    /// between the two holds bit for bit.
    pub fn from_nll(nll_mean: f64, tokens: usize) -> Self {
        let bpc = nll_mean / LN_2;
        Metrics {
            tokens,
            nll_mean,
            perplexity: (bpc * LN_2).exp(),
            bpc,
        }
    }
}

/// Scores `ids` as one stream from the zero state; no parameter is touched.
pub fn evaluate(model: &Model, ids: &[usize]) -> Result<Metrics> {
    if ids.is_empty() {
        return Err(Error::EmptyText);
    }
    let s = model.score(ids, None)?;
    Ok(Metrics::from_nll(s.loss_sum / s.steps as f64, s.steps))
}
