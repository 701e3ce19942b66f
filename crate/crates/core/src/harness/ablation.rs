//! Gate-ablation sweep: one LTM per (mask, seed), test perplexity aggregated
//! per mask.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gradcheck::preflight;
use crate::cells::{CellKind, GateMask};
use crate::data::Corpus;
use crate::engine::{evaluate, init_model, train, ModelConfig, NullSink, TrainConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub mask: GateMask,
}

fn row(label: &str, open: &[usize]) -> AblationRow {
    AblationRow {
        label: label.to_string(),
        mask: GateMask::opened(open),
    }
}

pub const ALL_GATES: &str = "LTM with all gates";

/// The 13 configurations in reporting order: single gates opened, pairs,
/// triples, then the intact cell.
pub fn table_rows() -> Vec<AblationRow> {
    vec![
        row("Sigmoid_1", &[1]),
        row("Sigmoid_2", &[2]),
        row("Sigmoid_3", &[3]),
        row("Sigmoid_4", &[4]),
        row("Sigmoid_4 + Sigmoid_3", &[4, 3]),
        row("Sigmoid_1 + Sigmoid_2", &[1, 2]),
        row("Sigmoid_1 + Sigmoid_3", &[1, 3]),
        row("Sigmoid_1 + Sigmoid_4", &[1, 4]),
        row("Sigmoid_2 + Sigmoid_3", &[2, 3]),
        row("Sigmoid_2 + Sigmoid_4", &[2, 4]),
        row("Sigmoid_4 + Sigmoid_3 + Sigmoid_2", &[4, 3, 2]),
        row("Sigmoid_4 + Sigmoid_3 + Sigmoid_1", &[4, 3, 1]),
        row(ALL_GATES, &[]),
    ]
}

/// The two gate-pair removals next to the intact cell.
pub fn pair_removal_rows() -> Vec<AblationRow> {
    vec![
        row("LTM without Sigmoid_1 and Sigmoid_2 gates", &[1, 2]),
        row("LTM without Sigmoid_3 and Sigmoid_4 gates", &[3, 4]),
        row(ALL_GATES, &[]),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationPlan {
    pub rows: Vec<AblationRow>,
    pub seeds: Vec<u64>,
    /// Gate mask is overwritten per row; everything else is shared.
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Grid cells trained concurrently.
    pub jobs: usize,
}

impl AblationPlan {
    /// All 13 rows, seeds 1..=3, d = 64, two layers, batch 8, ten epochs.
    pub fn desk(vocab: usize) -> Self {
        AblationPlan {
            rows: table_rows(),
            seeds: vec![1, 2, 3],
            model: ModelConfig {
                cell: CellKind::Ltm,
                layers: 2,
                hidden: 64,
                embed_dim: 64,
                vocab,
                ..ModelConfig::default()
            },
            train: TrainConfig {
                batch_size: 8,
                epochs: 10,
                ..TrainConfig::default()
            },
            jobs: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.cell != CellKind::Ltm {
            return Err(Error::Config("gate ablation needs cell = ltm".into()));
        }
        if self.rows.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("ablation plan needs at least one row and one seed".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        self.model.validate()?;
        self.train.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub test_ppl: Option<f64>,
    /// Why the run produced no perplexity.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub label: String,
    pub mask: GateMask,
    /// Over the seeds that finished; NaN when none did.
    pub mean_ppl: f64,
    /// Sample standard deviation; 0 for a single finished seed.
    pub std_ppl: f64,
    pub runs: Vec<SeedOutcome>,
}

impl AblationResult {
    pub fn diverged(&self) -> usize {
        self.runs.iter().filter(|r| r.test_ppl.is_none()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub corpus_hash: String,
    pub plan: AblationPlan,
    pub rows: Vec<AblationResult>,
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn run_one(plan: &AblationPlan, corpus: &Corpus, mask: GateMask, seed: u64) -> SeedOutcome {
    let outcome = (|| -> Result<f64> {
        let model_cfg = ModelConfig {
            gate_mask: mask,
            ..plan.model.clone()
        };
        let train_cfg = TrainConfig {
            seed,
            jobs: 1,
            ..plan.train.clone()
        };
        let model = init_model(model_cfg, seed)?;
        let ckpt = train(model, corpus, &train_cfg, &mut NullSink)?;
        let m = evaluate(&ckpt.model, &corpus.test)?;
        if m.perplexity.is_finite() {
            Ok(m.perplexity)
        } else {
            Err(Error::NonFiniteLoss {
                epoch: train_cfg.epochs,
                window: 0,
                start: 0,
                end: corpus.test.len().saturating_sub(1),
                loss: m.nll_mean,
            })
        }
    })();
    match outcome {
        Ok(p) => SeedOutcome {
            seed,
            test_ppl: Some(p),
            error: None,
        },
        Err(e) if e.is_numerical() => SeedOutcome {
            seed,
            test_ppl: None,
            error: Some(e.to_string()),
        },
        Err(e) => SeedOutcome {
            seed,
            test_ppl: None,
            error: Some(format!("failed: {e}")),
        },
    }
}

/// Trains every (row, seed) pair and aggregates test perplexity per row.
/// A diverged run is recorded in its row and excluded from the mean.
pub fn run_ablation(plan: &AblationPlan, corpus: &Corpus) -> Result<AblationReport> {
    let mut plan = plan.clone();
    if plan.model.vocab == 0 {
        plan.model.vocab = corpus.vocab.len();
    }
    plan.validate()?;
    preflight(CellKind::Ltm)?;

    let grid: Vec<(usize, u64)> = (0..plan.rows.len())
        .flat_map(|r| plan.seeds.iter().map(move |&s| (r, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", plan.jobs)))?;
    let outcomes: Vec<SeedOutcome> = pool.install(|| {
        grid.par_iter()
            .map(|&(r, s)| run_one(&plan, corpus, plan.rows[r].mask, s))
            .collect()
    });

    let mut rows = Vec::with_capacity(plan.rows.len());
    for (r, spec) in plan.rows.iter().enumerate() {
        let runs: Vec<SeedOutcome> = outcomes[r * plan.seeds.len()..(r + 1) * plan.seeds.len()].to_vec();
        let ok: Vec<f64> = runs.iter().filter_map(|o| o.test_ppl).collect();
        let (mean_ppl, std_ppl) = mean_std(&ok);
        rows.push(AblationResult {
            label: spec.label.clone(),
            mask: spec.mask,
            mean_ppl,
            std_ppl,
            runs,
        });
    }
    Ok(AblationReport {
        corpus_hash: corpus.provenance.hash.clone(),
        plan,
        rows,
    })
}

impl AblationReport {
    /// `label,mean_ppl,std_ppl`, one line per row in plan order.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_rows_csv(self.rows.iter(), w)
    }

    /// The pair-removal view, built from rows with the same masks.
    pub fn pair_view(&self) -> Vec<AblationResult> {
        pair_removal_rows()
            .into_iter()
            .filter_map(|want| {
                self.rows.iter().find(|r| r.mask == want.mask).map(|r| AblationResult {
                    label: want.label,
                    ..r.clone()
                })
            })
            .collect()
    }

    pub fn write_pair_csv<W: Write>(&self, w: W) -> Result<()> {
        write_rows_csv(self.pair_view().iter(), w)
    }

    /// Label of the row with the lowest finite mean perplexity.
    pub fn best(&self) -> Option<&AblationResult> {
        self.rows
            .iter()
            .filter(|r| r.mean_ppl.is_finite())
            .min_by(|a, b| a.mean_ppl.total_cmp(&b.mean_ppl))
    }
}

fn write_rows_csv<'a, W: Write>(rows: impl Iterator<Item = &'a AblationResult>, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["label", "mean_ppl", "std_ppl"])?;
    for r in rows {
        out.write_record([r.label.clone(), r.mean_ppl.to_string(), r.std_ppl.to_string()])?;
    }
    out.flush().map_err(|e| Error::io("writing ablation csv", e))
}
