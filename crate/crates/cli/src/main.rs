//! `ltmlab` command-line entry point.
//!
//! Exit codes: 0 on success, 1 for invalid input or configuration, 2 for
//! numerical failures (non-finite loss, failed gradient check, bound
//! violation).

mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ltmlab::cells::CellKind;
use ltmlab::data::{load_corpus_with, Corpus, Level, Split, SplitFiles};
use ltmlab::engine::{evaluate, init_model, resume, Checkpoint, JsonlSink};
use ltmlab::harness::{
    gradcheck, run_ablation, stability_probe, table_rows, timing_sweep, write_probe_csv, write_timing_csv,
    AblationPlan, GradcheckSpec, ProbeConfig,
};
use ltmlab::{Error, Result};
use serde::Serialize;
use serde_json::json;

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "ltmlab", version, about = "Train and probe LTM and baseline recurrent language models")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML or JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dotted override applied last, e.g. `--set train.bptt_len=100`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory; nothing is written outside it.
    #[arg(long, global = true, env = "LTMLAB_OUT", default_value = "runs/latest")]
    out: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Corpus directory holding train.txt, valid.txt and test.txt.
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    level: Option<Level>,
    /// Vocabulary cap including `<unk>`.
    #[arg(long, global = true)]
    cap: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a language model; writes reports.jsonl and checkpoint.ltmc.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        cell: Option<CellKind>,
        /// Continue from a checkpoint; its model and training settings win.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a split with a saved checkpoint and print its perplexity.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// Compare analytic BPTT gradients with finite differences.
    Gradcheck {
        #[arg(long)]
        cell: Option<CellKind>,
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Run the 13-row gate ablation.
    Ablate,
    /// Gradient and state probe over long horizons.
    Probe {
        #[arg(long)]
        cell: Option<CellKind>,
        #[arg(long, value_delimiter = ',')]
        horizons: Option<Vec<usize>>,
        /// RNN recurrent gain.
        #[arg(long)]
        gain: Option<f64>,
    },
    /// Training and evaluation time against window length.
    Timing {
        #[arg(long, value_delimiter = ',')]
        lens: Option<Vec<usize>>,
        #[arg(long)]
        repeats: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

/// Layers named flags and `--set` overrides over the defaults and the file.
fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut tree = config::defaults_tree();
    if let Some(path) = &cli.common.config {
        config::merge(&mut tree, config::read_file(path)?);
    }
    let c = &cli.common;
    let mut flags = serde_json::Map::new();
    let mut put = |section: &str, key: &str, v: serde_json::Value| {
        flags
            .entry(section.to_string())
            .or_insert_with(|| json!({}))
            .as_object_mut()
            .expect("section is an object")
            .insert(key.to_string(), v);
    };
    if let Some(s) = c.seed {
        put("train", "seed", json!(s));
    }
    if let Some(j) = c.jobs {
        put("train", "jobs", json!(j));
        put("ablation", "jobs", json!(j));
    }
    if let Some(d) = &c.corpus {
        put("corpus", "dir", json!(d));
    }
    if let Some(l) = c.level {
        put("corpus", "level", json!(l));
    }
    if let Some(cap) = c.cap {
        put("corpus", "cap", json!(cap));
    }
    match &cli.command {
        Command::Train { epochs, cell, .. } => {
            if let Some(e) = epochs {
                put("train", "epochs", json!(e));
            }
            if let Some(k) = cell {
                put("model", "cell", json!(k));
            }
        }
        Command::Gradcheck { cell, seeds } => {
            if let Some(k) = cell {
                put("gradcheck", "cells", json!([k]));
            }
            if let Some(s) = seeds {
                put("gradcheck", "seeds", json!(s));
            }
        }
        Command::Probe { cell, horizons, gain } => {
            if let Some(k) = cell {
                put("probe", "cell", json!(k));
            }
            if let Some(h) = horizons {
                put("probe", "horizons", json!(h));
            }
            if let Some(g) = gain {
                put("probe", "rnn_gain", json!(g));
            }
        }
        Command::Timing { lens, repeats } => {
            if let Some(l) = lens {
                put("timing", "lens", json!(l));
            }
            if let Some(r) = repeats {
                put("timing", "repeats", json!(r));
            }
        }
        Command::Eval { .. } | Command::Ablate => {}
    }
    config::merge(&mut tree, serde_json::Value::Object(flags));
    for s in &c.set {
        config::set_path(&mut tree, s)?;
    }
    config::from_tree(tree)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn load(cfg: &RunConfig) -> Result<Corpus> {
    let files = SplitFiles {
        train: cfg.corpus.train_file.clone(),
        valid: cfg.corpus.valid_file.clone(),
        test: cfg.corpus.test_file.clone(),
    };
    load_corpus_with(&cfg.corpus.dir, &files, cfg.corpus.level, cfg.corpus.cap)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = resolve(&cli)?;
    let out = cli.common.out.clone();
    fs::create_dir_all(&out).map_err(|e| Error::io(format!("creating {}", out.display()), e))?;

    match &cli.command {
        Command::Train { resume: from, .. } => {
            let corpus = load(&cfg)?;
            let ckpt = match from {
                Some(path) => {
                    let mut ck = Checkpoint::load(path)?;
                    // Only the epoch budget and worker count may change on resume.
                    ck.train.epochs = cfg.train.epochs;
                    ck.train.jobs = cfg.train.jobs;
                    cfg.model = ck.model.config.clone();
                    cfg.train = ck.train.clone();
                    ck
                }
                None => {
                    if cfg.model.vocab == 0 {
                        cfg.model.vocab = corpus.vocab.len();
                    }
                    cfg.model.validate()?;
                    cfg.train.validate()?;
                    let model = init_model(cfg.model.clone(), cfg.train.seed)?;
                    Checkpoint::initial(model, cfg.train.clone(), Some(&corpus))
                }
            };
            snapshot(&cfg, &out)?;
            let mut sink = JsonlSink(create(&out.join("reports.jsonl"))?);
            let done = resume(ckpt, &corpus, &mut sink);
            sink.0
                .flush()
                .map_err(|e| Error::io("writing reports.jsonl", e))?;
            let done = done?;
            done.save(&out.join("checkpoint.ltmc"))?;
            let test = evaluate(&done.model, &corpus.test)?;
            println!(
                "epochs {} test nll {:.6} bpc {:.6} ppl {:.6}",
                done.epoch, test.nll_mean, test.bpc, test.perplexity
            );
        }
        Command::Eval { checkpoint, split } => {
            snapshot(&cfg, &out)?;
            let ck = Checkpoint::load(checkpoint)?;
            let corpus = load(&cfg)?;
            let ids: Vec<usize> = match &ck.vocab {
                // Re-encode with the training vocabulary so ids line up.
                Some(v) => {
                    let files = [&cfg.corpus.train_file, &cfg.corpus.valid_file, &cfg.corpus.test_file];
                    let name = match split {
                        Split::Train => files[0],
                        Split::Valid => files[1],
                        Split::Test => files[2],
                    };
                    let path = cfg.corpus.dir.join(name);
                    let text = fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
                    v.encode(&text)
                }
                None => corpus.split(*split).to_vec(),
            };
            let m = evaluate(&ck.model, &ids)?;
            write_json(&out.join("eval.json"), &m)?;
            println!("perplexity {}", m.perplexity);
            println!("bpc {}", m.bpc);
        }
        Command::Gradcheck { .. } => {
            snapshot(&cfg, &out)?;
            let g = &cfg.gradcheck;
            let mut reports = Vec::new();
            let mut failed = None;
            for &cell in &g.cells {
                for k in 0..g.seeds as u64 {
                    let spec = GradcheckSpec {
                        hidden: g.hidden,
                        layers: g.layers,
                        steps: g.steps,
                        vocab: g.vocab,
                        ..GradcheckSpec::new(cell, cfg.train.seed + k)
                    };
                    let r = gradcheck(&spec)?;
                    println!(
                        "{:<5} seed {:<3} max_rel_err {:.3e} ({} entries) {}",
                        cell.to_string(),
                        r.seed,
                        r.max_rel_err,
                        r.checked,
                        if r.passed() { "ok" } else { "FAIL" }
                    );
                    if !r.passed() && failed.is_none() {
                        failed = Some(Error::GradcheckFailed {
                            cell: cell.to_string(),
                            max_rel_err: r.max_rel_err,
                            tol: ltmlab::harness::GRADCHECK_TOL,
                        });
                    }
                    reports.push(r);
                }
            }
            write_json(&out.join("gradcheck.json"), &reports)?;
            if let Some(e) = failed {
                return Err(e);
            }
        }
        Command::Ablate => {
            snapshot(&cfg, &out)?;
            let corpus = load(&cfg)?;
            let a = &cfg.ablation;
            let mut plan = AblationPlan::desk(corpus.vocab.len());
            plan.rows = table_rows();
            plan.seeds = (0..a.seeds as u64).map(|k| cfg.train.seed + k).collect();
            plan.model = cfg.model.clone();
            plan.model.hidden = a.hidden;
            plan.model.embed_dim = a.hidden;
            plan.model.layers = a.layers;
            plan.train = cfg.train.clone();
            plan.train.batch_size = a.batch_size;
            plan.train.epochs = a.epochs;
            plan.jobs = a.jobs;
            let report = run_ablation(&plan, &corpus)?;
            report.write_csv(create(&out.join("ablation.csv"))?)?;
            report.write_pair_csv(create(&out.join("ablation_pairs.csv"))?)?;
            write_json(&out.join("ablation.json"), &report)?;
            for r in &report.rows {
                println!("{:<36} {:>10.4} ± {:.4}", r.label, r.mean_ppl, r.std_ppl);
            }
        }
        Command::Probe { .. } => {
            snapshot(&cfg, &out)?;
            let p = &cfg.probe;
            let pc = ProbeConfig {
                cell: p.cell,
                hidden: p.hidden,
                layers: p.layers,
                vocab: p.vocab,
                init_bound: p.init_bound,
                rnn_gain: p.rnn_gain,
                seed: cfg.train.seed,
            };
            let results = stability_probe(&pc, &p.horizons)?;
            write_probe_csv(&results, create(&out.join("probe.csv"))?)?;
            write_json(&out.join("probe.json"), &results)?;
            for r in &results {
                println!(
                    "T {:>6} grad_x1 {:.3e} grad_param {:.3e} c [{:.4}, {:.4}]",
                    r.horizon, r.grad_x1_norm, r.grad_param_norm, r.c_min, r.c_max
                );
            }
            if results.iter().any(|r| r.nan_seen) {
                return Err(Error::NonFiniteInput("probe state or gradient"));
            }
        }
        Command::Timing { .. } => {
            snapshot(&cfg, &out)?;
            let corpus = load(&cfg)?;
            let rows = timing_sweep(&cfg.timing.lens, &cfg.model, &cfg.train, &corpus, cfg.timing.repeats)?;
            write_timing_csv(&rows, create(&out.join("timing.csv"))?)?;
            write_json(&out.join("timing.json"), &rows)?;
            for r in &rows {
                println!("len {:>5} train {:.3}s eval {:.3}s", r.len, r.train_time, r.eval_time);
            }
        }
    }
    Ok(())
}

/// Writes the fully resolved configuration next to the outputs.
fn snapshot(cfg: &RunConfig, out: &Path) -> Result<()> {
    let text = cfg.to_toml()?;
    let path = out.join("config.resolved.toml");
    fs::write(&path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
