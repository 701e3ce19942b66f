use ltmlab::cells::{CellKind, GateMask};
use ltmlab::data::{Corpus, Level};
use ltmlab::engine::{ModelConfig, TrainConfig};
use ltmlab::harness::{
    mean_std, pair_removal_rows, run_ablation, stability_probe, table_rows, timing_sweep, write_probe_csv,
    write_timing_csv, AblationPlan, ProbeConfig, ALL_GATES, TABLE_LENGTHS,
};

fn toy_corpus() -> Corpus {
    let text = "she sells sea shells by the sea shore. ".repeat(10);
    Corpus::from_texts(&text, "sea shells. ", "the shore. ", Level::Char, None).unwrap()
}

fn tiny_plan(vocab: usize) -> AblationPlan {
    let mut plan = AblationPlan::desk(vocab);
    plan.model.hidden = 6;
    plan.model.embed_dim = 6;
    plan.model.layers = 1;
    plan.train = TrainConfig {
        batch_size: 4,
        bptt_len: 12,
        epochs: 1,
        ..TrainConfig::default()
    };
    plan
}

#[test]
fn table_has_thirteen_rows_ending_with_intact_cell() {
    let rows = table_rows();
    assert_eq!(rows.len(), 13);
    assert_eq!(rows[0].label, "Sigmoid_1");
    assert_eq!(rows[12].label, ALL_GATES);
    assert_eq!(rows[12].mask, GateMask::CLOSED);
    let mut masks: Vec<GateMask> = rows.iter().map(|r| r.mask).collect();
    masks.sort_by_key(|m| (m.open1, m.open2, m.open3, m.open4));
    masks.dedup();
    assert_eq!(masks.len(), 13);
    assert!(rows.iter().all(|r| r.mask.open_count() < 4));
}

#[test]
fn ablation_csv_lists_rows_in_order() {
    let corpus = toy_corpus();
    let mut plan = tiny_plan(corpus.vocab.len());
    plan.seeds = vec![1, 2];
    let report = run_ablation(&plan, &corpus).unwrap();
    let mut buf = Vec::new();
    report.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "label,mean_ppl,std_ppl");
    assert_eq!(lines.len(), 14);
    for (line, row) in lines[1..].iter().zip(table_rows()) {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_reader(line.as_bytes());
        let rec = rdr.records().next().unwrap().unwrap();
        assert_eq!(&rec[0], row.label);
        let mean: f64 = rec[1].parse().unwrap();
        let std: f64 = rec[2].parse().unwrap();
        assert!(mean.is_finite() && mean > 1.0);
        assert!(std >= 0.0);
    }
    assert!(report.rows.iter().all(|r| r.diverged() == 0));

    let pairs = report.pair_view();
    assert_eq!(pairs.len(), 3);
    for (p, want) in pairs.iter().zip(pair_removal_rows()) {
        assert_eq!(p.label, want.label);
        let src = report.rows.iter().find(|r| r.mask == want.mask).unwrap();
        assert_eq!(p.mean_ppl, src.mean_ppl);
    }
}

#[test]
fn single_seed_has_zero_spread() {
    let corpus = toy_corpus();
    let mut plan = tiny_plan(corpus.vocab.len());
    plan.rows.truncate(1);
    plan.seeds = vec![5];
    let report = run_ablation(&plan, &corpus).unwrap();
    assert_eq!(report.rows.len(), 1);
    assert_eq!(report.rows[0].std_ppl, 0.0);
    assert_eq!(report.rows[0].mean_ppl, report.rows[0].runs[0].test_ppl.unwrap());
}

#[test]
fn ablation_results_do_not_depend_on_jobs() {
    let corpus = toy_corpus();
    let mut plan = tiny_plan(corpus.vocab.len());
    plan.rows.truncate(3);
    plan.seeds = vec![1, 2];
    let a = run_ablation(&plan, &corpus).unwrap();
    plan.jobs = 3;
    let b = run_ablation(&plan, &corpus).unwrap();
    assert_eq!(a.rows, b.rows);
}

#[test]
fn diverged_runs_are_recorded_and_excluded() {
    let corpus = toy_corpus();
    let mut plan = tiny_plan(corpus.vocab.len());
    plan.rows.truncate(2);
    plan.seeds = vec![1];
    plan.model.init_bound = Some(1e300);
    let report = run_ablation(&plan, &corpus).unwrap();
    for r in &report.rows {
        assert_eq!(r.diverged(), 1);
        assert!(r.mean_ppl.is_nan());
        assert!(r.runs[0].error.is_some());
    }
    assert!(report.best().is_none());
}

#[test]
fn ablation_needs_ltm() {
    let corpus = toy_corpus();
    let mut plan = tiny_plan(corpus.vocab.len());
    plan.model.cell = CellKind::Gru;
    assert!(run_ablation(&plan, &corpus).is_err());
}

#[test]
fn mean_std_uses_sample_deviation() {
    let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
    assert_eq!(m, 2.0);
    assert_eq!(s, 1.0);
    assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
}

#[test]
fn ltm_probe_stays_in_bounds() {
    let cfg = ProbeConfig {
        hidden: 16,
        ..ProbeConfig::default()
    };
    let res = stability_probe(&cfg, &[10, 200]).unwrap();
    for r in &res {
        assert!(!r.nan_seen);
        assert!(r.c_min > 0.0 && r.c_max < 1.0);
        assert!(r.cp_min.unwrap() >= 0.0 && r.cp_max.unwrap() < 2.0);
    }
}

#[test]
fn high_gain_rnn_gradient_explodes() {
    let cfg = ProbeConfig {
        cell: CellKind::Rnn,
        rnn_gain: Some(1.5),
        ..ProbeConfig::default()
    };
    let res = stability_probe(&cfg, &[10, 1000]).unwrap();
    assert!(res[1].grad_x1_norm > 1e6 * res[0].grad_x1_norm.max(1e-300), "{res:?}");
    assert!(res[1].grad_x1_norm > 1e6 || !res[1].grad_x1_norm.is_finite());
}

#[test]
fn probe_csv_header() {
    let res = stability_probe(
        &ProbeConfig {
            cell: CellKind::Lstm,
            hidden: 8,
            ..ProbeConfig::default()
        },
        &[5, 10],
    )
    .unwrap();
    let mut buf = Vec::new();
    write_probe_csv(&res, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("T,grad_x1_norm,grad_param_norm,c_min,c_max,nan\n"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn gain_is_rejected_for_gated_cells() {
    let cfg = ProbeConfig {
        rnn_gain: Some(1.5),
        hidden: 8,
        ..ProbeConfig::default()
    };
    assert!(stability_probe(&cfg, &[5]).is_err());
}

fn timing_model(vocab: usize) -> ModelConfig {
    ModelConfig {
        hidden: 4,
        embed_dim: 4,
        layers: 1,
        vocab,
        ..ModelConfig::default()
    }
}

#[test]
fn timing_sweep_covers_every_length() {
    let text = "abcdefgh ".repeat(300);
    let corpus = Corpus::from_texts(&text, "abc", &"hgfedcba ".repeat(150), Level::Char, None).unwrap();
    let cfg = TrainConfig {
        batch_size: 2,
        ..TrainConfig::default()
    };
    let rows = timing_sweep(&TABLE_LENGTHS, &timing_model(corpus.vocab.len()), &cfg, &corpus, 1).unwrap();
    assert_eq!(rows.len(), 11);
    for (r, len) in rows.iter().zip(TABLE_LENGTHS) {
        assert_eq!(r.len, len);
        assert_eq!(r.eval_tokens, corpus.test.len() - 1);
        assert!(r.train_time >= 0.0 && r.eval_time >= 0.0);
    }
    let mut buf = Vec::new();
    write_timing_csv(&rows, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("len,train_time,eval_time\n"));
    assert_eq!(text.lines().count(), 12);
}

#[test]
fn timing_lengths_must_ascend() {
    let corpus = toy_corpus();
    let m = timing_model(corpus.vocab.len());
    let cfg = TrainConfig {
        batch_size: 2,
        ..TrainConfig::default()
    };
    assert!(timing_sweep(&[100, 50], &m, &cfg, &corpus, 1).is_err());
    assert!(timing_sweep(&[50], &m, &cfg, &corpus, 0).is_err());
}

/// Wall-clock dependent; run with `--ignored` on an idle machine.
#[test]
#[ignore]
fn timing_trends_over_length() {
    let text = "abcdefgh ".repeat(4000);
    let corpus = Corpus::from_texts(&text, "abc", &"hgfedcba ".repeat(400), Level::Char, None).unwrap();
    let cfg = TrainConfig {
        batch_size: 4,
        ..TrainConfig::default()
    };
    let m = ModelConfig {
        hidden: 32,
        embed_dim: 32,
        layers: 1,
        vocab: corpus.vocab.len(),
        ..ModelConfig::default()
    };
    let rows = timing_sweep(&[50, 200, 1000], &m, &cfg, &corpus, 3).unwrap();
    eprintln!("{rows:?}");
    let per_token: Vec<f64> = rows.iter().map(|r| r.eval_time / r.eval_tokens as f64).collect();
    let (lo, hi) = per_token
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    assert!(hi <= 2.0 * lo, "eval time per token {per_token:?}");
    assert!(rows.windows(2).all(|w| w[1].train_time >= w[0].train_time), "train time {rows:?}");
}
