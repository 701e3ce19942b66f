use ltmlab::cells::{CellKind, CellParams};
use ltmlab::data::{Corpus, Level};
use ltmlab::engine::{
    init_model, resume, train, truncated_gradient, Checkpoint, Model, ModelConfig, OptimizerConfig, RunReport,
    TrainConfig,
};
use ltmlab::harness::{gradcheck, GradcheckSpec};
use ltmlab::numeric::{relative_error, Matrix, Rng};
use ltmlab::params::ParamSet;
use ltmlab::Error;

// Straight-line reference forward pass. It shares nothing with the library
// beyond the parameter containers.

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn mv(m: &Matrix, v: &[f64]) -> Vec<f64> {
    (0..m.rows())
        .map(|r| (0..m.cols()).map(|c| m.get(r, c) * v[c]).sum())
        .collect()
}

fn cat(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().chain(b).copied().collect()
}

fn plus(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn reference_loss(model: &Model, tokens: &[usize]) -> f64 {
    let d = model.config.hidden;
    let n_layers = model.layers.len();
    let mut h = vec![vec![0.0; d]; n_layers];
    let mut c = vec![vec![0.0; d]; n_layers];
    let mut loss = 0.0;
    for w in tokens.windows(2) {
        let mut x: Vec<f64> = model.embedding.row(w[0]).to_vec();
        for l in 0..n_layers {
            let (hn, cn) = match &model.layers[l] {
                CellParams::Ltm(p) => {
                    let u = plus(&h[l], &x);
                    let l1: Vec<f64> = mv(&p.w1, &u).into_iter().map(sig).collect();
                    let l2: Vec<f64> = mv(&p.w2, &u).into_iter().map(sig).collect();
                    let cp: Vec<f64> = (0..d).map(|k| l1[k] * l2[k] + c[l][k]).collect();
                    let cc: Vec<f64> = mv(&p.w4, &cp).into_iter().map(sig).collect();
                    let l3: Vec<f64> = mv(&p.w3, &u).into_iter().map(sig).collect();
                    ((0..d).map(|k| cc[k] * l3[k]).collect(), cc)
                }
                CellParams::Lstm(p) => {
                    let z = cat(&h[l], &x);
                    let i: Vec<f64> = plus(&mv(&p.wi, &z), &p.bi).into_iter().map(sig).collect();
                    let f: Vec<f64> = plus(&mv(&p.wf, &z), &p.bf).into_iter().map(sig).collect();
                    let o: Vec<f64> = plus(&mv(&p.wo, &z), &p.bo).into_iter().map(sig).collect();
                    let g: Vec<f64> = plus(&mv(&p.wg, &z), &p.bg).into_iter().map(f64::tanh).collect();
                    let cc: Vec<f64> = (0..d).map(|k| f[k] * c[l][k] + i[k] * g[k]).collect();
                    ((0..d).map(|k| o[k] * cc[k].tanh()).collect(), cc)
                }
                CellParams::Gru(p) => {
                    let z0 = cat(&h[l], &x);
                    let z: Vec<f64> = plus(&mv(&p.wz, &z0), &p.bz).into_iter().map(sig).collect();
                    let r: Vec<f64> = plus(&mv(&p.wr, &z0), &p.br).into_iter().map(sig).collect();
                    let rh: Vec<f64> = (0..d).map(|k| r[k] * h[l][k]).collect();
                    let n: Vec<f64> = plus(&mv(&p.wn, &cat(&rh, &x)), &p.bn).into_iter().map(f64::tanh).collect();
                    ((0..d).map(|k| (1.0 - z[k]) * n[k] + z[k] * h[l][k]).collect(), vec![])
                }
                CellParams::Rnn(p) => {
                    let hn: Vec<f64> = plus(&mv(&p.w, &cat(&h[l], &x)), &p.b).into_iter().map(f64::tanh).collect();
                    (hn, vec![])
                }
            };
            x = hn.clone();
            h[l] = hn;
            c[l] = cn;
        }
        let out = model.proj.as_ref().unwrap_or(&model.embedding);
        let logits = plus(&mv(out, &x), &model.proj_bias);
        let z: f64 = logits.iter().map(|v| v.exp()).sum();
        loss += z.ln() - logits[w[1]];
    }
    loss
}

fn small(cell: CellKind, d: usize, vocab: usize, layers: usize) -> ModelConfig {
    ModelConfig {
        cell,
        layers,
        hidden: d,
        embed_dim: d,
        vocab,
        init_bound: Some(0.5),
        ..ModelConfig::default()
    }
}

fn random_tokens(seed: u64, n: usize, vocab: usize) -> Vec<usize> {
    let mut r = Rng::new(seed);
    (0..n).map(|_| r.below(vocab)).collect()
}

#[test]
fn forward_matches_reference_implementation() {
    for cell in CellKind::ALL {
        for seed in 0..3 {
            let model = init_model(small(cell, 5, 7, 2), seed).unwrap();
            let tokens = random_tokens(100 + seed, 13, 7);
            let got = model.forward_sequence(&tokens, None).unwrap().loss_sum;
            let want = reference_loss(&model, &tokens);
            assert!(
                (got - want).abs() <= 1e-10 * want.abs(),
                "{cell} seed {seed}: {got} vs {want}"
            );
            assert_eq!(model.score(&tokens, None).unwrap().loss_sum.to_bits(), got.to_bits());
        }
    }
}

#[test]
fn twelve_step_window_matches_finite_differences() {
    for cell in CellKind::ALL {
        let spec = GradcheckSpec {
            steps: 12,
            ..GradcheckSpec::new(cell, 11)
        };
        let r = gradcheck(&spec).unwrap();
        assert!(r.max_rel_err < 1e-5, "{cell}: {} at {:?}", r.max_rel_err, r.worst);
    }
}

#[test]
fn single_step_window_matches_finite_differences() {
    for cell in CellKind::ALL {
        let spec = GradcheckSpec {
            steps: 1,
            ..GradcheckSpec::new(cell, 5)
        };
        let r = gradcheck(&spec).unwrap();
        assert!(r.max_rel_err < 1e-5, "{cell}: {}", r.max_rel_err);
    }
}

#[test]
fn gradient_scales_linearly_with_loss() {
    for cell in CellKind::ALL {
        let model = init_model(small(cell, 4, 5, 2), 3).unwrap();
        let tokens = random_tokens(9, 10, 5);
        let pass = model.forward_sequence(&tokens, None).unwrap();
        let g1 = model.backward_sequence(&pass, 1.0).unwrap().flatten();
        let g2 = model.backward_sequence(&pass, 2.0).unwrap().flatten();
        for (a, b) in g1.iter().zip(&g2) {
            assert!(relative_error(2.0 * a, *b) < 1e-12, "{cell}: {a} {b}");
        }
    }
}

#[test]
fn zero_loss_scale_gives_zero_gradient() {
    for cell in CellKind::ALL {
        let spec = GradcheckSpec {
            loss_scale: 0.0,
            ..GradcheckSpec::new(cell, 2)
        };
        assert_eq!(gradcheck(&spec).unwrap().max_rel_err, 0.0);
    }
}

#[test]
fn full_length_truncation_is_exact_bptt() {
    let model = init_model(small(CellKind::Ltm, 4, 5, 2), 1).unwrap();
    let tokens = random_tokens(4, 17, 5);
    let pass = model.forward_sequence(&tokens, None).unwrap();
    let full = model.backward_sequence(&pass, 1.0).unwrap();
    let (loss, trunc) = truncated_gradient(&model, &tokens, 16, 1.0).unwrap();
    assert_eq!(loss, pass.loss_sum);
    assert_eq!(full.flatten(), trunc.flatten());
}

#[test]
fn carried_state_reproduces_the_unbroken_forward() {
    for cell in CellKind::ALL {
        let model = init_model(small(cell, 4, 5, 2), 6).unwrap();
        let tokens = random_tokens(8, 25, 5);
        let whole = model.score(&tokens, None).unwrap();
        let first = model.forward_sequence(&tokens[..=10], None).unwrap();
        let second = model.forward_sequence(&tokens[10..], Some(&first.final_states)).unwrap();
        let mut steps = first.per_step_nll.clone();
        steps.extend(&second.per_step_nll);
        let full = model.forward_sequence(&tokens, None).unwrap();
        assert_eq!(steps, full.per_step_nll);
        assert!((first.loss_sum + second.loss_sum - whole.loss_sum).abs() < 1e-12);
        assert_eq!(second.final_states, whole.final_states);
    }
}

#[test]
fn truncated_gradient_differs_from_full_only_through_cut_paths() {
    let model = init_model(small(CellKind::Ltm, 4, 5, 1), 2).unwrap();
    let tokens = random_tokens(3, 13, 5);
    let (_, cut) = truncated_gradient(&model, &tokens, 4, 1.0).unwrap();
    let (_, whole) = truncated_gradient(&model, &tokens, 12, 1.0).unwrap();
    assert_ne!(cut.flatten(), whole.flatten());
    let proj_cut = cut.proj.as_ref().unwrap().as_slice();
    let proj_whole = whole.proj.as_ref().unwrap().as_slice();
    // The output layer sees identical activations either way.
    for (a, b) in proj_cut.iter().zip(proj_whole) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn small_sgd_step_reduces_loss() {
    for cell in CellKind::ALL {
        let mut model = init_model(small(cell, 6, 8, 2), 4).unwrap();
        let tokens = random_tokens(12, 30, 8);
        let pass = model.forward_sequence(&tokens, None).unwrap();
        let grads = model.backward_sequence(&pass, 1.0).unwrap();
        let before = pass.loss_sum;
        let mut step = grads.clone();
        step.scale_all(-1e-4);
        model.add_from(&step);
        let after = model.score(&tokens, None).unwrap().loss_sum;
        assert!(after < before, "{cell}: {after} >= {before}");
    }
}

fn toy_corpus() -> Corpus {
    let text = "a quick brown fox jumps over the lazy dog. ".repeat(12);
    Corpus::from_texts(&text, "the lazy fox. ", "a brown dog. ", Level::Char, None).unwrap()
}

fn toy_train(epochs: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        bptt_len: 16,
        epochs,
        optimizer: OptimizerConfig::Adam {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        },
        ..TrainConfig::default()
    }
}

#[test]
fn zero_epochs_is_a_no_op() {
    let corpus = toy_corpus();
    let model = init_model(small(CellKind::Ltm, 8, corpus.vocab.len(), 2), 1).unwrap();
    let mut reports: Vec<RunReport> = Vec::new();
    let ck = train(model.clone(), &corpus, &toy_train(0), &mut reports).unwrap();
    assert!(reports.is_empty());
    assert_eq!(ck.model, model);
    assert_eq!(ck.epoch, 0);
}

#[test]
fn worker_count_does_not_change_results() {
    let corpus = toy_corpus();
    for cell in [CellKind::Ltm, CellKind::Lstm] {
        let model = init_model(small(cell, 8, corpus.vocab.len(), 2), 1).unwrap();
        let mut outs = Vec::new();
        for jobs in [1, 2, 3] {
            let cfg = TrainConfig { jobs, ..toy_train(2) };
            let mut reports: Vec<RunReport> = Vec::new();
            let mut ck = train(model.clone(), &corpus, &cfg, &mut reports).unwrap();
            ck.train.jobs = 1;
            outs.push((reports, ck.to_bytes().unwrap()));
        }
        assert_eq!(outs[0], outs[1]);
        assert_eq!(outs[0], outs[2]);
    }
}

#[test]
fn resuming_is_bit_exact() {
    let corpus = toy_corpus();
    let model = init_model(small(CellKind::Gru, 8, corpus.vocab.len(), 1), 2).unwrap();
    let mut straight: Vec<RunReport> = Vec::new();
    let full = train(model.clone(), &corpus, &toy_train(3), &mut straight).unwrap();

    let mut split: Vec<RunReport> = Vec::new();
    let half = train(model, &corpus, &toy_train(1), &mut split).unwrap();
    let mut restored = Checkpoint::from_bytes(&half.to_bytes().unwrap()).unwrap();
    restored.train.epochs = 3;
    let done = resume(restored, &corpus, &mut split).unwrap();
    assert_eq!(straight, split);
    assert_eq!(full.to_bytes().unwrap(), done.to_bytes().unwrap());
}

#[test]
fn training_lowers_the_loss_on_a_repetitive_corpus() {
    let corpus = toy_corpus();
    let model = init_model(small(CellKind::Ltm, 16, corpus.vocab.len(), 1), 3).unwrap();
    let mut reports: Vec<RunReport> = Vec::new();
    train(model, &corpus, &toy_train(5), &mut reports).unwrap();
    let train_nll: Vec<f64> = reports.iter().filter(|r| r.split == "train").map(|r| r.nll).collect();
    assert!(train_nll.last().unwrap() < &train_nll[0], "{train_nll:?}");
}

#[test]
fn exploding_initialization_stops_with_non_finite_loss() {
    let corpus = toy_corpus();
    let cfg = ModelConfig {
        init_bound: Some(1e300),
        ..small(CellKind::Rnn, 8, corpus.vocab.len(), 1)
    };
    let model = init_model(cfg, 1).unwrap();
    let err = train(model, &corpus, &toy_train(1), &mut Vec::<RunReport>::new()).unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { epoch: 1, window: 0, .. }), "{err}");
    assert!(err.is_numerical());
}

#[test]
fn mismatched_vocabulary_is_rejected() {
    let corpus = toy_corpus();
    let model = init_model(small(CellKind::Ltm, 4, corpus.vocab.len() + 1, 1), 1).unwrap();
    let err = train(model, &corpus, &toy_train(1), &mut Vec::<RunReport>::new()).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}
