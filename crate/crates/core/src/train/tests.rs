use std::path::Path;

use super::*;
use crate::autodiff::{grad_check, Tape};
use crate::cells::{CellKind, TimeGateWeights};
use crate::config::{DataConfig, ExperimentConfig, TaskKind};
use crate::data::{EventSequence, NextEventExample};
use crate::error::Error;
use crate::models::{EmbedSpec, ModelKind, ModelParams, ModelSpec, T2vInit};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// A model whose only trainable tensors are `dense.theta` (1×2) and
/// `dense.b` (1×1).
fn fixed_probe() -> ModelParams {
    let mut e = EmbedSpec::new(1);
    e.init = T2vInit::Fourier;
    let mut p = ModelParams::init(&ModelSpec::t2v_dense(e), 0).unwrap();
    p.dense.theta = Tensor::zeros(1, 2);
    p
}

fn grads(theta: [f64; 2], b: f64) -> Vec<Tensor> {
    vec![Tensor::row(&theta).unwrap(), Tensor::scalar(b).unwrap()]
}

fn opt(kind: OptimizerKind, lr: f64) -> OptimizerState {
    OptimizerState::new(OptimizerConfig { kind, lr }).unwrap()
}

#[test]
fn sgd_step() {
    let mut p = fixed_probe();
    opt(OptimizerKind::Sgd, 0.1)
        .step(&mut p, &grads([1.0, 0.0], 0.0))
        .unwrap();
    assert_eq!(p.dense.theta.data(), &[-0.1, 0.0]);
}

#[test]
fn first_adam_step() {
    let mut p = fixed_probe();
    let mut o = opt(OptimizerKind::Adam, 0.001);
    o.step(&mut p, &grads([1.0, -3.0], 0.0)).unwrap();
    // bias-corrected moments equal g and g², so the step is lr·g/(|g| + 1e-8)
    assert!((p.dense.theta.get(0, 0) + 0.0009999999900000003).abs() < 1e-18);
    assert!((p.dense.theta.get(0, 1) - 0.001 * 3.0 / (3.0 + 1e-8)).abs() < 1e-18);
    assert_eq!(o.step, 1);
}

#[test]
fn zero_gradients_leave_parameters_unchanged() {
    for kind in [OptimizerKind::Adam, OptimizerKind::Adagrad, OptimizerKind::Sgd] {
        let mut p = fixed_probe();
        p.dense.theta = Tensor::row(&[0.3, -0.2]).unwrap();
        let before = p.clone();
        let mut o = opt(kind, 0.5);
        for _ in 0..3 {
            o.step(&mut p, &grads([0.0, 0.0], 0.0)).unwrap();
        }
        assert_eq!(p, before, "{kind:?}");
    }
}

#[test]
fn adagrad_accumulates() {
    let mut p = fixed_probe();
    let mut o = opt(OptimizerKind::Adagrad, 0.01);
    o.step(&mut p, &grads([2.0, 0.0], 0.0)).unwrap();
    o.step(&mut p, &grads([2.0, 0.0], 0.0)).unwrap();
    let expected = -0.01 * 2.0 / (2.0 + 1e-8) - 0.01 * 2.0 / (8f64.sqrt() + 1e-8);
    assert!((p.dense.theta.get(0, 0) - expected).abs() < 1e-15);
}

#[test]
fn non_finite_gradient_names_the_tensor_and_changes_nothing() {
    let mut p = fixed_probe();
    let before = p.clone();
    let mut o = opt(OptimizerKind::Adam, 0.001);
    let mut g = grads([0.0, 0.0], 0.0);
    g[1] = Tensor::from_raw(1, 1, vec![f64::NAN]);
    let err = o.step(&mut p, &g).unwrap_err();
    assert!(matches!(&err, Error::Numeric(m) if m.contains("dense.b")), "{err}");
    assert_eq!(p, before);
    assert_eq!(o.step, 0);
    assert!(matches!(o.step(&mut p, &g[..1]), Err(Error::Contract(_))));
}

#[test]
fn updates_respect_the_time_gate_constraint() {
    let spec = ModelSpec::classifier(ModelKind::Tlstm3, 3, None, 2);
    let mut p = ModelParams::init(&spec, 1).unwrap();
    let mut g = Vec::new();
    p.visit_trainable(|name, d| {
        let v = if name == "cell.W_t1" { -100.0 } else { 0.0 };
        g.push(Tensor::from_raw(d.len(), 1, vec![v; d.len()]));
    });
    opt(OptimizerKind::Sgd, 1.0).step(&mut p, &g).unwrap();
    let cell = p.cell.as_ref().unwrap();
    assert_eq!(cell.kind, CellKind::Tlstm3);
    match &cell.time {
        Some(TimeGateWeights::Tlstm3 { gate1, .. }) => assert!(gate1.w.data().iter().all(|&v| v == 0.0)),
        _ => unreachable!(),
    }
    assert!(cell.check_constraints().is_ok());
}

#[test]
fn plain_losses() {
    assert!((bce_loss(0.5, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
    assert!((bce_loss(0.0, 1.0) - 27.631021115928547).abs() < 1e-9);
    assert!((xent_loss(&[0.3; 7], 2).unwrap() - 7f64.ln()).abs() < 1e-15);
    assert!((xent_loss(&[1000.0, 0.0], 0).unwrap()).abs() < 1e-12);
    assert!(xent_loss(&[1.0], 1).is_err());
}

#[test]
fn xent_gradient_matches_central_differences() {
    let mut rng = Rng::seed_from(4);
    for _ in 0..10 {
        let scores: Vec<f64> = (0..6).map(|_| rng.range(-3.0, 3.0)).collect();
        let y = rng.below(6) as usize;
        let theta = Tensor::column(&scores).unwrap();
        let report = grad_check(|tape: &mut Tape, s| tape.softmax_xent(s, &[y]), &theta, 1e-6).unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
        // the tape's value agrees with the plain loss
        let mut tape = Tape::new();
        let s = tape.constant(theta.clone());
        let l = tape.softmax_xent(s, &[y]).unwrap();
        assert!((tape.value(l).item() - xent_loss(&scores, y).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn rank_rules() {
    let scores = [0.1, 0.9, 0.5, 0.5, 0.3];
    let all = [0, 1, 2, 3, 4];
    let top = recall_mrr(&scores, 1, 1, &all).unwrap();
    assert!(top.hit && top.rr == 1.0);
    // ties broken toward the smaller id: 2 ranks before 3
    let second = recall_mrr(&scores, 2, 3, &all).unwrap();
    assert_eq!((second.rank, second.rr), (2, 0.5));
    let fourth = recall_mrr(&scores, 4, 3, &all).unwrap();
    assert_eq!((fourth.rank, fourth.hit, fourth.rr), (4, false, 0.0));
    assert!(matches!(recall_mrr(&scores, 4, 3, &[0, 1]), Err(Error::Contract(_))));
    assert!(matches!(recall_mrr(&scores, 1, 3, &[1, 1]), Err(Error::Contract(_))));
}

/// Sort-and-scan reference for [`recall_mrr`].
fn oracle(scores: &[f64], correct: usize, q: usize, sampled: &[usize]) -> (bool, f64) {
    let mut list = sampled.to_vec();
    list.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let rank = list.iter().position(|&i| i == correct).unwrap() + 1;
    if rank <= q {
        (true, 1.0 / rank as f64)
    } else {
        (false, 0.0)
    }
}

#[test]
fn rank_matches_sort_oracle() {
    let mut rng = Rng::seed_from(99);
    for _ in 0..1000 {
        let vocab = 5 + rng.below(60) as usize;
        // coarse scores force plenty of ties
        let scores: Vec<f64> = (0..vocab).map(|_| (rng.below(8) as f64) * 0.25).collect();
        let mut ids: Vec<usize> = (0..vocab).collect();
        rng.shuffle(&mut ids);
        let sampled = &ids[..1 + rng.below(vocab as u64) as usize];
        let correct = sampled[rng.below(sampled.len() as u64) as usize];
        let q = 1 + rng.below(12) as usize;
        let got = recall_mrr(&scores, correct, q, sampled).unwrap();
        assert_eq!((got.hit, got.rr), oracle(&scores, correct, q, sampled));
    }
}

#[test]
fn sampled_evaluation() {
    let vocab = 400;
    let n = 600;
    let mut rng = Rng::seed_from(5);
    let targets: Vec<usize> = (0..n).map(|_| rng.below(vocab) as usize).collect();
    let perfect: Vec<Vec<f64>> = targets
        .iter()
        .map(|&t| (0..vocab as usize).map(|i| if i == t { 1.0 } else { 0.0 }).collect())
        .collect();
    let r = evaluate_scores(&perfect, &targets, RankingConfig::default(), 1).unwrap();
    assert_eq!((r.recall_at_q, r.mrr_at_q), (1.0, 1.0));
    assert_eq!(r.lists, n * 20);

    let random: Vec<Vec<f64>> = (0..n).map(|_| (0..vocab).map(|_| rng.uniform()).collect()).collect();
    let r = evaluate_scores(&random, &targets, RankingConfig::default(), 2).unwrap();
    assert!((r.recall_at_q - 10.0 / 101.0).abs() < 0.02, "{r:?}");
    assert!(r.mrr_at_q <= r.recall_at_q);
    assert_eq!(
        r,
        evaluate_scores(&random, &targets, RankingConfig::default(), 2).unwrap()
    );

    let small = vec![vec![0.0; 50]];
    assert!(matches!(
        evaluate_scores(&small, &[0], RankingConfig::default(), 0),
        Err(Error::Config(_))
    ));
}

fn synthetic_config(epochs: usize, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        task: TaskKind::Synthetic,
        model: ModelSpec::t2v_dense(EmbedSpec::new(8)),
        optimizer: None,
        epochs,
        batch_size: Some(64),
        seed,
        data: DataConfig::Synthetic {
            noise_rate: 0.0,
            alpha: 1.0,
        },
        eval: RankingConfig::default(),
        deterministic: true,
        parity_reference: None,
    }
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn zero_epochs_returns_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let out = fit(&synthetic_config(0, 3), Some(dir.path())).unwrap();
    assert!(out.report.series.is_empty());
    assert_eq!(out.params, ModelParams::init(&out.config.model, 3).unwrap());
    let ck = crate::checkpoint::Checkpoint::load(&dir.path().join("final.json")).unwrap();
    assert_eq!(ck.epoch, 0);
    assert_eq!(ck.params().unwrap(), out.params);
    assert_eq!(
        read(&dir.path().join("metrics.csv")),
        format!("{CSV_HEADER}\n").into_bytes()
    );
}

#[test]
fn runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = synthetic_config(4, 11);
    let ra = fit(&cfg, Some(a.path())).unwrap();
    fit(&cfg, Some(b.path())).unwrap();
    for f in ["config.json", "metrics.csv", "best.json", "final.json"] {
        assert_eq!(read(&a.path().join(f)), read(&b.path().join(f)), "{f}");
    }
    let csv = String::from_utf8(read(&a.path().join("metrics.csv"))).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 4);
    assert!(csv.lines().nth(2).unwrap().starts_with("1,test,"));
    assert_eq!(ra.report.series.len(), 8);
    // the echo reproduces the run
    let echoed = ExperimentConfig::load(&a.path().join("config.json")).unwrap();
    assert_eq!(fit(&echoed, None).unwrap().params, ra.params);
}

#[test]
fn divergence_aborts_with_partial_logs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = synthetic_config(50, 2);
    cfg.optimizer = Some(OptimizerConfig {
        kind: OptimizerKind::Sgd,
        lr: f64::MAX,
    });
    let err = fit(&cfg, Some(dir.path())).unwrap_err();
    assert!(matches!(err, Error::Numeric(_)), "{err}");
    let csv = String::from_utf8(read(&dir.path().join("metrics.csv"))).unwrap();
    assert!(csv.starts_with(CSV_HEADER));
    assert!(dir.path().join("config.json").exists());
}

#[test]
fn evaluation_does_not_touch_parameters() {
    let cfg = synthetic_config(0, 1).resolve().unwrap();
    let data = TrainData::load(&cfg).unwrap();
    let p = ModelParams::init(&cfg.model, 1).unwrap();
    let sum = p.checksum();
    let e = evaluate(&p, &data, cfg.eval, 1).unwrap();
    assert_eq!(p.checksum(), sum);
    assert_eq!(e.samples, 92);
    assert!(e.accuracy.unwrap() >= 0.0 && e.accuracy.unwrap() <= 1.0);
}

#[test]
fn early_synthetic_loss_mostly_decreases() {
    let mut good = 0;
    for seed in 0..5 {
        let mut cfg = synthetic_config(5, seed);
        cfg.batch_size = Some(512);
        let out = fit(&cfg, None).unwrap();
        let losses: Vec<f64> = out
            .report
            .series
            .iter()
            .filter(|r| r.split == SplitName::Train)
            .map(|r| r.loss)
            .collect();
        good += usize::from(losses.windows(2).all(|w| w[1] <= w[0]));
    }
    assert!(good >= 4, "{good}/5");
}

fn toy_classification() -> TrainData {
    let mut rng = Rng::seed_from(8);
    let mut make = |n: usize| -> Vec<EventSequence> {
        (0..n)
            .map(|_| {
                let label = rng.below(3) as usize;
                let len = 2 + rng.below(6) as usize;
                let gap = 1.0 + label as f64;
                EventSequence {
                    times: (0..len).map(|i| i as f64 * gap).collect(),
                    events: None,
                    label: Some(label),
                }
            })
            .collect()
    };
    TrainData::Classify {
        train: make(300),
        test: make(60),
    }
}

#[test]
fn gradients_do_not_depend_on_threads_or_shard_count_beyond_rounding() {
    let data = toy_classification();
    let spec = ModelSpec::classifier(ModelKind::Tlstm1T2v, 5, Some(EmbedSpec::new(3)), 3);
    let p = ModelParams::init(&spec, 2).unwrap();
    let idx: Vec<usize> = (0..300).collect();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| batch_gradients(&p, &data, &idx, 64).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(3));
    // a different sharding changes only the summation order
    let whole = batch_gradients(&p, &data, &idx, 300).unwrap();
    for (a, b) in one.grads.iter().zip(&whole.grads) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
    assert!((one.loss_sum - whole.loss_sum).abs() < 1e-9);
}

#[test]
fn recurrent_classifier_learns_gap_lengths() {
    let data = toy_classification();
    let mut cfg = synthetic_config(30, 6);
    cfg.task = TaskKind::EventClassify;
    cfg.data = DataConfig::Jsonl {
        train: "unused.jsonl".into(),
        test: "unused.jsonl".into(),
        max_len: 200,
    };
    cfg.model = ModelSpec::classifier(ModelKind::LstmT, 8, None, 3);
    cfg.batch_size = Some(32);
    cfg.optimizer = Some(OptimizerConfig {
        kind: OptimizerKind::Adam,
        lr: 0.02,
    });
    let out = fit_on(&cfg.resolve().unwrap(), &data, None).unwrap();
    assert!(out.report.accuracy.unwrap() > 0.9, "{:?}", out.report.accuracy);
    assert_eq!(out.report.best_epoch.is_some(), true);
}

#[test]
fn next_event_training_reports_ranking_metrics() {
    // item i is always followed by item (i + 1) mod 120
    let mut rng = Rng::seed_from(3);
    let mut make = |n: usize| -> Vec<NextEventExample> {
        (0..n)
            .map(|_| {
                let start = rng.below(120) as usize;
                let len = 1 + rng.below(4) as usize;
                let events: Vec<usize> = (0..len).map(|i| (start + i) % 120).collect();
                NextEventExample {
                    prefix: EventSequence {
                        times: (0..len).map(|i| i as f64).collect(),
                        events: Some(events),
                        label: None,
                    },
                    target: (start + len) % 120,
                }
            })
            .collect()
    };
    let data = TrainData::NextEvent {
        train: make(600),
        test: make(100),
    };
    let mut cfg = synthetic_config(8, 0);
    cfg.task = TaskKind::NextEvent;
    cfg.data = DataConfig::Jsonl {
        train: "unused.jsonl".into(),
        test: "unused.jsonl".into(),
        max_len: 200,
    };
    let mut spec = ModelSpec::recommender(ModelKind::Tlstm3T2v, 16, Some(EmbedSpec::new(4)), 120);
    spec.item_embed_dim = 16;
    cfg.model = spec;
    cfg.batch_size = Some(32);
    cfg.eval.sample_times = 3;
    cfg.optimizer = Some(OptimizerConfig {
        kind: OptimizerKind::Adam,
        lr: 0.02,
    });
    let out = fit_on(&cfg.resolve().unwrap(), &data, None).unwrap();
    let last = out.report.series.last().unwrap();
    assert_eq!(last.split, SplitName::Test);
    assert!(last.accuracy.is_none());
    let (recall, mrr) = (out.report.recall_at_q.unwrap(), out.report.mrr_at_q.unwrap());
    assert!(mrr <= recall);
    assert!(recall > 0.5, "recall@10 {recall}");
}
