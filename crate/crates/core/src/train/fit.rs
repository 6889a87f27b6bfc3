use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{evaluate_scores, RankingConfig, RankingReport};
use super::optim::OptimizerState;
use crate::autodiff::{NodeId, Tape};
use crate::checkpoint::Checkpoint;
use crate::config::{DataConfig, ExperimentConfig, TaskKind};
use crate::data::{
    event_mnist_from_files, gen_synthetic, load_event_jsonl, next_event_examples, EventSequence, NextEventExample,
    SyntheticPoint,
};
use crate::error::{Error, Result};
use crate::fsio;
use crate::models::{sequence_logits, synthetic_logits, BoundModel, ModelParams};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Caps the worker threads used for batch-parallel forward/backward passes.
pub const THREADS_ENV: &str = "TEMPORAL_EMBED_THREADS";

pub const CSV_HEADER: &str = "epoch,split,loss,accuracy,recall_at_q,mrr_at_q";

/// Samples per gradient shard in deterministic mode. Shard boundaries and
/// the reduction order depend only on this constant, never on the thread
/// count.
const DETERMINISTIC_SHARD: usize = 128;
const EVAL_BATCH: usize = 512;

const SHUFFLE_STREAM: u64 = 0x7368_7566;
const EVAL_STREAM: u64 = 0x6576_616c;
/// Minimum wall time between metrics.csv rewrites during training.
const FLUSH_INTERVAL: Duration = Duration::from_secs(1);

/// Training and test samples for one task.
#[derive(Clone, Debug, PartialEq)]
pub enum TrainData {
    Synthetic {
        train: Vec<SyntheticPoint>,
        test: Vec<SyntheticPoint>,
    },
    Classify {
        train: Vec<EventSequence>,
        test: Vec<EventSequence>,
    },
    NextEvent {
        train: Vec<NextEventExample>,
        test: Vec<NextEventExample>,
    },
}

fn expand_next_event(seqs: &[EventSequence], max_len: usize) -> Result<Vec<NextEventExample>> {
    let mut out = Vec::new();
    for s in seqs {
        out.extend(next_event_examples(s, max_len)?);
    }
    Ok(out)
}

fn require_labels(seqs: &[EventSequence], what: &str) -> Result<()> {
    match seqs.iter().position(|s| s.label.is_none()) {
        Some(i) => Err(Error::Data(format!("{what} sequence {i} has no label"))),
        None => Ok(()),
    }
}

impl TrainData {
    /// Loads or generates the data a resolved config points at.
    pub fn load(config: &ExperimentConfig) -> Result<Self> {
        let data = match (&config.data, config.task) {
            (DataConfig::Synthetic { noise_rate, alpha }, _) => {
                let s = gen_synthetic(*noise_rate, *alpha, config.seed)?;
                TrainData::Synthetic {
                    train: s.train,
                    test: s.test,
                }
            }
            (
                DataConfig::EventMnist {
                    train_images,
                    train_labels,
                    test_images,
                    test_labels,
                    threshold,
                    train_limit,
                    test_limit,
                },
                _,
            ) => {
                let mut train = event_mnist_from_files(train_images, train_labels, *threshold)?.sequences;
                let mut test = event_mnist_from_files(test_images, test_labels, *threshold)?.sequences;
                if let Some(n) = train_limit {
                    train.truncate(*n);
                }
                if let Some(n) = test_limit {
                    test.truncate(*n);
                }
                TrainData::Classify { train, test }
            }
            (DataConfig::Jsonl { train, test, max_len }, task) => {
                let train = load_event_jsonl(train)?;
                let test = load_event_jsonl(test)?;
                match task {
                    TaskKind::Synthetic => TrainData::Synthetic {
                        train: train.iter().map(SyntheticPoint::from_sequence).collect::<Result<_>>()?,
                        test: test.iter().map(SyntheticPoint::from_sequence).collect::<Result<_>>()?,
                    },
                    TaskKind::EventClassify => {
                        require_labels(&train, "training")?;
                        require_labels(&test, "test")?;
                        TrainData::Classify { train, test }
                    }
                    TaskKind::NextEvent => TrainData::NextEvent {
                        train: expand_next_event(&train, *max_len)?,
                        test: expand_next_event(&test, *max_len)?,
                    },
                }
            }
        };
        if data.train_len() == 0 {
            return Err(Error::Data("no training samples".into()));
        }
        Ok(data)
    }

    pub fn train_len(&self) -> usize {
        match self {
            TrainData::Synthetic { train, .. } => train.len(),
            TrainData::Classify { train, .. } => train.len(),
            TrainData::NextEvent { train, .. } => train.len(),
        }
    }

    pub fn test_len(&self) -> usize {
        match self {
            TrainData::Synthetic { test, .. } => test.len(),
            TrainData::Classify { test, .. } => test.len(),
            TrainData::NextEvent { test, .. } => test.len(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Part {
    Train,
    Test,
}

/// Records the summed loss of the samples `idx` of one split.
/// Returns `(loss, logits)`; logits are `out×len`.
fn record_loss(
    tape: &mut Tape,
    bound: &BoundModel,
    params: &ModelParams,
    data: &TrainData,
    part: Part,
    idx: &[usize],
) -> Result<(NodeId, NodeId)> {
    match data {
        TrainData::Synthetic { train, test } => {
            let pts = if part == Part::Train { train } else { test };
            let taus: Vec<f64> = idx.iter().map(|&i| pts[i].tau).collect();
            let y: Vec<f64> = idx.iter().map(|&i| pts[i].label as f64).collect();
            let z = synthetic_logits(tape, bound, params, &taus)?;
            let p = tape.sigmoid(z);
            Ok((tape.bce(p, &y)?, z))
        }
        TrainData::Classify { train, test } => {
            let seqs = if part == Part::Train { train } else { test };
            let batch: Vec<&EventSequence> = idx.iter().map(|&i| &seqs[i]).collect();
            let labels: Vec<usize> = batch.iter().map(|s| s.label.unwrap_or(0)).collect();
            let z = sequence_logits(tape, bound, params, &batch)?;
            Ok((tape.softmax_xent(z, &labels)?, z))
        }
        TrainData::NextEvent { train, test } => {
            let ex = if part == Part::Train { train } else { test };
            let batch: Vec<&EventSequence> = idx.iter().map(|&i| &ex[i].prefix).collect();
            let targets: Vec<usize> = idx.iter().map(|&i| ex[i].target).collect();
            let z = sequence_logits(tape, bound, params, &batch)?;
            Ok((tape.softmax_xent(z, &targets)?, z))
        }
    }
}

/// Correct top-1 predictions among the logit columns.
fn count_correct(data: &TrainData, part: Part, idx: &[usize], logits: &Tensor) -> usize {
    let argmax = |j: usize| {
        let col = logits.col_values(j);
        // first maximum wins, so ties resolve to the smaller class
        (0..col.len()).fold(0, |best, c| if col[c] > col[best] { c } else { best })
    };
    idx.iter()
        .enumerate()
        .filter(|&(j, &i)| match data {
            TrainData::Synthetic { train, test } => {
                let pts = if part == Part::Train { train } else { test };
                u8::from(logits.get(0, j) > 0.0) == pts[i].label
            }
            TrainData::Classify { train, test } => {
                let seqs = if part == Part::Train { train } else { test };
                Some(argmax(j)) == seqs[i].label
            }
            TrainData::NextEvent { train, test } => {
                let ex = if part == Part::Train { train } else { test };
                argmax(j) == ex[i].target
            }
        })
        .count()
}

/// Summed loss, correct count and mean-reduced gradients of one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchGradients {
    /// Sum over the batch (not the mean).
    pub loss_sum: f64,
    pub correct: usize,
    /// `∂ mean-loss / ∂ θ`, in [`ModelParams::visit_trainable`] order.
    pub grads: Vec<Tensor>,
}

struct Shard {
    loss: f64,
    correct: usize,
    grads: Vec<Tensor>,
}

fn shard_gradients(params: &ModelParams, data: &TrainData, idx: &[usize]) -> Result<Shard> {
    let mut tape = Tape::new();
    let bound = BoundModel::bind(&mut tape, params, true);
    let (loss, logits) = record_loss(&mut tape, &bound, params, data, Part::Train, idx)?;
    let correct = count_correct(data, Part::Train, idx, tape.value(logits));
    let loss_value = tape.value(loss).item();
    let mut g = tape.backward(loss)?;
    let grads = bound
        .trainable()
        .iter()
        .map(|&id| {
            g.take(id).unwrap_or_else(|| {
                let (r, c) = tape.shape(id);
                Tensor::zeros(r, c)
            })
        })
        .collect();
    Ok(Shard {
        loss: loss_value,
        correct,
        grads,
    })
}

/// Gradients of the mean training loss over `idx`. Shards are processed in
/// parallel and reduced in index order.
pub fn batch_gradients(
    params: &ModelParams,
    data: &TrainData,
    idx: &[usize],
    shard_size: usize,
) -> Result<BatchGradients> {
    if idx.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    let shards: Vec<&[usize]> = idx.chunks(shard_size.max(1)).collect();
    let results: Vec<Result<Shard>> = shards.par_iter().map(|s| shard_gradients(params, data, s)).collect();
    let mut total: Option<Shard> = None;
    for r in results {
        let s = r?;
        total = Some(match total {
            None => s,
            Some(mut acc) => {
                acc.loss += s.loss;
                acc.correct += s.correct;
                for (a, g) in acc.grads.iter_mut().zip(&s.grads) {
                    for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                        *x += y;
                    }
                }
                acc
            }
        });
    }
    let total = total.expect("at least one shard");
    let scale = 1.0 / idx.len() as f64;
    Ok(BatchGradients {
        loss_sum: total.loss,
        correct: total.correct,
        grads: total.grads.into_iter().map(|g| g.map(|v| v * scale)).collect(),
    })
}

/// Metrics of one evaluation pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub samples: usize,
    pub loss: f64,
    pub accuracy: Option<f64>,
    pub ranking: Option<RankingReport>,
}

/// Evaluates on the test split. Parameters are only read; ranking lists
/// are drawn from a stream derived from `seed`.
pub fn evaluate(params: &ModelParams, data: &TrainData, ranking: RankingConfig, seed: u64) -> Result<EvalResult> {
    evaluate_part(params, data, Part::Test, ranking, seed)
}

fn evaluate_part(
    params: &ModelParams,
    data: &TrainData,
    part: Part,
    ranking: RankingConfig,
    seed: u64,
) -> Result<EvalResult> {
    let n = if part == Part::Train {
        data.train_len()
    } else {
        data.test_len()
    };
    if n == 0 {
        return Err(Error::Data("no samples to evaluate".into()));
    }
    let idx: Vec<usize> = (0..n).collect();
    let chunks: Vec<&[usize]> = idx.chunks(EVAL_BATCH).collect();
    let results: Vec<Result<(f64, usize, Option<Vec<Vec<f64>>>)>> = chunks
        .par_iter()
        .map(|c| {
            let mut tape = Tape::new();
            let bound = BoundModel::bind(&mut tape, params, false);
            let (loss, z) = record_loss(&mut tape, &bound, params, data, part, c)?;
            let logits = tape.value(z);
            let correct = count_correct(data, part, c, logits);
            let scores = matches!(data, TrainData::NextEvent { .. })
                .then(|| (0..logits.cols()).map(|j| logits.col_values(j)).collect());
            Ok((tape.value(loss).item(), correct, scores))
        })
        .collect();
    let (mut loss, mut correct, mut scores) = (0.0, 0, Vec::new());
    for r in results {
        let (l, c, s) = r?;
        loss += l;
        correct += c;
        scores.extend(s.into_iter().flatten());
    }
    let ranking = match data {
        TrainData::NextEvent { train, test } => {
            let ex = if part == Part::Train { train } else { test };
            let targets: Vec<usize> = ex.iter().map(|e| e.target).collect();
            Some(evaluate_scores(
                &scores,
                &targets,
                ranking,
                Rng::derived(seed, EVAL_STREAM).next_u64(),
            )?)
        }
        _ => None,
    };
    Ok(EvalResult {
        samples: n,
        loss: loss / n as f64,
        accuracy: ranking.is_none().then(|| correct as f64 / n as f64),
        ranking,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Test,
}

/// One row of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: SplitName,
    pub loss: f64,
    pub accuracy: Option<f64>,
    pub recall_at_q: Option<f64>,
    pub mrr_at_q: Option<f64>,
}

impl EpochMetrics {
    fn from_eval(epoch: usize, split: SplitName, e: &EvalResult) -> Self {
        EpochMetrics {
            epoch,
            split,
            loss: e.loss,
            accuracy: e.accuracy,
            recall_at_q: e.ranking.map(|r| r.recall_at_q),
            mrr_at_q: e.ranking.map(|r| r.mrr_at_q),
        }
    }
}

/// Final test metrics plus the per-epoch series.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub loss: Option<f64>,
    pub accuracy: Option<f64>,
    pub recall_at_q: Option<f64>,
    pub mrr_at_q: Option<f64>,
    pub q: Option<usize>,
    pub sample_times: Option<usize>,
    pub best_epoch: Option<usize>,
    pub series: Vec<EpochMetrics>,
}

impl MetricReport {
    pub fn from_eval(e: &EvalResult) -> Self {
        MetricReport {
            loss: Some(e.loss),
            accuracy: e.accuracy,
            recall_at_q: e.ranking.map(|r| r.recall_at_q),
            mrr_at_q: e.ranking.map(|r| r.mrr_at_q),
            q: e.ranking.map(|r| r.q),
            sample_times: e.ranking.map(|r| r.sample_times),
            best_epoch: None,
            series: Vec::new(),
        }
    }
}

/// Renders rows under [`CSV_HEADER`]; absent metrics are empty cells.
pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let cell = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let split = match r.split {
            SplitName::Train => "train",
            SplitName::Test => "test",
        };
        let _ = writeln!(
            out,
            "{},{split},{},{},{},{}",
            r.epoch,
            r.loss,
            cell(r.accuracy),
            cell(r.recall_at_q),
            cell(r.mrr_at_q)
        );
    }
    out
}

/// Builds the worker pool, honouring [`THREADS_ENV`].
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker threads: {e}")))
}

/// Result of [`fit`].
#[derive(Clone, Debug)]
pub struct FitOutput {
    pub config: ExperimentConfig,
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    pub report: MetricReport,
}

fn selection_score(e: &EvalResult) -> f64 {
    e.ranking.map_or(e.accuracy.unwrap_or(0.0), |r| r.mrr_at_q)
}

/// Trains a model as described by `config`.
///
/// With an output directory the run writes `config.json` (the resolved
/// config), `metrics.csv` (rewritten after every epoch), `best.json` (best
/// test score so far) and `final.json`. If the loss or a gradient turns
/// non-finite, training stops with a numeric error and the rows logged so
/// far stay on disk.
pub fn fit(config: &ExperimentConfig, out_dir: Option<&Path>) -> Result<FitOutput> {
    let config = config.resolve()?;
    let data = TrainData::load(&config)?;
    fit_on(&config, &data, out_dir)
}

/// [`fit`] on data that is already loaded. `config` must be resolved.
pub fn fit_on(config: &ExperimentConfig, data: &TrainData, out_dir: Option<&Path>) -> Result<FitOutput> {
    let pool = thread_pool()?;
    pool.install(|| fit_inner(config, data, out_dir, pool.current_num_threads()))
}

fn fit_inner(config: &ExperimentConfig, data: &TrainData, out_dir: Option<&Path>, threads: usize) -> Result<FitOutput> {
    let mut params = ModelParams::init(&config.model, config.seed)?;
    let mut opt = OptimizerState::new(config.optimizer())?;
    let mut rng = Rng::derived(config.seed, SHUFFLE_STREAM);
    let batch = config.batch_size();
    let n = data.train_len();
    let shard = if config.deterministic {
        DETERMINISTIC_SHARD
    } else {
        batch.div_ceil(threads.max(1))
    };
    if let Some(dir) = out_dir {
        fsio::write_atomic(&dir.join("config.json"), config.to_json().as_bytes())?;
        fsio::write_atomic(&dir.join("metrics.csv"), metrics_csv(&[]).as_bytes())?;
    }
    let save = |name: &str, p: &ModelParams, epoch: usize, opt: &OptimizerState, rng: &Rng| -> Result<()> {
        if let Some(dir) = out_dir {
            Checkpoint::capture(p, epoch, Some(opt), Some(rng.state())).save(&dir.join(name))?;
        }
        Ok(())
    };

    let flush = |series: &[EpochMetrics]| -> Result<()> {
        match out_dir {
            Some(dir) => fsio::write_atomic(&dir.join("metrics.csv"), metrics_csv(series).as_bytes()),
            None => Ok(()),
        }
    };

    let mut series = Vec::new();
    let mut best: Option<(f64, usize)> = None;
    let mut last_eval = None;
    let mut flushed = Instant::now();
    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        let (mut loss, mut correct) = (0.0, 0);
        for (b, idx) in order.chunks(batch).enumerate() {
            let stepped = batch_gradients(&params, data, idx, shard).and_then(|g| {
                if !g.loss_sum.is_finite() {
                    return Err(Error::numeric(format!(
                        "loss became non-finite at epoch {epoch}, batch {}",
                        b + 1
                    )));
                }
                opt.step(&mut params, &g.grads)?;
                Ok(g)
            });
            match stepped {
                Ok(g) => {
                    loss += g.loss_sum;
                    correct += g.correct;
                }
                Err(e) => {
                    // keep the completed epochs on disk
                    flush(&series)?;
                    return Err(e);
                }
            }
        }
        let train_row = EpochMetrics {
            epoch,
            split: SplitName::Train,
            loss: loss / n as f64,
            accuracy: (!matches!(data, TrainData::NextEvent { .. })).then(|| correct as f64 / n as f64),
            recall_at_q: None,
            mrr_at_q: None,
        };
        series.push(train_row);
        if data.test_len() > 0 {
            let e = evaluate(&params, data, config.eval, config.seed)?;
            series.push(EpochMetrics::from_eval(epoch, SplitName::Test, &e));
            let score = selection_score(&e);
            if best.map_or(true, |(s, _)| score > s) {
                best = Some((score, epoch));
                save("best.json", &params, epoch, &opt, &rng)?;
            }
            last_eval = Some(e);
        }
        log::info!("epoch {epoch}: {:?}", series.last());
        // rewriting the whole file every epoch is quadratic in long runs
        if flushed.elapsed() >= FLUSH_INTERVAL {
            flush(&series)?;
            flushed = Instant::now();
        }
    }
    flush(&series)?;
    save("final.json", &params, config.epochs, &opt, &rng)?;
    let mut report = last_eval.as_ref().map(MetricReport::from_eval).unwrap_or_default();
    report.best_epoch = best.map(|(_, e)| e);
    report.series = series;
    Ok(FitOutput {
        config: config.clone(),
        params,
        optimizer: opt,
        report,
    })
}
