//! Central-difference verification of every tape op, every cell variant and
//! every model kind. Backs the `grad-check` command.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::autodiff::{grad_check_many, NodeId, OpKind, Tape};
use crate::cells::{unroll_on_tape, CellConfig, CellKind, CellWeights};
use crate::data::EventSequence;
use crate::error::{Error, Result};
use crate::models::{sequence_logits, synthetic_logits, BoundModel, EmbedSpec, ModelKind, ModelParams, ModelSpec};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SuiteConfig {
    pub hidden: usize,
    pub length: usize,
    pub seeds: u64,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            hidden: 3,
            length: 6,
            seeds: 20,
            step: 1e-5,
            tolerance: 1e-4,
        }
    }
}

/// Worst error of one check over all seeds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteEntry {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_seed: u64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteReport {
    pub config: SuiteConfig,
    pub entries: Vec<SuiteEntry>,
    pub max_rel_error: f64,
    #[serde(skip)]
    pub elapsed: Duration,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &SuiteEntry> {
        self.entries.iter().filter(|e| !e.passed)
    }
}

fn rel_error(a: f64, c: f64) -> f64 {
    (a - c).abs() / 1f64.max(a.abs()).max(c.abs())
}

fn random(rng: &mut Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::from_raw(rows, cols, (0..rows * cols).map(|_| rng.range(lo, hi)).collect())
}

fn far_from_lattice(x: f64, period: f64, offset: f64, margin: f64) -> bool {
    let r = (x - offset).rem_euclid(period);
    r > margin && period - r > margin
}

/// Inputs for a unary op, redrawn until no entry sits near a kink.
fn unary_input(rng: &mut Rng, kind: OpKind, margin: f64) -> Tensor {
    loop {
        let t = random(rng, 2, 3, -2.0, 2.0);
        let ok = t.data().iter().all(|&x| match kind {
            OpKind::Relu => x.abs() > margin,
            OpKind::Mod1 => far_from_lattice(x, 1.0, 0.0, margin),
            OpKind::Triangle => far_from_lattice(x, PI, PI / 2.0, margin),
            _ => true,
        });
        if ok {
            return t;
        }
    }
}

fn worst(reports: Result<Vec<crate::autodiff::GradCheckReport>>) -> Result<f64> {
    Ok(reports?.iter().map(|r| r.max_rel_error).fold(0.0, f64::max))
}

/// Weighted sum so that a transposed or permuted gradient is caught.
fn weighted_sum(tape: &mut Tape, y: NodeId, rng_seed: u64) -> Result<NodeId> {
    let (r, c) = tape.shape(y);
    let w = random(&mut Rng::derived(rng_seed, 99), r, c, -1.5, 1.5);
    let w = tape.constant(w);
    let p = tape.hadamard(y, w)?;
    Ok(tape.sum(p))
}

fn op_check(kind: OpKind, seed: u64, h: f64) -> Result<f64> {
    let mut rng = Rng::seed_from(seed);
    let margin = 100.0 * h;
    match kind {
        OpKind::MatMul => {
            let th = [random(&mut rng, 3, 4, -1.0, 1.0), random(&mut rng, 4, 2, -1.0, 1.0)];
            worst(grad_check_many(
                |tape, ids| {
                    let y = tape.matmul(ids[0], ids[1])?;
                    weighted_sum(tape, y, seed)
                },
                &th,
                h,
            ))
        }
        OpKind::Add | OpKind::Sub | OpKind::Hadamard => {
            // full, column-broadcast and row-broadcast right operands
            let th = [
                random(&mut rng, 3, 4, -1.0, 1.0),
                random(&mut rng, 3, 4, -1.0, 1.0),
                random(&mut rng, 3, 1, -1.0, 1.0),
                random(&mut rng, 1, 4, -1.0, 1.0),
            ];
            worst(grad_check_many(
                |tape, ids| {
                    let a = tape.apply(kind, &[ids[0], ids[1]])?;
                    let b = tape.apply(kind, &[a, ids[2]])?;
                    let y = tape.apply(kind, &[b, ids[3]])?;
                    weighted_sum(tape, y, seed)
                },
                &th,
                h,
            ))
        }
        OpKind::ConcatRows => {
            let th = [random(&mut rng, 2, 3, -1.0, 1.0), random(&mut rng, 1, 3, -1.0, 1.0)];
            worst(grad_check_many(
                |tape, ids| {
                    let y = tape.concat_rows(&[ids[0], ids[1], ids[0]])?;
                    weighted_sum(tape, y, seed)
                },
                &th,
                h,
            ))
        }
        OpKind::Slice { .. } => {
            let th = [random(&mut rng, 5, 2, -1.0, 1.0)];
            worst(grad_check_many(
                |tape, ids| {
                    let y = tape.slice_rows(ids[0], 1, 4)?;
                    weighted_sum(tape, y, seed)
                },
                &th,
                h,
            ))
        }
        OpKind::Sum => {
            let th = [random(&mut rng, 2, 3, -1.0, 1.0)];
            worst(grad_check_many(
                |tape, ids| {
                    let sq = tape.hadamard(ids[0], ids[0])?;
                    Ok(tape.sum(sq))
                },
                &th,
                h,
            ))
        }
        unary => {
            let unary = match unary {
                OpKind::Scale(_) => OpKind::Scale(rng.range(-3.0, 3.0)),
                k => k,
            };
            let th = [unary_input(&mut rng, unary, margin)];
            worst(grad_check_many(
                |tape, ids| {
                    let y = tape.apply(unary, &[ids[0]])?;
                    weighted_sum(tape, y, seed)
                },
                &th,
                h,
            ))
        }
    }
}

fn loss_check(name: &str, seed: u64, h: f64) -> Result<f64> {
    let mut rng = Rng::seed_from(seed);
    match name {
        "bce" => {
            let th = [random(&mut rng, 1, 5, 0.05, 0.95)];
            let y: Vec<f64> = (0..5).map(|_| f64::from(u8::from(rng.bernoulli(0.5)))).collect();
            worst(grad_check_many(|tape, ids| tape.bce(ids[0], &y), &th, h))
        }
        "softmax_xent" => {
            let th = [random(&mut rng, 4, 3, -2.0, 2.0)];
            let y: Vec<usize> = (0..3).map(|_| rng.below(4) as usize).collect();
            worst(grad_check_many(|tape, ids| tape.softmax_xent(ids[0], &y), &th, h))
        }
        "gather_rows" => {
            let th = [random(&mut rng, 5, 3, -1.0, 1.0)];
            let ids_: Vec<usize> = (0..4).map(|_| rng.below(5) as usize).collect();
            worst(grad_check_many(
                |tape, ids| {
                    let y = tape.gather_rows(ids[0], &ids_)?;
                    weighted_sum(tape, y, seed)
                },
                &th,
                h,
            ))
        }
        other => Err(Error::contract(format!("unknown loss check {other}"))),
    }
}

/// Squared norm of the final hidden state against every cell tensor.
fn cell_check(kind: CellKind, time_width: usize, peephole: bool, seed: u64, config: &SuiteConfig) -> Result<f64> {
    let mut rng = Rng::seed_from(seed);
    let input = 2;
    let cc = CellConfig {
        kind,
        input,
        hidden: config.hidden,
        time_width,
        peephole,
    };
    let cell = CellWeights::init(&cc, &mut rng)?;
    let xs: Vec<Tensor> = (0..config.length)
        .map(|_| random(&mut rng, input, 1, -1.0, 1.0))
        .collect();
    let ts: Vec<Tensor> = (0..config.length)
        .map(|_| random(&mut rng, time_width, 1, 0.0, 2.0))
        .collect();
    let mut tensors = Vec::new();
    cell.for_each(|_, t| tensors.push(t.clone()));
    worst(grad_check_many(
        |tape, ids| {
            let mut it = ids.iter().copied();
            let bound = cell.map(|_| it.next().unwrap());
            let steps: Vec<(NodeId, Option<NodeId>)> = xs
                .iter()
                .zip(&ts)
                .map(|(x, t)| {
                    let x = tape.constant(x.clone());
                    let t = (kind != CellKind::Lstm).then(|| tape.constant(t.clone()));
                    (x, t)
                })
                .collect();
            let states = unroll_on_tape(tape, &bound, &steps)?;
            let h = states
                .last()
                .map(|s| s.h)
                .ok_or_else(|| Error::contract("empty unroll"))?;
            let sq = tape.hadamard(h, h)?;
            Ok(tape.sum(sq))
        },
        &tensors,
        config.step,
    ))
}

fn model_loss(
    params: &ModelParams,
    batch: &[EventSequence],
    taus: &[f64],
    differentiable: bool,
) -> Result<(Tape, NodeId, BoundModel)> {
    let mut tape = Tape::new();
    let bound = BoundModel::bind(&mut tape, params, differentiable);
    let loss = if params.spec.kind == ModelKind::T2vDense {
        let z = synthetic_logits(&mut tape, &bound, params, taus)?;
        let p = tape.sigmoid(z);
        tape.bce(p, &[1.0, 0.0, 1.0])?
    } else {
        let refs: Vec<&EventSequence> = batch.iter().collect();
        let z = sequence_logits(&mut tape, &bound, params, &refs)?;
        let labels: Vec<usize> = batch.iter().map(|s| s.label.unwrap_or(0)).collect();
        tape.softmax_xent(z, &labels)?
    };
    Ok((tape, loss, bound))
}

const VOCAB: usize = 5;

/// Whole-model check through time features, item embeddings, padding masks and the output
/// layer on a batch of two sequences of unequal length.
fn model_check(kind: ModelKind, seed: u64, config: &SuiteConfig) -> Result<f64> {
    let mut rng = Rng::seed_from(seed);
    let embed = kind.uses_t2v().then(|| EmbedSpec::new(2));
    let spec = if kind == ModelKind::T2vDense {
        ModelSpec::t2v_dense(EmbedSpec::new(2))
    } else {
        let mut s = ModelSpec::recommender(kind, config.hidden, embed, VOCAB);
        s.item_embed_dim = 2;
        s
    };
    let mut params = ModelParams::init(&spec, seed)?;
    let lengths = [config.length, config.length.saturating_sub(2).max(1)];
    let batch: Vec<EventSequence> = lengths
        .iter()
        .map(|&n| {
            let mut t = 0.0;
            let times = (0..n)
                .map(|_| {
                    t += rng.range(0.1, 1.0);
                    t
                })
                .collect();
            EventSequence {
                times,
                events: Some((0..n).map(|_| rng.below(VOCAB as u64) as usize).collect()),
                label: Some(rng.below(VOCAB as u64) as usize),
            }
        })
        .collect();
    let taus = [rng.range(0.0, 5.0), rng.range(0.0, 5.0), rng.range(0.0, 5.0)];

    let (tape, loss, bound) = model_loss(&params, &batch, &taus, true)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = bound
        .trainable()
        .iter()
        .map(|&id| grads.get_or_zeros(id, tape.value(id)).data().to_vec())
        .collect();

    let mut sizes = Vec::new();
    params.visit_trainable(|_, d| sizes.push(d.len()));
    let mut max_err = 0.0f64;
    for (which, &n) in sizes.iter().enumerate() {
        for i in 0..n {
            let mut eval = |delta: f64| -> Result<f64> {
                let mut k = 0;
                params.visit_trainable_mut(|_, d| {
                    if k == which {
                        d[i] += delta;
                    }
                    k += 1;
                });
                let (tape, loss, _) = model_loss(&params, &batch, &taus, false)?;
                Ok(tape.value(loss).item())
            };
            let plus = eval(config.step)?;
            let minus = eval(-2.0 * config.step)?;
            eval(config.step)?;
            let central = (plus - minus) / (2.0 * config.step);
            max_err = max_err.max(rel_error(analytic[which][i], central));
        }
    }
    Ok(max_err)
}

const CELL_VARIANTS: [(&str, CellKind, usize, bool); 6] = [
    ("cell:lstm", CellKind::Lstm, 0, false),
    ("cell:lstm-peephole", CellKind::Lstm, 0, true),
    ("cell:tlstm1", CellKind::Tlstm1, 1, true),
    ("cell:tlstm1-embedded", CellKind::Tlstm1, 4, true),
    ("cell:tlstm3", CellKind::Tlstm3, 1, true),
    ("cell:tlstm3-embedded", CellKind::Tlstm3, 4, true),
];

/// Runs every check for seeds `0..config.seeds`.
pub fn run_suite(config: &SuiteConfig) -> Result<SuiteReport> {
    if config.hidden == 0 || config.length == 0 || config.seeds == 0 || !(config.step > 0.0) {
        return Err(Error::Config(format!("bad gradient-suite settings {config:?}")));
    }
    let start = Instant::now();
    let mut checks: Vec<(String, Box<dyn Fn(u64) -> Result<f64> + '_>)> = Vec::new();
    for kind in OpKind::ALL {
        checks.push((
            format!("op:{}", kind.tag()),
            Box::new(move |s| op_check(kind, s, config.step)),
        ));
    }
    for name in ["bce", "softmax_xent", "gather_rows"] {
        checks.push((
            format!("op:{name}"),
            Box::new(move |s| loss_check(name, s, config.step)),
        ));
    }
    for (name, kind, tw, peephole) in CELL_VARIANTS {
        checks.push((
            name.into(),
            Box::new(move |s| cell_check(kind, tw, peephole, s, config)),
        ));
    }
    for kind in ModelKind::ALL {
        checks.push((format!("model:{kind}"), Box::new(move |s| model_check(kind, s, config))));
    }

    let mut entries = Vec::with_capacity(checks.len());
    for (name, check) in checks {
        let mut entry = SuiteEntry {
            name,
            max_rel_error: 0.0,
            worst_seed: 0,
            passed: true,
        };
        for seed in 0..config.seeds {
            let e = check(seed).map_err(|err| Error::numeric(format!("{}: {err}", entry.name)))?;
            if e > entry.max_rel_error || e.is_nan() {
                entry.max_rel_error = e;
                entry.worst_seed = seed;
            }
        }
        entry.passed = entry.max_rel_error < config.tolerance;
        log::debug!("{} max rel error {:e}", entry.name, entry.max_rel_error);
        entries.push(entry);
    }
    let max_rel_error = entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max);
    Ok(SuiteReport {
        config: *config,
        entries,
        max_rel_error,
        elapsed: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_suite_passes_and_covers_everything() {
        let config = SuiteConfig {
            seeds: 2,
            ..SuiteConfig::default()
        };
        let r = run_suite(&config).unwrap();
        assert!(r.passed(), "{:?}", r.failures().collect::<Vec<_>>());
        assert_eq!(
            r.entries.len(),
            OpKind::ALL.len() + 3 + CELL_VARIANTS.len() + ModelKind::ALL.len()
        );
        assert!(r.entries.iter().any(|e| e.name == "model:tlstm3+t2v"));
    }

    #[test]
    fn rejects_bad_settings() {
        let config = SuiteConfig {
            step: 0.0,
            ..SuiteConfig::default()
        };
        assert!(matches!(run_suite(&config), Err(Error::Config(_))));
    }
}
