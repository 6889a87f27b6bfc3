use super::{DenseLayer, ModelKind, ModelParams, Task, TimeMode};
use crate::autodiff::scalar::sigmoid;
use crate::autodiff::{NodeId, Tape};
use crate::cells::{self, CellKind, CellWeights, TapeState};
use crate::data::EventSequence;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::time2vec::{embed_batch, t2v, Time2VecParams};

/// Model parameters recorded on a tape.
#[derive(Clone, Debug)]
pub struct BoundModel {
    pub omega: Option<NodeId>,
    pub phi: Option<NodeId>,
    pub cell: Option<CellWeights<NodeId>>,
    pub items: Option<NodeId>,
    pub theta: NodeId,
    pub b: NodeId,
    trainable: Vec<NodeId>,
}

impl BoundModel {
    /// Records every parameter. With `differentiable`, trainable tensors
    /// become leaves (fixed embeddings stay constants); otherwise everything
    /// is constant.
    pub fn bind(tape: &mut Tape, params: &ModelParams, differentiable: bool) -> Self {
        let mut trainable = Vec::new();
        let mut record = |tape: &mut Tape, t: Tensor, learn: bool| {
            if learn && differentiable {
                let id = tape.leaf(t);
                trainable.push(id);
                id
            } else {
                tape.constant(t)
            }
        };
        let (omega, phi) = match &params.t2v {
            Some(p) => (
                Some(record(tape, p.omega_tensor(), p.trainable)),
                Some(record(tape, p.phi_tensor(), p.trainable)),
            ),
            None => (None, None),
        };
        let cell = params.cell.as_ref().map(|c| c.map(|t| record(tape, t.clone(), true)));
        let items = params.items.as_ref().map(|t| record(tape, t.clone(), true));
        let theta = record(tape, params.dense.theta.clone(), true);
        let b = record(tape, params.dense.b.clone(), true);
        BoundModel {
            omega,
            phi,
            cell,
            items,
            theta,
            b,
            trainable,
        }
    }

    /// Leaves in the order of [`ModelParams::visit_trainable`].
    pub fn trainable(&self) -> &[NodeId] {
        &self.trainable
    }
}

/// Probability and logit of the binary probe for one time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticOutput {
    pub probability: f64,
    pub pre_sigmoid: f64,
}

pub fn synthetic_forward(tau: f64, t2v_params: &Time2VecParams, dense: &DenseLayer) -> Result<SyntheticOutput> {
    if dense.theta.rows() != 1 {
        return Err(Error::Dimension {
            op: "dense",
            lhs: dense.theta.shape(),
            rhs: (t2v_params.output_len(), 1),
        });
    }
    let z = dense.apply(&t2v(tau, t2v_params)?)?[0];
    Ok(SyntheticOutput {
        probability: sigmoid(z),
        pre_sigmoid: z,
    })
}

/// `1×B` logits of the binary probe for a batch of times.
pub fn synthetic_logits(tape: &mut Tape, bound: &BoundModel, params: &ModelParams, taus: &[f64]) -> Result<NodeId> {
    let (Some(omega), Some(phi), Some(p)) = (bound.omega, bound.phi, &params.t2v) else {
        return Err(Error::contract("the binary probe needs a time2vec layer"));
    };
    if params.spec.kind != ModelKind::T2vDense {
        return Err(Error::contract(format!(
            "{} is not a single-time model",
            params.spec.kind
        )));
    }
    let row = tape.constant(Tensor::row(taus)?);
    let emb = embed_batch(tape, omega, phi, row, p.activation, p.include_linear)?;
    DenseLayer::record(tape, bound.theta, bound.b, emb)
}

fn step_times(seq: &EventSequence, mode: TimeMode) -> Vec<f64> {
    let t0 = seq.times[0];
    match mode {
        TimeMode::Absolute => seq.times.iter().map(|t| t - t0).collect(),
        TimeMode::Delta => {
            let mut prev = t0;
            seq.times
                .iter()
                .map(|&t| {
                    let d = t - prev;
                    prev = t;
                    d
                })
                .collect()
        }
    }
}

fn check_batch(params: &ModelParams, batch: &[&EventSequence]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    for (i, s) in batch.iter().enumerate() {
        if s.is_empty() {
            return Err(Error::contract(format!("empty sequence at batch position {i}")));
        }
        if let Task::Recommend { vocab, .. } = params.spec.task() {
            let ev = s
                .events
                .as_ref()
                .ok_or_else(|| Error::Data(format!("sequence {i} has no event ids")))?;
            if ev.len() != s.times.len() {
                return Err(Error::Data(format!(
                    "sequence {i}: event ids and times differ in length"
                )));
            }
            if let Some(p) = ev.iter().position(|&e| e >= vocab) {
                return Err(Error::Data(format!(
                    "sequence {i}: event id {} at position {p} is outside the vocabulary of {vocab}",
                    ev[p]
                )));
            }
        }
    }
    Ok(())
}

/// Unrolls the cell over a right-padded batch and returns the `hidden×B`
/// final hidden states. Padded steps leave a sequence's state unchanged.
pub(crate) fn final_hidden(
    tape: &mut Tape,
    bound: &BoundModel,
    params: &ModelParams,
    batch: &[&EventSequence],
) -> Result<NodeId> {
    let spec = &params.spec;
    let cell = bound
        .cell
        .as_ref()
        .ok_or_else(|| Error::contract(format!("{} has no recurrent cell", spec.kind)))?;
    check_batch(params, batch)?;
    let mode = spec.time_mode();
    let times: Vec<Vec<f64>> = batch.iter().map(|s| step_times(s, mode)).collect();
    let b = batch.len();
    let steps = times.iter().map(Vec::len).max().unwrap_or(0);
    let zeros = tape.constant(Tensor::zeros(spec.hidden, b));
    let mut state = TapeState {
        h: zeros,
        c: zeros,
        c_tilde: None,
    };
    let no_input = tape.constant(Tensor::zeros(0, b));
    let plain = cell.kind == CellKind::Lstm;

    for j in 0..steps {
        let active: Vec<f64> = times.iter().map(|t| if j < t.len() { 1.0 } else { 0.0 }).collect();
        let time = if spec.kind.uses_time() {
            let row: Vec<f64> = times.iter().map(|t| t.get(j).copied().unwrap_or(0.0)).collect();
            let row = tape.constant(Tensor::row(&row)?);
            Some(match (bound.omega, bound.phi, &params.t2v) {
                (Some(o), Some(p), Some(tp)) => embed_batch(tape, o, p, row, tp.activation, tp.include_linear)?,
                _ => row,
            })
        } else {
            None
        };
        let item = match bound.items {
            Some(table) => {
                let ids: Vec<usize> = batch
                    .iter()
                    .map(|s| s.events.as_ref().and_then(|e| e.get(j).copied()).unwrap_or(0))
                    .collect();
                Some(tape.gather_rows(table, &ids)?)
            }
            None => None,
        };
        let (x, t) = if plain {
            let parts: Vec<NodeId> = item.into_iter().chain(time).collect();
            let x = match parts.as_slice() {
                [] => no_input,
                [only] => *only,
                _ => tape.concat_rows(&parts)?,
            };
            (x, None)
        } else {
            (item.unwrap_or(no_input), time)
        };
        let next = cells::step(tape, cell, x, t, &state)?.state;
        state = if active.iter().all(|&a| a == 1.0) {
            next
        } else {
            let keep = tape.constant(Tensor::row(&active)?);
            let inv: Vec<f64> = active.iter().map(|a| 1.0 - a).collect();
            let hold = tape.constant(Tensor::row(&inv)?);
            let mut blend = |new: NodeId, old: NodeId| -> Result<NodeId> {
                let a = tape.hadamard(new, keep)?;
                let o = tape.hadamard(old, hold)?;
                tape.add(a, o)
            };
            TapeState {
                h: blend(next.h, state.h)?,
                c: blend(next.c, state.c)?,
                c_tilde: next.c_tilde,
            }
        };
    }
    Ok(state.h)
}

/// `out×B` output-layer scores for a batch of sequences.
pub fn sequence_logits(
    tape: &mut Tape,
    bound: &BoundModel,
    params: &ModelParams,
    batch: &[&EventSequence],
) -> Result<NodeId> {
    let h = final_hidden(tape, bound, params, batch)?;
    DenseLayer::record(tape, bound.theta, bound.b, h)
}

/// Column-wise softmax.
pub(crate) fn softmax_columns(logits: &Tensor) -> Tensor {
    let (r, c) = logits.shape();
    let mut out = Tensor::zeros(r, c);
    for j in 0..c {
        let col = logits.col_values(j);
        let m = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = col.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        for (i, v) in e.into_iter().enumerate() {
            out.set(i, j, v / s);
        }
    }
    out
}

fn eval_logits(params: &ModelParams, batch: &[&EventSequence]) -> Result<Tensor> {
    let mut tape = Tape::new();
    let bound = BoundModel::bind(&mut tape, params, false);
    let out = sequence_logits(&mut tape, &bound, params, batch)?;
    Ok(tape.value(out).clone())
}

/// Class probabilities (`classes×B`) for a batch.
pub fn classify_batch(params: &ModelParams, batch: &[&EventSequence]) -> Result<Tensor> {
    if !matches!(params.spec.task(), Task::Classify { .. }) {
        return Err(Error::contract(format!("{} is not a classifier", params.spec.kind)));
    }
    Ok(softmax_columns(&eval_logits(params, batch)?))
}

pub fn classify_sequence(params: &ModelParams, seq: &EventSequence) -> Result<Vec<f64>> {
    Ok(classify_batch(params, &[seq])?.into_data())
}

/// Raw item scores (`vocab×B`) for a batch of prefixes.
pub fn recommend_batch(params: &ModelParams, batch: &[&EventSequence]) -> Result<Tensor> {
    if !matches!(params.spec.task(), Task::Recommend { .. }) {
        return Err(Error::contract(format!("{} is not a recommender", params.spec.kind)));
    }
    eval_logits(params, batch)
}

pub fn recommend_next(params: &ModelParams, prefix: &EventSequence) -> Result<Vec<f64>> {
    Ok(recommend_batch(params, &[prefix])?.into_data())
}
