use super::{CellKind, CellWeights, Gate, TimeGate, TimeGateWeights};
use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};

/// Batched recurrent state on a tape; every node is `hidden×B`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TapeState {
    pub h: NodeId,
    pub c: NodeId,
    pub c_tilde: Option<NodeId>,
}

/// Gate activations recorded by one step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GateNodes {
    pub input: NodeId,
    pub forget: Option<NodeId>,
    pub candidate: NodeId,
    pub output: NodeId,
    /// `[t]` for TLSTM1, `[t1, t2]` for TLSTM3.
    pub time: Vec<NodeId>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepOutput {
    pub state: TapeState,
    pub gates: GateNodes,
}

/// Sum of the non-empty terms.
fn sum_terms(tape: &mut Tape, terms: &[Option<NodeId>]) -> Result<NodeId> {
    let mut present = terms.iter().flatten().copied();
    let first = present
        .next()
        .ok_or_else(|| Error::contract("gate pre-activation has no terms"))?;
    present.try_fold(first, |acc, t| tape.add(acc, t))
}

/// `W·x`, skipped when the input has no rows.
fn input_term(tape: &mut Tape, w: NodeId, x: NodeId) -> Result<Option<NodeId>> {
    if tape.shape(x).0 == 0 && tape.shape(w).1 == 0 {
        return Ok(None);
    }
    tape.matmul(w, x).map(Some)
}

/// `W·x + U·h + b [+ peep ⊙ cell]`, before the nonlinearity.
fn gate_pre(tape: &mut Tape, gate: &Gate<NodeId>, x: NodeId, h: NodeId, extra: &[Option<NodeId>]) -> Result<NodeId> {
    let wx = input_term(tape, gate.w, x)?;
    let uh = tape.matmul(gate.u, h)?;
    let mut terms = vec![wx, Some(uh)];
    terms.extend_from_slice(extra);
    let s = sum_terms(tape, &terms)?;
    tape.add(s, gate.b)
}

fn peep(tape: &mut Tape, w: Option<NodeId>, cell: NodeId) -> Result<Option<NodeId>> {
    w.map(|w| tape.hadamard(cell, w)).transpose()
}

/// `σ(W x + σ(u·time) + b)`.
fn time_gate(tape: &mut Tape, gate: &TimeGate<NodeId>, x: NodeId, time: NodeId) -> Result<NodeId> {
    let wx = input_term(tape, gate.w, x)?;
    let ut = tape.matmul(gate.u, time)?;
    let inner = tape.sigmoid(ut);
    let s = sum_terms(tape, &[wx, Some(inner)])?;
    let pre = tape.add(s, gate.b)?;
    Ok(tape.sigmoid(pre))
}

/// One batched cell transition.
///
/// `x` is `input×B` (possibly zero rows). `time` is required for TLSTM cells
/// (`time_width×B`) and must be `None` for plain LSTMs.
pub fn step(
    tape: &mut Tape,
    w: &CellWeights<NodeId>,
    x: NodeId,
    time: Option<NodeId>,
    state: &TapeState,
) -> Result<StepOutput> {
    let l = &w.lstm;
    let peeps = l.peephole.as_ref();
    let (h_prev, c_prev) = (state.h, state.c);

    let time = match (w.kind, time) {
        (CellKind::Lstm, None) => None,
        (CellKind::Lstm, Some(_)) => {
            return Err(Error::contract(
                "plain LSTM cells take time features as part of the input",
            ))
        }
        (_, Some(t)) => Some(t),
        (kind, None) => return Err(Error::contract(format!("{kind:?} cells need a time input"))),
    };

    let pi = peep(tape, peeps.map(|p| p.input), c_prev)?;
    let i_pre = gate_pre(tape, &l.input, x, h_prev, &[pi])?;
    let i = tape.sigmoid(i_pre);
    let cbar_pre = gate_pre(tape, &l.candidate, x, h_prev, &[])?;
    let cbar = tape.tanh(cbar_pre);

    let mut forget = None;
    let mut time_gates = Vec::new();
    let mut c_tilde = None;
    let (c, out_time_term, h_source);

    match (&w.time, time) {
        (None, _) => {
            let fg = l
                .forget
                .as_ref()
                .ok_or_else(|| Error::contract("LSTM weights are missing the forget gate"))?;
            let pf = peep(tape, peeps.and_then(|p| p.forget), c_prev)?;
            let f_pre = gate_pre(tape, fg, x, h_prev, &[pf])?;
            let f = tape.sigmoid(f_pre);
            forget = Some(f);
            let keep = tape.hadamard(f, c_prev)?;
            let write = tape.hadamard(i, cbar)?;
            c = tape.add(keep, write)?;
            out_time_term = None;
            h_source = c;
        }
        (Some(TimeGateWeights::Tlstm1 { gate, out }), Some(t)) => {
            let fg = l
                .forget
                .as_ref()
                .ok_or_else(|| Error::contract("TLSTM1 weights are missing the forget gate"))?;
            let pf = peep(tape, peeps.and_then(|p| p.forget), c_prev)?;
            let f_pre = gate_pre(tape, fg, x, h_prev, &[pf])?;
            let f = tape.sigmoid(f_pre);
            forget = Some(f);
            let tg = time_gate(tape, gate, x, t)?;
            time_gates.push(tg);
            let keep = tape.hadamard(f, c_prev)?;
            let it = tape.hadamard(i, tg)?;
            let write = tape.hadamard(it, cbar)?;
            c = tape.add(keep, write)?;
            out_time_term = Some(tape.matmul(*out, t)?);
            h_source = c;
        }
        (Some(TimeGateWeights::Tlstm3 { gate1, gate2, out }), Some(t)) => {
            let w_t1 = tape.value(gate1.w);
            if w_t1.data().iter().any(|&v| v > 0.0) {
                let max = w_t1.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                return Err(Error::Constraint(format!(
                    "W_t1 must be non-positive (max entry {max})"
                )));
            }
            let t1 = time_gate(tape, gate1, x, t)?;
            let t2 = time_gate(tape, gate2, x, t)?;
            time_gates.extend([t1, t2]);
            // c̃ = (1 − i⊙t1)⊙c_prev + i⊙t1⊙c̄
            let it1 = tape.hadamard(i, t1)?;
            let keep1 = tape.one_minus(it1);
            let keep1 = tape.hadamard(keep1, c_prev)?;
            let write1 = tape.hadamard(it1, cbar)?;
            let ct = tape.add(keep1, write1)?;
            // c = (1 − i)⊙c_prev + i⊙t2⊙c̄
            let keep2 = tape.one_minus(i);
            let keep2 = tape.hadamard(keep2, c_prev)?;
            let it2 = tape.hadamard(i, t2)?;
            let write2 = tape.hadamard(it2, cbar)?;
            c = tape.add(keep2, write2)?;
            c_tilde = Some(ct);
            out_time_term = Some(tape.matmul(*out, t)?);
            h_source = ct;
        }
        (Some(_), None) => unreachable!("time presence checked above"),
    }

    // The output peephole reads the cell that carries over to the next step.
    let po = peep(tape, peeps.map(|p| p.output), c)?;
    let o_pre = gate_pre(tape, &l.output, x, h_prev, &[out_time_term, po])?;
    let o = tape.sigmoid(o_pre);
    let squashed = tape.tanh(h_source);
    let h = tape.hadamard(o, squashed)?;

    Ok(StepOutput {
        state: TapeState { h, c, c_tilde },
        gates: GateNodes {
            input: i,
            forget,
            candidate: cbar,
            output: o,
            time: time_gates,
        },
    })
}

/// Unrolls from a zero state over `steps` of `(x, time)` nodes without
/// masking; returns the state after every step.
pub fn unroll_on_tape(
    tape: &mut Tape,
    w: &CellWeights<NodeId>,
    steps: &[(NodeId, Option<NodeId>)],
) -> Result<Vec<TapeState>> {
    let Some(&(x0, _)) = steps.first() else {
        return Err(Error::contract("cannot unroll an empty sequence"));
    };
    let hidden = tape.shape(w.lstm.input.b).0;
    let batch = tape.shape(x0).1;
    let zeros = tape.constant(crate::tensor::Tensor::zeros(hidden, batch));
    let mut state = TapeState {
        h: zeros,
        c: zeros,
        c_tilde: None,
    };
    let mut out = Vec::with_capacity(steps.len());
    for &(x, t) in steps {
        state = step(tape, w, x, t, &state)?.state;
        out.push(state);
    }
    Ok(out)
}
