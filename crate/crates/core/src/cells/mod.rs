//! Recurrent cell transitions.
//!
//! Weight containers are generic over their leaf type: `CellWeights<Tensor>`
//! stores parameters, and `CellWeights<NodeId>` is the same layout bound to a
//! [`Tape`](crate::autodiff::Tape) for one forward/backward pass.
//!
//! Time enters a cell in one of two ways. Plain LSTMs consume it as extra
//! input rows (`[x; τ]` or `[x; t2v(τ)]`, the LSTM+T form). TLSTM1/TLSTM3 feed
//! it to dedicated time gates through `u`/`v` weights, which are `hidden×1`
//! for a raw scalar time and `hidden×(k+1)` for an embedded one.

mod step;

use serde::{Deserialize, Serialize};

pub use step::{step, unroll_on_tape, GateNodes, StepOutput, TapeState};

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Lstm,
    Tlstm1,
    Tlstm3,
}

/// Shape and mode of a cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellConfig {
    pub kind: CellKind,
    /// Rows of the per-step input, including any appended time features
    /// for plain LSTMs.
    pub input: usize,
    pub hidden: usize,
    /// Width of the time representation fed to time gates (1 for a raw
    /// scalar, `k+1` for an embedding). Ignored for plain LSTMs.
    pub time_width: usize,
    pub peephole: bool,
}

/// Input, recurrent and bias weights of one gate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gate<T> {
    pub w: T,
    pub u: T,
    pub b: T,
}

/// Diagonal cell-to-gate weights. The forget peephole is absent for TLSTM3,
/// which has no forget gate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Peepholes<T> {
    pub input: T,
    pub forget: Option<T>,
    pub output: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmWeights<T> {
    pub input: Gate<T>,
    /// Absent for TLSTM3, whose forget behaviour is coupled to the input gate.
    pub forget: Option<Gate<T>>,
    pub candidate: Gate<T>,
    pub output: Gate<T>,
    pub peephole: Option<Peepholes<T>>,
}

/// A time gate `σ(W x + σ(u·time) + b)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGate<T> {
    pub w: T,
    pub u: T,
    pub b: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TimeGateWeights<T> {
    Tlstm1 {
        gate: TimeGate<T>,
        /// Time weight added to the output gate.
        out: T,
    },
    Tlstm3 {
        /// Weights on `x` are kept non-positive.
        gate1: TimeGate<T>,
        gate2: TimeGate<T>,
        out: T,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellWeights<T> {
    pub kind: CellKind,
    pub lstm: LstmWeights<T>,
    pub time: Option<TimeGateWeights<T>>,
}

/// Constraint re-applied to a parameter after every optimizer update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Constraint {
    NonPositive,
}

impl Constraint {
    pub fn apply(self, t: &mut Tensor) {
        match self {
            Constraint::NonPositive => {
                for v in t.data_mut() {
                    *v = v.min(0.0);
                }
            }
        }
    }

    pub fn holds(self, t: &Tensor) -> bool {
        match self {
            Constraint::NonPositive => t.data().iter().all(|&v| v <= 0.0),
        }
    }
}

impl<T> Gate<T> {
    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> Gate<U> {
        Gate {
            w: f(&self.w),
            u: f(&self.u),
            b: f(&self.b),
        }
    }
}

impl<T> TimeGate<T> {
    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> TimeGate<U> {
        TimeGate {
            w: f(&self.w),
            u: f(&self.u),
            b: f(&self.b),
        }
    }
}

impl<T> CellWeights<T> {
    /// Applies `f` to every leaf, preserving the layout.
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> CellWeights<U> {
        let l = &self.lstm;
        let lstm = LstmWeights {
            input: l.input.map(&mut f),
            forget: l.forget.as_ref().map(|g| g.map(&mut f)),
            candidate: l.candidate.map(&mut f),
            output: l.output.map(&mut f),
            peephole: l.peephole.as_ref().map(|p| Peepholes {
                input: f(&p.input),
                forget: p.forget.as_ref().map(&mut f),
                output: f(&p.output),
            }),
        };
        let time = self.time.as_ref().map(|t| match t {
            TimeGateWeights::Tlstm1 { gate, out } => TimeGateWeights::Tlstm1 {
                gate: gate.map(&mut f),
                out: f(out),
            },
            TimeGateWeights::Tlstm3 { gate1, gate2, out } => TimeGateWeights::Tlstm3 {
                gate1: gate1.map(&mut f),
                gate2: gate2.map(&mut f),
                out: f(out),
            },
        });
        CellWeights {
            kind: self.kind,
            lstm,
            time,
        }
    }

    /// Visits every leaf with a stable name, in a fixed order.
    pub fn for_each(&self, mut f: impl FnMut(&'static str, &T)) {
        let l = &self.lstm;
        let gates: [(&Option<&Gate<T>>, [&'static str; 3]); 4] = [
            (&Some(&l.input), ["W_i", "U_i", "b_i"]),
            (&l.forget.as_ref(), ["W_f", "U_f", "b_f"]),
            (&Some(&l.candidate), ["W_c", "U_c", "b_c"]),
            (&Some(&l.output), ["W_o", "U_o", "b_o"]),
        ];
        for (gate, names) in gates {
            if let Some(g) = gate {
                f(names[0], &g.w);
                f(names[1], &g.u);
                f(names[2], &g.b);
            }
        }
        if let Some(p) = &l.peephole {
            f("w_pi", &p.input);
            if let Some(pf) = &p.forget {
                f("w_pf", pf);
            }
            f("w_po", &p.output);
        }
        match &self.time {
            None => {}
            Some(TimeGateWeights::Tlstm1 { gate, out }) => {
                f("W_t", &gate.w);
                f("u_t", &gate.u);
                f("b_t", &gate.b);
                f("v_t", out);
            }
            Some(TimeGateWeights::Tlstm3 { gate1, gate2, out }) => {
                f("W_t1", &gate1.w);
                f("u_t1", &gate1.u);
                f("b_t1", &gate1.b);
                f("W_t2", &gate2.w);
                f("u_t2", &gate2.u);
                f("b_t2", &gate2.b);
                f("v_t", out);
            }
        }
    }

    /// Mutable counterpart of [`CellWeights::for_each`], same order and names.
    pub fn for_each_mut(&mut self, mut f: impl FnMut(&'static str, &mut T)) {
        let l = &mut self.lstm;
        let gate = |g: &mut Gate<T>, names: [&'static str; 3], f: &mut dyn FnMut(&'static str, &mut T)| {
            f(names[0], &mut g.w);
            f(names[1], &mut g.u);
            f(names[2], &mut g.b);
        };
        gate(&mut l.input, ["W_i", "U_i", "b_i"], &mut f);
        if let Some(g) = &mut l.forget {
            gate(g, ["W_f", "U_f", "b_f"], &mut f);
        }
        gate(&mut l.candidate, ["W_c", "U_c", "b_c"], &mut f);
        gate(&mut l.output, ["W_o", "U_o", "b_o"], &mut f);
        if let Some(p) = &mut l.peephole {
            f("w_pi", &mut p.input);
            if let Some(pf) = &mut p.forget {
                f("w_pf", pf);
            }
            f("w_po", &mut p.output);
        }
        match &mut self.time {
            None => {}
            Some(TimeGateWeights::Tlstm1 { gate, out }) => {
                f("W_t", &mut gate.w);
                f("u_t", &mut gate.u);
                f("b_t", &mut gate.b);
                f("v_t", out);
            }
            Some(TimeGateWeights::Tlstm3 { gate1, gate2, out }) => {
                f("W_t1", &mut gate1.w);
                f("u_t1", &mut gate1.u);
                f("b_t1", &mut gate1.b);
                f("W_t2", &mut gate2.w);
                f("u_t2", &mut gate2.u);
                f("b_t2", &mut gate2.b);
                f("v_t", out);
            }
        }
    }

    /// Constraint attached to a leaf name, if any.
    pub fn constraint(name: &str) -> Option<Constraint> {
        (name == "W_t1").then_some(Constraint::NonPositive)
    }
}

fn glorot(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.range(-limit, limit)).collect();
    Tensor::from_raw(rows, cols, data)
}

impl CellWeights<Tensor> {
    /// Random initialization: Glorot-uniform matrices and vectors, zero
    /// biases, forget bias 1, and TLSTM3's `W_t1` drawn from `U(−0.1, 0)`.
    pub fn init(config: &CellConfig, rng: &mut Rng) -> Result<Self> {
        let CellConfig {
            kind,
            input: n,
            hidden: h,
            time_width,
            peephole,
        } = *config;
        if h == 0 {
            return Err(Error::Config("hidden size must be at least 1".into()));
        }
        if kind != CellKind::Lstm && time_width == 0 {
            return Err(Error::Config("time-gated cells need a time width of at least 1".into()));
        }
        let gate = |rng: &mut Rng, bias: f64| Gate {
            w: glorot(rng, h, n),
            u: glorot(rng, h, h),
            b: Tensor::filled(h, 1, bias),
        };
        let input = gate(rng, 0.0);
        let forget = (kind != CellKind::Tlstm3).then(|| gate(rng, 1.0));
        let candidate = gate(rng, 0.0);
        let output = gate(rng, 0.0);
        let peephole = peephole.then(|| Peepholes {
            input: glorot(rng, h, 1),
            forget: (kind != CellKind::Tlstm3).then(|| glorot(rng, h, 1)),
            output: glorot(rng, h, 1),
        });
        let time_gate = |rng: &mut Rng| TimeGate {
            w: glorot(rng, h, n),
            u: glorot(rng, h, time_width),
            b: Tensor::zeros(h, 1),
        };
        let time = match kind {
            CellKind::Lstm => None,
            CellKind::Tlstm1 => Some(TimeGateWeights::Tlstm1 {
                gate: time_gate(rng),
                out: glorot(rng, h, time_width),
            }),
            CellKind::Tlstm3 => {
                let mut gate1 = time_gate(rng);
                gate1.w = Tensor::from_raw(h, n, (0..h * n).map(|_| rng.range(-0.1, 0.0)).collect());
                Some(TimeGateWeights::Tlstm3 {
                    gate1,
                    gate2: time_gate(rng),
                    out: glorot(rng, h, time_width),
                })
            }
        };
        Ok(CellWeights {
            kind,
            lstm: LstmWeights {
                input,
                forget,
                candidate,
                output,
                peephole,
            },
            time,
        })
    }

    /// All-zero weights of the given shape (useful for fixed-point checks).
    pub fn zeros(config: &CellConfig) -> Result<Self> {
        let mut w = CellWeights::init(config, &mut Rng::seed_from(0))?;
        w.for_each_mut(|_, t| {
            for v in t.data_mut() {
                *v = 0.0;
            }
        });
        Ok(w)
    }

    pub fn hidden(&self) -> usize {
        self.lstm.input.b.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.lstm.input.w.cols()
    }

    pub fn has_peepholes(&self) -> bool {
        self.lstm.peephole.is_some()
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.for_each(|_, t| n += t.len());
        n
    }

    /// Binds every weight as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> CellWeights<NodeId> {
        self.map(|t| tape.leaf(t.clone()))
    }

    /// Binds every weight as a constant.
    pub fn bind_constant(&self, tape: &mut Tape) -> CellWeights<NodeId> {
        self.map(|t| tape.constant(t.clone()))
    }

    pub fn apply_constraints(&mut self) {
        self.for_each_mut(|name, t| {
            if let Some(c) = CellWeights::<Tensor>::constraint(name) {
                c.apply(t);
            }
        });
    }

    pub fn check_constraints(&self) -> Result<()> {
        let mut err = None;
        self.for_each(|name, t| {
            if let Some(c) = CellWeights::<Tensor>::constraint(name) {
                if !c.holds(t) && err.is_none() {
                    err = Some(Error::Constraint(format!(
                        "{name} must be non-positive (max entry {})",
                        t.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                    )));
                }
            }
        });
        err.map_or(Ok(()), Err)
    }
}

/// Hidden and memory state of one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct CellState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    /// TLSTM3's auxiliary cell, the one that feeds the hidden output.
    pub c_tilde: Option<Vec<f64>>,
}

impl CellState {
    pub fn zeros(hidden: usize) -> Self {
        CellState {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
            c_tilde: None,
        }
    }
}

/// Gate activations of one step, for inspection.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GateValues {
    pub input: Vec<f64>,
    pub forget: Option<Vec<f64>>,
    pub candidate: Vec<f64>,
    pub output: Vec<f64>,
    pub time: Vec<Vec<f64>>,
}

fn column(values: &[f64]) -> Result<Tensor> {
    Tensor::new(values.len(), 1, values.to_vec())
}

/// Runs one step of any cell on single-sequence values. `time` is empty for
/// plain LSTMs (time, if any, is already part of `x`).
pub fn step_values(
    cell: &CellWeights<Tensor>,
    x: &[f64],
    time: &[f64],
    state: &CellState,
) -> Result<(CellState, GateValues)> {
    let hidden = cell.hidden();
    if state.h.len() != hidden || state.c.len() != hidden {
        return Err(Error::Dimension {
            op: "cell-state",
            lhs: (hidden, 1),
            rhs: (state.h.len(), state.c.len()),
        });
    }
    let mut tape = Tape::new();
    let w = cell.bind_constant(&mut tape);
    let xn = tape.constant(column(x)?);
    let tn = if cell.kind == CellKind::Lstm {
        if !time.is_empty() {
            return Err(Error::contract(
                "plain LSTM cells take time features as part of the input",
            ));
        }
        None
    } else {
        Some(tape.constant(column(time)?))
    };
    let s = TapeState {
        h: tape.constant(column(&state.h)?),
        c: tape.constant(column(&state.c)?),
        c_tilde: None,
    };
    let out = step(&mut tape, &w, xn, tn, &s)?;
    let v = |id: NodeId| tape.value(id).data().to_vec();
    let gates = GateValues {
        input: v(out.gates.input),
        forget: out.gates.forget.map(v),
        candidate: v(out.gates.candidate),
        output: v(out.gates.output),
        time: out.gates.time.iter().map(|&id| v(id)).collect(),
    };
    let next = CellState {
        h: v(out.state.h),
        c: v(out.state.c),
        c_tilde: out.state.c_tilde.map(v),
    };
    Ok((next, gates))
}

fn check_peephole_mode(w: &LstmWeights<Tensor>, peephole: bool) -> Result<()> {
    if w.peephole.is_some() != peephole {
        return Err(Error::contract(format!(
            "peephole mode is {peephole} but the weights {} peepholes",
            if w.peephole.is_some() { "carry" } else { "lack" }
        )));
    }
    Ok(())
}

fn as_lstm(w: &LstmWeights<Tensor>) -> CellWeights<Tensor> {
    CellWeights {
        kind: CellKind::Lstm,
        lstm: w.clone(),
        time: None,
    }
}

/// One standard (optionally peephole) LSTM step.
pub fn lstm_step(x: &[f64], state: &CellState, w: &LstmWeights<Tensor>, peephole: bool) -> Result<CellState> {
    check_peephole_mode(w, peephole)?;
    step_values(&as_lstm(w), x, &[], state).map(|(s, _)| s)
}

/// LSTM step on `[x; τ_features]`; covers both LSTM+T (`τ_features = [τ]`)
/// and LSTM+Time2Vec (`τ_features = t2v(τ)`).
pub fn lstm_t_step(
    x: &[f64],
    tau_features: &[f64],
    state: &CellState,
    w: &LstmWeights<Tensor>,
    peephole: bool,
) -> Result<CellState> {
    let joined: Vec<f64> = x.iter().chain(tau_features).copied().collect();
    lstm_step(&joined, state, w, peephole)
}

/// One TLSTM1 step; `time` is `[τ]` or `t2v(τ)` matching the weight shapes.
pub fn tlstm1_step(x: &[f64], time: &[f64], state: &CellState, w: &CellWeights<Tensor>) -> Result<CellState> {
    if w.kind != CellKind::Tlstm1 {
        return Err(Error::contract(format!("expected TLSTM1 weights, got {:?}", w.kind)));
    }
    step_values(w, x, time, state).map(|(s, _)| s)
}

/// One TLSTM3 step. Fails if any entry of `W_t1` is positive.
pub fn tlstm3_step(x: &[f64], time: &[f64], state: &CellState, w: &CellWeights<Tensor>) -> Result<CellState> {
    if w.kind != CellKind::Tlstm3 {
        return Err(Error::contract(format!("expected TLSTM3 weights, got {:?}", w.kind)));
    }
    step_values(w, x, time, state).map(|(s, _)| s)
}

/// One step of an unrolled sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct StepItem {
    pub x: Vec<f64>,
    /// Time representation; for plain LSTMs it is appended to `x`.
    pub time: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Unrolled {
    pub hidden: Vec<Vec<f64>>,
    pub last: CellState,
}

/// Applies the cell left to right from a zero state.
pub fn unroll(cell: &CellWeights<Tensor>, sequence: &[StepItem]) -> Result<Unrolled> {
    if sequence.is_empty() {
        return Err(Error::contract("cannot unroll an empty sequence"));
    }
    let mut state = CellState::zeros(cell.hidden());
    let mut hidden = Vec::with_capacity(sequence.len());
    for item in sequence {
        state = if cell.kind == CellKind::Lstm {
            let joined: Vec<f64> = item.x.iter().chain(&item.time).copied().collect();
            step_values(cell, &joined, &[], &state)?.0
        } else {
            step_values(cell, &item.x, &item.time, &state)?.0
        };
        hidden.push(state.h.clone());
    }
    Ok(Unrolled { hidden, last: state })
}

#[cfg(test)]
mod tests;
