//! Task heads built from an embedding, an optional recurrent cell and a
//! dense output layer.
//!
//! Three heads exist: the binary `t2v-dense` probe for single-time inputs,
//! sequence classification (softmax over `classes` from the final hidden
//! state), and next-item recommendation (raw scores over `event_vocab`).

mod count;
mod forward;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use count::{match_parameters, param_count, ParamCount};
pub use forward::{
    classify_batch, classify_sequence, recommend_batch, recommend_next, sequence_logits, synthetic_forward,
    synthetic_logits, BoundModel, SyntheticOutput,
};

use crate::autodiff::{NodeId, Tape};
use crate::cells::{CellConfig, CellKind, CellWeights};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::time2vec::{init_frequencies, Activation, FrequencyInit, Time2VecParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "t2v-dense")]
    T2vDense,
    #[serde(rename = "lstm")]
    Lstm,
    #[serde(rename = "lstm+t")]
    LstmT,
    #[serde(rename = "lstm+t2v")]
    LstmT2v,
    #[serde(rename = "tlstm1")]
    Tlstm1,
    #[serde(rename = "tlstm1+t2v")]
    Tlstm1T2v,
    #[serde(rename = "tlstm3")]
    Tlstm3,
    #[serde(rename = "tlstm3+t2v")]
    Tlstm3T2v,
}

impl ModelKind {
    pub const ALL: [ModelKind; 8] = [
        ModelKind::T2vDense,
        ModelKind::Lstm,
        ModelKind::LstmT,
        ModelKind::LstmT2v,
        ModelKind::Tlstm1,
        ModelKind::Tlstm1T2v,
        ModelKind::Tlstm3,
        ModelKind::Tlstm3T2v,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::T2vDense => "t2v-dense",
            ModelKind::Lstm => "lstm",
            ModelKind::LstmT => "lstm+t",
            ModelKind::LstmT2v => "lstm+t2v",
            ModelKind::Tlstm1 => "tlstm1",
            ModelKind::Tlstm1T2v => "tlstm1+t2v",
            ModelKind::Tlstm3 => "tlstm3",
            ModelKind::Tlstm3T2v => "tlstm3+t2v",
        }
    }

    pub fn uses_t2v(self) -> bool {
        matches!(
            self,
            ModelKind::T2vDense | ModelKind::LstmT2v | ModelKind::Tlstm1T2v | ModelKind::Tlstm3T2v
        )
    }

    /// Whether time is consumed at all (plain `lstm` ignores it).
    pub fn uses_time(self) -> bool {
        self != ModelKind::Lstm
    }

    pub fn cell_kind(self) -> Option<CellKind> {
        match self {
            ModelKind::T2vDense => None,
            ModelKind::Lstm | ModelKind::LstmT | ModelKind::LstmT2v => Some(CellKind::Lstm),
            ModelKind::Tlstm1 | ModelKind::Tlstm1T2v => Some(CellKind::Tlstm1),
            ModelKind::Tlstm3 | ModelKind::Tlstm3T2v => Some(CellKind::Tlstm3),
        }
    }

    pub fn is_time_gated(self) -> bool {
        matches!(self.cell_kind(), Some(CellKind::Tlstm1 | CellKind::Tlstm3))
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model kind `{s}`")))
    }
}

/// How embedding frequencies start out. `Random` frequencies are learned;
/// the two deterministic grids stay fixed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum T2vInit {
    #[default]
    Random,
    Fourier,
    Positional,
}

/// Configuration of a Time2Vec layer inside a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbedSpec {
    pub k: usize,
    #[serde(default)]
    pub init: T2vInit,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default = "default_true")]
    pub include_linear: bool,
}

fn default_activation() -> Activation {
    Activation::Sin
}

fn default_true() -> bool {
    true
}

fn default_item_embed_dim() -> usize {
    64
}

impl EmbedSpec {
    pub fn new(k: usize) -> Self {
        EmbedSpec {
            k,
            init: T2vInit::Random,
            activation: Activation::Sin,
            include_linear: true,
        }
    }

    pub fn output_len(&self) -> usize {
        self.k + usize::from(self.include_linear)
    }

    fn build(&self, seed: u64) -> Result<Time2VecParams> {
        let init = match self.init {
            T2vInit::Random => FrequencyInit::UniformRandom { seed },
            T2vInit::Fourier => FrequencyInit::FourierFixed,
            T2vInit::Positional => FrequencyInit::PositionalFixed,
        };
        let mut p = init_frequencies(self.k, init, self.include_linear)?;
        p.activation = self.activation;
        Ok(p)
    }
}

/// Which time value a step sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeMode {
    /// `t_j − t_1`.
    Absolute,
    /// `t_j − t_{j−1}`, with 0 at the first step.
    Delta,
}

/// Declarative description of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// 0 leaves the choice to [`crate::config::ExperimentConfig::resolve`].
    #[serde(default)]
    pub hidden: usize,
    /// Time2Vec layer; absent means the raw scalar time is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embed: Option<EmbedSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_vocab: Option<usize>,
    #[serde(default = "default_item_embed_dim")]
    pub item_embed_dim: usize,
    /// Defaults to on for time-gated cells and off otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peephole: Option<bool>,
    /// Defaults to `delta` for time-gated cells and `absolute` otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_mode: Option<TimeMode>,
}

/// What the output layer predicts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Binary,
    Classify { classes: usize },
    Recommend { vocab: usize, item_dim: usize },
}

impl ModelSpec {
    /// The binary probe: `σ(Θ·t2v(τ) + b)`.
    pub fn t2v_dense(embed: EmbedSpec) -> Self {
        ModelSpec {
            kind: ModelKind::T2vDense,
            hidden: 0,
            embed: Some(embed),
            classes: None,
            event_vocab: None,
            item_embed_dim: default_item_embed_dim(),
            peephole: None,
            time_mode: None,
        }
    }

    pub fn classifier(kind: ModelKind, hidden: usize, embed: Option<EmbedSpec>, classes: usize) -> Self {
        ModelSpec {
            kind,
            hidden,
            embed,
            classes: Some(classes),
            event_vocab: None,
            item_embed_dim: default_item_embed_dim(),
            peephole: None,
            time_mode: None,
        }
    }

    pub fn recommender(kind: ModelKind, hidden: usize, embed: Option<EmbedSpec>, vocab: usize) -> Self {
        ModelSpec {
            kind,
            hidden,
            embed,
            classes: None,
            event_vocab: Some(vocab),
            item_embed_dim: default_item_embed_dim(),
            peephole: None,
            time_mode: None,
        }
    }

    pub fn peephole(&self) -> bool {
        self.peephole.unwrap_or(self.kind.is_time_gated())
    }

    pub fn time_mode(&self) -> TimeMode {
        self.time_mode.unwrap_or(if self.kind.is_time_gated() {
            TimeMode::Delta
        } else {
            TimeMode::Absolute
        })
    }

    pub fn validate(&self) -> Result<()> {
        let kind = self.kind;
        match (kind.uses_t2v(), &self.embed) {
            (true, None) => return Err(Error::Config(format!("{kind} needs an `embed` section"))),
            (false, Some(_)) => {
                return Err(Error::Config(format!(
                    "{kind} takes raw time; drop the `embed` section"
                )))
            }
            (_, Some(e)) if e.k == 0 => return Err(Error::Config("embed.k must be at least 1".into())),
            _ => {}
        }
        if kind == ModelKind::T2vDense {
            if self.classes.is_some() || self.event_vocab.is_some() {
                return Err(Error::Config(
                    "t2v-dense is a binary head; drop `classes`/`event_vocab`".into(),
                ));
            }
            return Ok(());
        }
        if self.hidden == 0 {
            return Err(Error::Config("hidden size must be at least 1".into()));
        }
        match (self.classes, self.event_vocab) {
            (Some(c), None) if c >= 2 => {}
            (Some(c), None) => return Err(Error::Config(format!("need at least 2 classes, got {c}"))),
            (None, Some(v)) if v >= 1 => {
                if self.item_embed_dim == 0 {
                    return Err(Error::Config("item_embed_dim must be at least 1".into()));
                }
            }
            (None, Some(_)) => return Err(Error::Config("event_vocab must be at least 1".into())),
            (Some(_), Some(_)) => return Err(Error::Config("set either `classes` or `event_vocab`, not both".into())),
            (None, None) => return Err(Error::Config(format!("{kind} needs `classes` or `event_vocab`"))),
        }
        if kind == ModelKind::Lstm && self.event_vocab.is_none() {
            return Err(Error::Config(
                "plain lstm ignores time, so a classifier over time-only input has no input".into(),
            ));
        }
        Ok(())
    }

    pub fn task(&self) -> Task {
        match (self.kind, self.classes, self.event_vocab) {
            (ModelKind::T2vDense, _, _) => Task::Binary,
            (_, Some(classes), _) => Task::Classify { classes },
            (_, _, Some(vocab)) => Task::Recommend {
                vocab,
                item_dim: self.item_embed_dim,
            },
            _ => Task::Binary,
        }
    }

    /// Rows of the time representation at one step (0 for plain LSTM).
    pub fn time_width(&self) -> usize {
        if !self.kind.uses_time() {
            return 0;
        }
        self.embed.as_ref().map_or(1, EmbedSpec::output_len)
    }

    fn item_width(&self) -> usize {
        match self.task() {
            Task::Recommend { item_dim, .. } => item_dim,
            _ => 0,
        }
    }

    pub fn cell_config(&self) -> Option<CellConfig> {
        let kind = self.kind.cell_kind()?;
        let time_width = self.time_width();
        let (input, gate_time) = if kind == CellKind::Lstm {
            (self.item_width() + time_width, 0)
        } else {
            (self.item_width(), time_width)
        };
        Some(CellConfig {
            kind,
            input,
            hidden: self.hidden,
            time_width: gate_time,
            peephole: self.peephole(),
        })
    }

    fn output_dims(&self) -> (usize, usize) {
        match self.task() {
            Task::Binary => (1, self.embed.as_ref().map_or(1, EmbedSpec::output_len)),
            Task::Classify { classes } => (classes, self.hidden),
            Task::Recommend { vocab, .. } => (vocab, self.hidden),
        }
    }
}

/// Affine map `Θ·x + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `out×in`.
    pub theta: Tensor,
    /// `out×1`.
    pub b: Tensor,
}

impl DenseLayer {
    pub fn zeros(out: usize, input: usize) -> Self {
        DenseLayer {
            theta: Tensor::zeros(out, input),
            b: Tensor::zeros(out, 1),
        }
    }

    pub fn glorot(out: usize, input: usize, rng: &mut Rng) -> Self {
        let limit = (6.0 / (out + input) as f64).sqrt();
        let data = (0..out * input).map(|_| rng.range(-limit, limit)).collect();
        DenseLayer {
            theta: Tensor::from_raw(out, input, data),
            b: Tensor::zeros(out, 1),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.theta.cols() {
            return Err(Error::Dimension {
                op: "dense",
                lhs: self.theta.shape(),
                rhs: (x.len(), 1),
            });
        }
        Ok((0..self.theta.rows())
            .map(|r| {
                let row = &self.theta.data()[r * x.len()..(r + 1) * x.len()];
                row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.b.get(r, 0)
            })
            .collect())
    }

    /// `theta·x + b` with `x` of shape `in×B`.
    pub fn record(tape: &mut Tape, theta: NodeId, b: NodeId, x: NodeId) -> Result<NodeId> {
        let z = tape.matmul(theta, x)?;
        tape.add(z, b)
    }
}

/// All parameters of one model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub spec: ModelSpec,
    pub t2v: Option<Time2VecParams>,
    pub cell: Option<CellWeights<Tensor>>,
    /// Item embedding table, `vocab×item_dim`.
    pub items: Option<Tensor>,
    pub dense: DenseLayer,
}

const T2V_STREAM: u64 = 1;
const CELL_STREAM: u64 = 2;
const ITEM_STREAM: u64 = 3;
const DENSE_STREAM: u64 = 4;

impl ModelParams {
    /// Seeded initialization; each component draws from its own stream so
    /// changing one part of the spec leaves the others' draws intact.
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let t2v = spec
            .embed
            .as_ref()
            .map(|e| e.build(Rng::derived(seed, T2V_STREAM).next_u64()))
            .transpose()?;
        let cell = spec
            .cell_config()
            .map(|c| CellWeights::init(&c, &mut Rng::derived(seed, CELL_STREAM)))
            .transpose()?;
        let items = match spec.task() {
            Task::Recommend { vocab, item_dim } => {
                let mut rng = Rng::derived(seed, ITEM_STREAM);
                let limit = (6.0 / (vocab + item_dim) as f64).sqrt();
                let data = (0..vocab * item_dim).map(|_| rng.range(-limit, limit)).collect();
                Some(Tensor::from_raw(vocab, item_dim, data))
            }
            _ => None,
        };
        let (out, input) = spec.output_dims();
        let dense = DenseLayer::glorot(out, input, &mut Rng::derived(seed, DENSE_STREAM));
        Ok(ModelParams {
            spec: spec.clone(),
            t2v,
            cell,
            items,
            dense,
        })
    }

    /// Every parameter tensor with its stable name, trainable or not.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        if let Some(p) = &self.t2v {
            out.push(("t2v.omega".to_string(), p.omega_tensor()));
            out.push(("t2v.phi".to_string(), p.phi_tensor()));
        }
        if let Some(c) = &self.cell {
            c.for_each(|n, t| out.push((format!("cell.{n}"), t.clone())));
        }
        if let Some(t) = &self.items {
            out.push(("items".to_string(), t.clone()));
        }
        out.push(("dense.theta".to_string(), self.dense.theta.clone()));
        out.push(("dense.b".to_string(), self.dense.b.clone()));
        out
    }

    /// Rebuilds parameters from [`ModelParams::named_tensors`] output. Every
    /// expected name must be present with the shape the spec implies.
    pub fn from_named(spec: &ModelSpec, tensors: &[(String, Tensor)]) -> Result<Self> {
        let mut params = ModelParams::init(spec, 0)?;
        let lookup = |name: &str, like: &Tensor| -> Result<Tensor> {
            let t = tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::Format(format!("missing tensor `{name}`")))?;
            if t.shape() != like.shape() {
                return Err(Error::Format(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    t.shape(),
                    like.shape()
                )));
            }
            Ok(t.clone())
        };
        if let Some(p) = &mut params.t2v {
            p.omega = lookup("t2v.omega", &p.omega_tensor())?.into_data();
            p.phi = lookup("t2v.phi", &p.phi_tensor())?.into_data();
        }
        if let Some(c) = &mut params.cell {
            let mut err = None;
            c.for_each_mut(|n, t| match lookup(&format!("cell.{n}"), t) {
                Ok(v) => *t = v,
                Err(e) => {
                    err.get_or_insert(e);
                }
            });
            if let Some(e) = err {
                return Err(e);
            }
        }
        if let Some(t) = &mut params.items {
            *t = lookup("items", t)?;
        }
        params.dense.theta = lookup("dense.theta", &params.dense.theta)?;
        params.dense.b = lookup("dense.b", &params.dense.b)?;
        if let Some(c) = &params.cell {
            c.check_constraints()?;
        }
        Ok(params)
    }

    fn t2v_trainable(&self) -> bool {
        self.t2v.as_ref().is_some_and(|p| p.trainable)
    }

    /// Names of the tensors the optimizer updates, in binding order.
    pub fn trainable_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit_trainable(|n, _| out.push(n));
        out
    }

    /// Visits trainable tensors as flat slices in binding order.
    pub fn visit_trainable(&self, mut f: impl FnMut(String, &[f64])) {
        if let (true, Some(p)) = (self.t2v_trainable(), &self.t2v) {
            f("t2v.omega".into(), &p.omega);
            f("t2v.phi".into(), &p.phi);
        }
        if let Some(c) = &self.cell {
            c.for_each(|n, t| f(format!("cell.{n}"), t.data()));
        }
        if let Some(t) = &self.items {
            f("items".into(), t.data());
        }
        f("dense.theta".into(), self.dense.theta.data());
        f("dense.b".into(), self.dense.b.data());
    }

    /// Mutable counterpart of [`ModelParams::visit_trainable`].
    pub fn visit_trainable_mut(&mut self, mut f: impl FnMut(String, &mut [f64])) {
        let trainable = self.t2v_trainable();
        if let (true, Some(p)) = (trainable, &mut self.t2v) {
            f("t2v.omega".into(), &mut p.omega);
            f("t2v.phi".into(), &mut p.phi);
        }
        if let Some(c) = &mut self.cell {
            c.for_each_mut(|n, t| f(format!("cell.{n}"), t.data_mut()));
        }
        if let Some(t) = &mut self.items {
            f("items".into(), t.data_mut());
        }
        f("dense.theta".into(), self.dense.theta.data_mut());
        f("dense.b".into(), self.dense.b.data_mut());
    }

    /// Re-establishes parameter constraints after an update.
    pub fn apply_constraints(&mut self) {
        if let Some(c) = &mut self.cell {
            c.apply_constraints();
        }
    }

    /// Order-sensitive FNV-1a hash over the bits of every tensor; used to
    /// prove evaluation leaves parameters untouched.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (_, t) in self.named_tensors() {
            for v in t.data() {
                for byte in v.to_bits().to_le_bytes() {
                    h ^= byte as u64;
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }
}
