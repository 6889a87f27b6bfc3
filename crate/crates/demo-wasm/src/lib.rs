//! Browser bindings: an embedding explorer, an in-page day-of-week trainer
//! and the time-rescaling check.
//!
//! The trainer runs its own loop on the tape instead of `train::fit`, which
//! needs a thread pool and a wall clock that `wasm32-unknown-unknown` lacks.

use wasm_bindgen::prelude::*;

use temporal_embed::analysis::{dominant_component, dump_signal, freq_histogram, periodic_frequencies};
use temporal_embed::autodiff::Tape;
use temporal_embed::data::{gen_synthetic, SyntheticPoint};
use temporal_embed::models::{synthetic_forward, synthetic_logits, BoundModel, EmbedSpec, ModelParams, ModelSpec};
use temporal_embed::rng::Rng;
use temporal_embed::time2vec::{init_frequencies, rescale_frequencies, t2v, Activation, FrequencyInit, Time2VecParams};
use temporal_embed::train::{OptimizerConfig, OptimizerState};
use temporal_embed::Tensor;

fn js_err(e: temporal_embed::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn activation(name: &str) -> Result<Activation, JsError> {
    Activation::ALL
        .into_iter()
        .find(|a| a.name() == name)
        .ok_or_else(|| JsError::new(&format!("unknown activation `{name}`")))
}

/// Values of `F(ω·τ + φ)` at `n` evenly spaced times in `[lo, hi]`.
#[wasm_bindgen]
pub fn component_curve(
    omega: f64,
    phi: f64,
    activation_name: &str,
    lo: f64,
    hi: f64,
    n: usize,
) -> Result<Vec<f64>, JsError> {
    let params = Time2VecParams::new(
        1,
        vec![0.0, omega],
        vec![0.0, phi],
        activation(activation_name)?,
        false,
        false,
    )
    .map_err(js_err)?;
    let step = if n > 1 { (hi - lo) / (n - 1) as f64 } else { 0.0 };
    (0..n)
        .map(|i| t2v(lo + i as f64 * step, &params).map(|v| v[0]))
        .collect::<temporal_embed::Result<_>>()
        .map_err(js_err)
}

/// Largest `|t2v(ατ; ω/α, φ) − t2v(τ; ω, φ)|` over `draws` random draws.
#[wasm_bindgen]
pub fn rescaling_gap(seed: u64, alpha: f64, draws: usize) -> Result<f64, JsError> {
    let mut rng = Rng::seed_from(seed);
    let mut worst = 0f64;
    for d in 0..draws {
        let p = init_frequencies(8, FrequencyInit::UniformRandom { seed: seed ^ d as u64 }, true).map_err(js_err)?;
        let scaled = rescale_frequencies(&p, alpha).map_err(js_err)?;
        let tau = rng.range(0.0, 365.0);
        let a = t2v(alpha * tau, &scaled).map_err(js_err)?;
        let b = t2v(tau, &p).map_err(js_err)?;
        worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(worst, f64::max);
    }
    Ok(worst)
}

/// Time2Vec plus a sigmoid output trained on the day-of-week task.
#[wasm_bindgen]
pub struct Trainer {
    params: ModelParams,
    opt: OptimizerState,
    train: Vec<SyntheticPoint>,
    test: Vec<SyntheticPoint>,
    batch: usize,
    rng: Rng,
    epoch: usize,
}

#[wasm_bindgen]
impl Trainer {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, k: usize, activation_name: &str, noise_rate: f64, batch: usize) -> Result<Trainer, JsError> {
        let mut embed = EmbedSpec::new(k);
        embed.activation = activation(activation_name)?;
        let params = ModelParams::init(&ModelSpec::t2v_dense(embed), seed).map_err(js_err)?;
        let split = gen_synthetic(noise_rate, 1.0, seed).map_err(js_err)?;
        Ok(Trainer {
            params,
            opt: OptimizerState::new(OptimizerConfig::default()).map_err(js_err)?,
            train: split.train,
            test: split.test,
            batch: batch.max(1),
            rng: Rng::derived(seed, 0xdead),
            epoch: 0,
        })
    }

    /// Runs `epochs` shuffled passes; returns the mean training loss of the
    /// last one.
    pub fn run(&mut self, epochs: usize) -> Result<f64, JsError> {
        let mut last = f64::NAN;
        for _ in 0..epochs {
            let mut order: Vec<usize> = (0..self.train.len()).collect();
            self.rng.shuffle(&mut order);
            let mut total = 0.0;
            for idx in order.chunks(self.batch) {
                let mut tape = Tape::new();
                let bound = BoundModel::bind(&mut tape, &self.params, true);
                let taus: Vec<f64> = idx.iter().map(|&i| self.train[i].tau).collect();
                let y: Vec<f64> = idx.iter().map(|&i| self.train[i].label as f64).collect();
                let z = synthetic_logits(&mut tape, &bound, &self.params, &taus).map_err(js_err)?;
                let p = tape.sigmoid(z);
                let loss = tape.bce(p, &y).map_err(js_err)?;
                total += tape.value(loss).item();
                let mut g = tape.backward(loss).map_err(js_err)?;
                let scale = 1.0 / idx.len() as f64;
                let grads: Vec<Tensor> = bound
                    .trainable()
                    .iter()
                    .map(|&id| {
                        g.take(id)
                            .map(|t| t.map(|v| v * scale))
                            .unwrap_or_else(|| Tensor::zeros(tape.shape(id).0, tape.shape(id).1))
                    })
                    .collect();
                self.opt.step(&mut self.params, &grads).map_err(js_err)?;
            }
            self.epoch += 1;
            last = total / self.train.len() as f64;
        }
        Ok(last)
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn test_accuracy(&self) -> Result<f64, JsError> {
        let (t2v, dense) = (self.params.t2v.as_ref().expect("t2v-dense"), &self.params.dense);
        let mut correct = 0;
        for p in &self.test {
            let out = synthetic_forward(p.tau, t2v, dense).map_err(js_err)?;
            correct += usize::from((out.pre_sigmoid > 0.0) == (p.label == 1));
        }
        Ok(correct as f64 / self.test.len() as f64)
    }

    /// `[weight, ω, φ]` of the strongest periodic component.
    pub fn dominant(&self) -> Result<Vec<f64>, JsError> {
        let c = dominant_component(
            self.params.t2v.as_ref().expect("t2v-dense"),
            self.params.dense.theta.data(),
        )
        .map_err(js_err)?;
        Ok(vec![c.weight, c.omega, c.phi])
    }

    /// Pre-sigmoid output over days `lo..=hi` in steps of `step`.
    pub fn signal(&self, lo: f64, hi: f64, step: f64) -> Result<Vec<f64>, JsError> {
        let dump = dump_signal(
            self.params.t2v.as_ref().expect("t2v-dense"),
            &self.params.dense,
            lo,
            hi,
            step,
        )
        .map_err(js_err)?;
        Ok(dump.rows.into_iter().map(|(_, v)| v).collect())
    }

    /// Counts of learned `|ω|` per 0.1-wide bin, out-of-range last.
    pub fn histogram(&self) -> Vec<u32> {
        let h = freq_histogram(periodic_frequencies(self.params.t2v.as_ref().expect("t2v-dense")));
        h.counts.iter().chain([&h.out_of_range]).map(|&c| c as u32).collect()
    }
}
