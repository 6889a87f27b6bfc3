//! The Time2Vec embedding: one linear feature `ω₀τ + φ₀` followed by `k`
//! periodic features `F(ωᵢτ + φᵢ)`.
//!
//! [`t2v`] evaluates a single time directly. [`embed_batch`] records the same
//! computation on a [`Tape`] for a row of times so that frequencies, phases,
//! and (optionally) the times themselves receive gradients.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Activation applied to the periodic components.
///
/// `Cos` is equivalent to `Sin` with every phase shifted by π/2; the
/// non-periodic choices exist for ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sin,
    Cos,
    Mod1,
    Triangle,
    Sigmoid,
    Tanh,
    Relu,
}

impl Activation {
    pub const ALL: [Activation; 7] = [
        Activation::Sin,
        Activation::Cos,
        Activation::Mod1,
        Activation::Triangle,
        Activation::Sigmoid,
        Activation::Tanh,
        Activation::Relu,
    ];

    pub fn apply(self, x: f64) -> f64 {
        use crate::autodiff::scalar as s;
        match self {
            Activation::Sin => x.sin(),
            Activation::Cos => x.cos(),
            Activation::Mod1 => s::mod1(x),
            Activation::Triangle => s::triangle(x),
            Activation::Sigmoid => s::sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    pub fn record(self, tape: &mut Tape, x: NodeId) -> NodeId {
        match self {
            Activation::Sin => tape.sin(x),
            Activation::Cos => tape.cos(x),
            Activation::Mod1 => tape.mod1(x),
            Activation::Triangle => tape.triangle(x),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Relu => tape.relu(x),
        }
    }

    pub fn is_periodic(self) -> bool {
        matches!(
            self,
            Activation::Sin | Activation::Cos | Activation::Mod1 | Activation::Triangle
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Sin => "sin",
            Activation::Cos => "cos",
            Activation::Mod1 => "mod1",
            Activation::Triangle => "triangle",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Activation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown activation `{s}`")))
    }
}

/// Frequencies, phases and configuration of one embedding layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Time2VecParams {
    pub k: usize,
    /// `ω₀ … ω_k`; index 0 is the linear term.
    pub omega: Vec<f64>,
    /// `φ₀ … φ_k`.
    pub phi: Vec<f64>,
    pub activation: Activation,
    pub include_linear: bool,
    pub trainable: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FrequencyInit {
    /// `ω ~ U(0, 1)`, `φ ~ U(0, 2π)`.
    UniformRandom { seed: u64 },
    /// `ωₙ = 2πn/k`, `φₙ = 0`.
    FourierFixed,
    /// Transformer-style positional frequencies `1/10000^(2⌊(n−1)/2⌋/k)`,
    /// alternating phases 0 and π/2.
    PositionalFixed,
}

impl FrequencyInit {
    pub fn is_fixed(&self) -> bool {
        !matches!(self, FrequencyInit::UniformRandom { .. })
    }
}

impl Time2VecParams {
    pub fn new(
        k: usize,
        omega: Vec<f64>,
        phi: Vec<f64>,
        activation: Activation,
        include_linear: bool,
        trainable: bool,
    ) -> Result<Self> {
        let params = Time2VecParams {
            k,
            omega,
            phi,
            activation,
            include_linear,
            trainable,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::contract("time2vec needs k >= 1 periodic components"));
        }
        if self.omega.len() != self.k + 1 || self.phi.len() != self.k + 1 {
            return Err(Error::contract(format!(
                "time2vec with k={} needs {} frequencies and phases, got {} and {}",
                self.k,
                self.k + 1,
                self.omega.len(),
                self.phi.len()
            )));
        }
        if self.omega.iter().chain(&self.phi).any(|v| !v.is_finite()) {
            return Err(Error::numeric("time2vec parameters must be finite"));
        }
        Ok(())
    }

    /// `k + 1` with the linear term, `k` without it.
    pub fn output_len(&self) -> usize {
        if self.include_linear {
            self.k + 1
        } else {
            self.k
        }
    }

    /// Number of scalars the optimizer updates.
    pub fn trainable_count(&self) -> usize {
        if self.trainable {
            2 * self.output_len()
        } else {
            0
        }
    }

    pub fn omega_tensor(&self) -> Tensor {
        Tensor::from_raw(self.k + 1, 1, self.omega.clone())
    }

    pub fn phi_tensor(&self) -> Tensor {
        Tensor::from_raw(self.k + 1, 1, self.phi.clone())
    }
}

/// Evaluates the embedding of a single time.
pub fn t2v(tau: f64, params: &Time2VecParams) -> Result<Vec<f64>> {
    if !tau.is_finite() {
        return Err(Error::numeric(format!("time must be finite, got {tau}")));
    }
    let mut out = Vec::with_capacity(params.output_len());
    if params.include_linear {
        out.push(params.omega[0] * tau + params.phi[0]);
    }
    for i in 1..=params.k {
        out.push(params.activation.apply(params.omega[i] * tau + params.phi[i]));
    }
    Ok(out)
}

/// Records the embedding of a `1×B` row of times; the result is
/// `output_len×B`. `omega` and `phi` are `(k+1)×1` nodes.
pub fn embed_batch(
    tape: &mut Tape,
    omega: NodeId,
    phi: NodeId,
    times: NodeId,
    activation: Activation,
    include_linear: bool,
) -> Result<NodeId> {
    let (rows, cols) = tape.shape(omega);
    if cols != 1 || rows < 2 || tape.shape(phi) != (rows, 1) {
        return Err(Error::Dimension {
            op: "time2vec",
            lhs: tape.shape(omega),
            rhs: tape.shape(phi),
        });
    }
    if tape.shape(times).0 != 1 {
        return Err(Error::Dimension {
            op: "time2vec",
            lhs: (rows, 1),
            rhs: tape.shape(times),
        });
    }
    let scaled = tape.matmul(omega, times)?;
    let pre = tape.add(scaled, phi)?;
    let periodic_pre = tape.slice_rows(pre, 1, rows)?;
    let periodic = activation.record(tape, periodic_pre);
    if include_linear {
        let linear = tape.slice_rows(pre, 0, 1)?;
        tape.concat_rows(&[linear, periodic])
    } else {
        Ok(periodic)
    }
}

/// Builds an embedding layer with `k` periodic components.
pub fn init_frequencies(k: usize, init: FrequencyInit, include_linear: bool) -> Result<Time2VecParams> {
    if k < 1 {
        return Err(Error::contract("time2vec needs k >= 1 periodic components"));
    }
    let mut omega = vec![0.0; k + 1];
    let mut phi = vec![0.0; k + 1];
    omega[0] = 1.0;
    match init {
        FrequencyInit::UniformRandom { seed } => {
            let mut rng = Rng::seed_from(seed);
            for i in 0..=k {
                omega[i] = rng.uniform();
                phi[i] = rng.range(0.0, TAU);
            }
        }
        FrequencyInit::FourierFixed => {
            for (n, w) in omega.iter_mut().enumerate().skip(1) {
                *w = TAU * n as f64 / k as f64;
            }
        }
        FrequencyInit::PositionalFixed => {
            for n in 1..=k {
                let exponent = ((n - 1) / 2) as f64 * 2.0 / k as f64;
                omega[n] = 1.0 / 10000f64.powf(exponent);
                phi[n] = if n % 2 == 0 { FRAC_PI_2 } else { 0.0 };
            }
        }
    }
    Time2VecParams::new(k, omega, phi, Activation::Sin, include_linear, !init.is_fixed())
}

/// Divides every frequency by `alpha`, so that the result applied to `α·τ`
/// reproduces the original applied to `τ`.
pub fn rescale_frequencies(params: &Time2VecParams, alpha: f64) -> Result<Time2VecParams> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::contract(format!("rescale factor must be positive, got {alpha}")));
    }
    let mut out = params.clone();
    for w in &mut out.omega {
        *w /= alpha;
    }
    Ok(out)
}

/// Shifts every periodic phase by π/2, turning a cos layer into the
/// equivalent sin layer.
pub fn cos_as_sin(params: &Time2VecParams) -> Time2VecParams {
    let mut out = params.clone();
    for p in out.phi.iter_mut().skip(1) {
        *p += FRAC_PI_2;
    }
    out.activation = Activation::Sin;
    out
}

/// Period of component `i` (`2π/ωᵢ`).
pub fn period(params: &Time2VecParams, i: usize) -> f64 {
    2.0 * PI / params.omega[i]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check_many;
    use proptest::prelude::*;

    fn sine(omega: Vec<f64>, phi: Vec<f64>, include_linear: bool) -> Time2VecParams {
        Time2VecParams::new(omega.len() - 1, omega, phi, Activation::Sin, include_linear, true).unwrap()
    }

    #[test]
    fn zero_time_zero_phase_is_zero_vector() {
        let p = sine(vec![0.3, 1.7, -4.0], vec![0.0; 3], true);
        assert_eq!(t2v(0.0, &p).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn weekly_component_peaks_at_multiples_of_seven() {
        let p = sine(vec![0.0, TAU / 7.0], vec![0.0, FRAC_PI_2], true);
        for m in 1..5 {
            let v = t2v(7.0 * m as f64, &p).unwrap();
            assert!((v[1] - 1.0).abs() < 1e-12, "{v:?}");
        }
    }

    #[test]
    fn two_component_example() {
        let p = sine(vec![0.4, 1.2], vec![0.1, -0.3], true);
        let v = t2v(2.5, &p).unwrap();
        assert!((v[0] - 1.1).abs() < 1e-15);
        // sin(2.7) from an external calculator
        assert!((v[1] - 0.4273798802338298).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_input() {
        let p = sine(vec![0.4, 1.2], vec![0.1, -0.3], true);
        assert!(matches!(t2v(f64::NAN, &p), Err(Error::Numeric(_))));
        assert!(matches!(t2v(f64::INFINITY, &p), Err(Error::Numeric(_))));
        assert!(matches!(
            Time2VecParams::new(2, vec![0.0; 3], vec![0.0; 2], Activation::Sin, true, true),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            init_frequencies(0, FrequencyInit::FourierFixed, true),
            Err(Error::Contract(_))
        ));
        assert!(matches!(rescale_frequencies(&p, 0.0), Err(Error::Contract(_))));
        assert!(matches!(rescale_frequencies(&p, -1.0), Err(Error::Contract(_))));
    }

    #[test]
    fn fourier_fixed_frequencies() {
        let p = init_frequencies(16, FrequencyInit::FourierFixed, true).unwrap();
        assert!((p.omega[1] - 0.39269908169872414).abs() < 1e-15);
        assert!((p.omega[16] - TAU).abs() < 1e-15);
        assert!(p.phi.iter().all(|&v| v == 0.0));
        assert_eq!((p.omega[0], p.phi[0]), (1.0, 0.0));
        assert!(!p.trainable);
    }

    #[test]
    fn positional_fixed_first_pair() {
        let p = init_frequencies(2, FrequencyInit::PositionalFixed, true).unwrap();
        assert_eq!(p.omega, vec![1.0, 1.0, 1.0]);
        assert_eq!(p.phi, vec![0.0, 0.0, FRAC_PI_2]);
        assert!(!p.trainable);

        let p = init_frequencies(8, FrequencyInit::PositionalFixed, true).unwrap();
        // pairs (1,2), (3,4), ... share a frequency; exponent 2·⌊(n−1)/2⌋/k
        assert_eq!(p.omega[3], p.omega[4]);
        assert!((p.omega[3] - 1.0 / 10000f64.powf(0.25)).abs() < 1e-15);
        assert!((p.omega[8] - 1.0 / 10000f64.powf(0.75)).abs() < 1e-15);
    }

    #[test]
    fn uniform_random_is_seeded_and_in_range() {
        let a = init_frequencies(32, FrequencyInit::UniformRandom { seed: 9 }, true).unwrap();
        let b = init_frequencies(32, FrequencyInit::UniformRandom { seed: 9 }, true).unwrap();
        let c = init_frequencies(32, FrequencyInit::UniformRandom { seed: 10 }, true).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.omega, c.omega);
        assert!(a.trainable);
        assert!(a.omega.iter().all(|w| (0.0..1.0).contains(w)));
        assert!(a.phi.iter().all(|p| (0.0..TAU).contains(p)));
    }

    #[test]
    fn rescale_examples() {
        let p = init_frequencies(4, FrequencyInit::UniformRandom { seed: 1 }, true).unwrap();
        assert_eq!(rescale_frequencies(&p, 1.0).unwrap(), p);
        let single = sine(vec![1.0, 0.898], vec![0.0, 1.56], true);
        let r = rescale_frequencies(&single, 2.0).unwrap();
        assert!((r.omega[1] - 0.449).abs() < 1e-15);
        assert_eq!(r.phi, single.phi);
    }

    #[test]
    fn output_length_tracks_linear_flag() {
        let mut p = init_frequencies(5, FrequencyInit::UniformRandom { seed: 3 }, true).unwrap();
        assert_eq!(t2v(1.0, &p).unwrap().len(), 6);
        let with = t2v(1.3, &p).unwrap();
        p.include_linear = false;
        let without = t2v(1.3, &p).unwrap();
        assert_eq!(without.len(), 5);
        assert_eq!(&with[1..], &without[..]);
    }

    #[test]
    fn cos_layer_equals_phase_shifted_sin_layer() {
        let mut p = init_frequencies(8, FrequencyInit::UniformRandom { seed: 4 }, true).unwrap();
        p.activation = Activation::Cos;
        let q = cos_as_sin(&p);
        for i in 0..50 {
            let tau = i as f64 * 1.37 - 20.0;
            let a = t2v(tau, &p).unwrap();
            let b = t2v(tau, &q).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tape_batch_matches_direct_evaluation() {
        for activation in Activation::ALL {
            for include_linear in [true, false] {
                let mut p = init_frequencies(6, FrequencyInit::UniformRandom { seed: 5 }, include_linear).unwrap();
                p.activation = activation;
                let times = [0.0, 1.5, -3.25, 40.0];
                let mut tape = Tape::new();
                let w = tape.leaf(p.omega_tensor());
                let ph = tape.leaf(p.phi_tensor());
                let t = tape.constant(Tensor::row(&times).unwrap());
                let e = embed_batch(&mut tape, w, ph, t, activation, include_linear).unwrap();
                let v = tape.value(e);
                assert_eq!(v.shape(), (p.output_len(), 4));
                for (j, &tau) in times.iter().enumerate() {
                    let direct = t2v(tau, &p).unwrap();
                    for (i, d) in direct.iter().enumerate() {
                        assert!((v.get(i, j) - d).abs() < 1e-14, "{activation} {i} {j}");
                    }
                }
            }
        }
    }

    #[test]
    fn embed_batch_rejects_column_times() {
        let p = init_frequencies(3, FrequencyInit::FourierFixed, true).unwrap();
        let mut tape = Tape::new();
        let w = tape.constant(p.omega_tensor());
        let ph = tape.constant(p.phi_tensor());
        let t = tape.constant(Tensor::column(&[1.0, 2.0]).unwrap());
        assert!(matches!(
            embed_batch(&mut tape, w, ph, t, Activation::Sin, true),
            Err(Error::Dimension { op: "time2vec", .. })
        ));
    }

    proptest! {
        #[test]
        fn rescaling_is_exact(
            omega in proptest::collection::vec(-3.0f64..3.0, 5),
            phi in proptest::collection::vec(0.0f64..TAU, 5),
            tau in -100.0f64..100.0,
            alpha in 0.01f64..100.0,
        ) {
            let p = sine(omega, phi, true);
            let r = rescale_frequencies(&p, alpha).unwrap();
            let a = t2v(alpha * tau, &r).unwrap();
            let b = t2v(tau, &p).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12, "{x} vs {y}");
            }
        }

        #[test]
        fn sine_components_are_periodic(
            omega in 1e-3f64..5.0,
            phi in 0.0f64..TAU,
            tau in -1e4f64..1e4,
        ) {
            let p = sine(vec![1.0, omega], vec![0.0, phi], true);
            let a = t2v(tau, &p).unwrap()[1];
            let b = t2v(tau + period(&p, 1), &p).unwrap()[1];
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn gradients_match_central_differences(
            omega in proptest::collection::vec(-2.0f64..2.0, 4),
            phi in proptest::collection::vec(-2.0f64..2.0, 4),
            times in proptest::collection::vec(-2.0f64..2.0, 3),
            include_linear in any::<bool>(),
        ) {
            let reports = grad_check_many(
                |tape, ids| {
                    let e = embed_batch(tape, ids[0], ids[1], ids[2], Activation::Sin, include_linear)?;
                    let w = tape.constant(Tensor::filled(1, 3, 0.7));
                    let s = tape.hadamard(e, w)?;
                    let s = tape.sin(s);
                    Ok(tape.sum(s))
                },
                &[
                    Tensor::column(&omega).unwrap(),
                    Tensor::column(&phi).unwrap(),
                    Tensor::row(&times).unwrap(),
                ],
                1e-4,
            ).unwrap();
            for r in reports {
                prop_assert!(r.max_rel_error < 1e-5, "{r:?}");
            }
        }
    }
}
