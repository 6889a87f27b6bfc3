//! Frequency histograms, signal dumps and weight snapshots for plotting.

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::models::{synthetic_forward, DenseLayer};
use crate::time2vec::{Activation, Time2VecParams};

pub const BINS: usize = 10;
pub const BIN_WIDTH: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrequencyHistogram {
    pub centers: Vec<f64>,
    pub counts: Vec<usize>,
    pub out_of_range: usize,
}

impl FrequencyHistogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum::<usize>() + self.out_of_range
    }
}

/// Bin index for `|w|`, or `None` when it falls outside `[0, 1)`.
fn bin_of(w: f64) -> Option<usize> {
    let a = w.abs();
    // a * 10 rounds 0.3 up to 3.0000000000000004, where a / 0.1 would give 2.999…
    (a < 1.0).then(|| ((a * 10.0).floor() as usize).min(BINS - 1))
}

/// Counts `|ω|` into ten left-closed bins of width 0.1. Values of 1 or more
/// (and NaN) go to `out_of_range`.
pub fn freq_histogram(omegas: &[f64]) -> FrequencyHistogram {
    let mut counts = vec![0; BINS];
    let mut out_of_range = 0;
    for &w in omegas {
        match bin_of(w) {
            Some(i) => counts[i] += 1,
            None => out_of_range += 1,
        }
    }
    FrequencyHistogram {
        centers: (0..BINS).map(|i| (2 * i + 1) as f64 / 20.0).collect(),
        counts,
        out_of_range,
    }
}

/// Frequencies of the periodic components (the linear term excluded).
pub fn periodic_frequencies(params: &Time2VecParams) -> &[f64] {
    &params.omega[1..=params.k]
}

/// One t2v output with the head weight that reads it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Component {
    pub weight: f64,
    pub omega: f64,
    pub phi: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SignalDump {
    /// `(τ, Θ·t2v(τ) + b)` over the grid.
    pub rows: Vec<(f64, f64)>,
    /// Every output component, largest `|weight|` first.
    pub snapshot: Vec<Component>,
}

/// Pairs each t2v output with its weight in `head` (one row of Θ), in output
/// order: the linear term first when present.
pub fn components(params: &Time2VecParams, head: &[f64]) -> Result<Vec<Component>> {
    if head.len() != params.output_len() {
        return Err(Error::Dimension {
            op: "components",
            lhs: (1, head.len()),
            rhs: (params.output_len(), 1),
        });
    }
    let first = usize::from(!params.include_linear);
    Ok(head
        .iter()
        .zip(first..=params.k)
        .map(|(&weight, i)| Component {
            weight,
            omega: params.omega[i],
            phi: params.phi[i],
        })
        .collect())
}

/// Evaluates the binary probe over `lo, lo + step, …` up to `hi` inclusive.
pub fn dump_signal(params: &Time2VecParams, dense: &DenseLayer, lo: f64, hi: f64, step: f64) -> Result<SignalDump> {
    if !(step > 0.0) || !lo.is_finite() || !hi.is_finite() || hi < lo {
        return Err(Error::Config(format!("bad grid [{lo}, {hi}, {step}]")));
    }
    // the tolerance keeps hi itself on the grid despite rounding in (hi - lo) / step
    let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    let rows = (0..n)
        .map(|i| {
            let tau = lo + i as f64 * step;
            Ok((tau, synthetic_forward(tau, params, dense)?.pre_sigmoid))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut snapshot = components(params, dense.theta.data())?;
    snapshot.sort_by(|a, b| b.weight.abs().total_cmp(&a.weight.abs()));
    Ok(SignalDump { rows, snapshot })
}

/// Maps `(ω, φ)` to `ω ≥ 0`, `φ ∈ [0, 2π)` without changing `sin(ωτ + φ)`.
pub fn canonicalize(omega: f64, phi: f64) -> (f64, f64) {
    let (w, p) = if omega < 0.0 { (-omega, PI - phi) } else { (omega, phi) };
    let mut p = p.rem_euclid(TAU);
    // rem_euclid can return TAU itself for tiny negative inputs
    if p >= TAU {
        p = 0.0;
    }
    (w, p)
}

/// The periodic component with the largest `|weight|`. For sine the result
/// is canonical: a negative weight is folded into the phase
/// (`w·sin(x) = |w|·sin(x + π)`), then `(ω, φ)` goes through
/// [`canonicalize`]. Ties go to the earlier component.
pub fn dominant_component(params: &Time2VecParams, head: &[f64]) -> Result<Component> {
    if params.k == 0 {
        return Err(Error::Config("no periodic components".into()));
    }
    let all = components(params, head)?;
    let periodic = &all[usize::from(params.include_linear)..];
    let mut best = periodic[0];
    for c in &periodic[1..] {
        if c.weight.abs() > best.weight.abs() {
            best = *c;
        }
    }
    if params.activation == Activation::Sin {
        if best.weight < 0.0 {
            best.weight = -best.weight;
            best.phi += PI;
        }
        (best.omega, best.phi) = canonicalize(best.omega, best.phi);
    }
    Ok(best)
}

fn push_row(out: &mut String, cells: &[f64]) {
    let line: Vec<String> = cells.iter().map(f64::to_string).collect();
    let _ = writeln!(out, "{}", line.join(","));
}

pub fn histogram_csv(h: &FrequencyHistogram) -> String {
    let mut out = String::from("center,count\n");
    for (c, n) in h.centers.iter().zip(&h.counts) {
        let _ = writeln!(out, "{c},{n}");
    }
    out
}

pub fn signal_csv(rows: &[(f64, f64)]) -> String {
    let mut out = String::from("tau,value\n");
    for &(t, v) in rows {
        push_row(&mut out, &[t, v]);
    }
    out
}

pub fn snapshot_csv(snapshot: &[Component]) -> String {
    let mut out = String::from("weight,omega,phi\n");
    for c in snapshot {
        push_row(&mut out, &[c.weight, c.omega, c.phi]);
    }
    out
}
