//! Central-difference verification of tape gradients.

use super::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max_i |analytic_i − central_i| / max(1, |analytic_i|, |central_i|)`.
    pub max_rel_error: f64,
    /// Flat index of the entry attaining the maximum.
    pub worst_index: usize,
    pub entries: usize,
}

/// Compares the tape gradient of the scalar built by `f` against central
/// differences `(f(θ+h·e_i) − f(θ−h·e_i)) / 2h` for every entry of `θ`.
pub fn grad_check<F>(f: F, theta: &Tensor, h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, NodeId) -> Result<NodeId>,
{
    let mut reports = grad_check_many(|tape, ids| f(tape, ids[0]), std::slice::from_ref(theta), h)?;
    Ok(reports.remove(0))
}

/// [`grad_check`] over several parameter tensors at once; one report per tensor.
pub fn grad_check_many<F>(f: F, thetas: &[Tensor], h: f64) -> Result<Vec<GradCheckReport>>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    if !(h > 0.0) {
        return Err(Error::contract(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = thetas.iter().map(|t| tape.leaf(t.clone())).collect();
    let root = f(&mut tape, &ids)?;
    let base = tape.value(root).item();
    if !base.is_finite() {
        return Err(Error::numeric(format!(
            "objective is non-finite ({base}) at the base point"
        )));
    }
    let grads = tape.backward(root)?;

    let eval = |point: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = point.iter().map(|t| tape.constant(t.clone())).collect();
        let root = f(&mut tape, &ids)?;
        Ok(tape.value(root).item())
    };

    let mut reports = Vec::with_capacity(thetas.len());
    let mut point: Vec<Tensor> = thetas.to_vec();
    for (which, theta) in thetas.iter().enumerate() {
        let analytic = grads.get_or_zeros(ids[which], theta);
        let mut report = GradCheckReport {
            max_rel_error: 0.0,
            worst_index: 0,
            entries: theta.len(),
        };
        for i in 0..theta.len() {
            let orig = theta.data()[i];
            point[which].data_mut()[i] = orig + h;
            let plus = eval(&point)?;
            point[which].data_mut()[i] = orig - h;
            let minus = eval(&point)?;
            point[which].data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::numeric(format!(
                    "objective is non-finite when perturbing tensor {which} at index {i}"
                )));
            }
            let central = (plus - minus) / (2.0 * h);
            let a = analytic.data()[i];
            let rel = (a - central).abs() / 1f64.max(a.abs()).max(central.abs());
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_index = i;
            }
        }
        reports.push(report);
    }
    Ok(reports)
}
