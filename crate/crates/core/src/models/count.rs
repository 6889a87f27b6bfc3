use serde::Serialize;

use super::{ModelKind, ModelSpec, T2vInit, Task};
use crate::cells::CellWeights;
use crate::error::{Error, Result};

/// Trainable scalar count, itemized per tensor.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub total: usize,
    pub items: Vec<(String, usize)>,
}

/// Counts trainable scalars without allocating the item table. Fixed
/// embeddings and the unused linear slot of a linear-free embedding are not
/// counted.
pub fn param_count(spec: &ModelSpec) -> Result<ParamCount> {
    spec.validate()?;
    let mut items = Vec::new();
    if let Some(e) = &spec.embed {
        if e.init == T2vInit::Random {
            items.push(("t2v.omega".to_string(), e.output_len()));
            items.push(("t2v.phi".to_string(), e.output_len()));
        }
    }
    if let Some(cfg) = spec.cell_config() {
        CellWeights::zeros(&cfg)?.for_each(|n, t| items.push((format!("cell.{n}"), t.len())));
    }
    if let Task::Recommend { vocab, item_dim } = spec.task() {
        items.push(("items".to_string(), vocab * item_dim));
    }
    let (out, input) = spec.output_dims();
    items.push(("dense.theta".to_string(), out * input));
    items.push(("dense.b".to_string(), out));
    Ok(ParamCount {
        total: items.iter().map(|(_, n)| n).sum(),
        items,
    })
}

fn count_with_hidden(spec: &ModelSpec, hidden: usize) -> Result<usize> {
    let mut s = spec.clone();
    s.hidden = hidden;
    Ok(param_count(&s)?.total)
}

/// Largest hidden size for `adjustable` whose parameter count does not
/// exceed that of `reference`.
pub fn match_parameters(reference: &ModelSpec, adjustable: &ModelSpec) -> Result<ModelSpec> {
    if adjustable.kind == ModelKind::T2vDense {
        return Err(Error::Config("t2v-dense has no hidden size to adjust".into()));
    }
    let budget = param_count(reference)?.total;
    if count_with_hidden(adjustable, 1)? > budget {
        return Err(Error::Config(format!(
            "{} exceeds the {budget}-parameter budget even with hidden size 1",
            adjustable.kind
        )));
    }
    // count is strictly increasing in the hidden size: find an upper bound,
    // then bisect for the last size within budget
    let (mut lo, mut hi) = (1usize, 2usize);
    while count_with_hidden(adjustable, hi)? <= budget {
        lo = hi;
        hi *= 2;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if count_with_hidden(adjustable, mid)? <= budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut out = adjustable.clone();
    out.hidden = lo;
    Ok(out)
}
