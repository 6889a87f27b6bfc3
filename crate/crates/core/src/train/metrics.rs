use serde::{Deserialize, Serialize};

use crate::autodiff::scalar;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// `−(y ln p + (1−y) ln(1−p))` with `p` clamped to `[1e-12, 1−1e-12]`.
pub fn bce_loss(p: f64, y: f64) -> f64 {
    scalar::bce(p, y)
}

/// Softmax cross-entropy of raw `scores` against class `y`.
pub fn xent_loss(scores: &[f64], y: usize) -> Result<f64> {
    if y >= scores.len() {
        return Err(Error::contract(format!(
            "class {y} out of range for {} scores",
            scores.len()
        )));
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    Ok(lse - scores[y])
}

/// Outcome of ranking one sampled list.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankOutcome {
    pub hit: bool,
    /// `1/rank` inside the top `q`, else 0.
    pub rr: f64,
    /// 1-based position of the correct item.
    pub rank: usize,
}

/// Ranks `sampled` by descending score, breaking ties toward the smaller id,
/// and scores the position of `correct`. `scores` is indexed by item id.
pub fn recall_mrr(scores: &[f64], correct: usize, q: usize, sampled: &[usize]) -> Result<RankOutcome> {
    if !sampled.contains(&correct) {
        return Err(Error::contract(format!(
            "correct item {correct} is not in the sampled list"
        )));
    }
    if let Some(&bad) = sampled.iter().find(|&&id| id >= scores.len()) {
        return Err(Error::contract(format!(
            "item {bad} has no score ({} scores)",
            scores.len()
        )));
    }
    let mut seen = sampled.to_vec();
    seen.sort_unstable();
    if seen.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::contract("sampled items must be distinct"));
    }
    let sc = scores[correct];
    if !sc.is_finite() || sampled.iter().any(|&id| !scores[id].is_finite()) {
        return Err(Error::numeric("ranking scores must be finite"));
    }
    let ahead = sampled
        .iter()
        .filter(|&&id| {
            let s = scores[id];
            s > sc || (s == sc && id < correct)
        })
        .count();
    let rank = ahead + 1;
    let hit = rank <= q;
    Ok(RankOutcome {
        hit,
        rr: if hit { 1.0 / rank as f64 } else { 0.0 },
        rank,
    })
}

/// Sampled-list evaluation settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingConfig {
    #[serde(default = "default_q")]
    pub q: usize,
    /// Items per ranked list: the target plus `list_size − 1` negatives.
    #[serde(default = "default_list_size")]
    pub list_size: usize,
    #[serde(default = "default_sample_times")]
    pub sample_times: usize,
}

fn default_q() -> usize {
    10
}

fn default_list_size() -> usize {
    101
}

fn default_sample_times() -> usize {
    20
}

impl Default for RankingConfig {
    fn default() -> Self {
        RankingConfig {
            q: default_q(),
            list_size: default_list_size(),
            sample_times: default_sample_times(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub recall_at_q: f64,
    pub mrr_at_q: f64,
    pub q: usize,
    pub list_size: usize,
    pub sample_times: usize,
    /// Ranked lists scored (`instances × sample_times`).
    pub lists: usize,
}

const NEGATIVE_STREAM: u64 = 0x6e65_67;

/// Scores `sample_times` random lists per instance. `scores[i]` holds one
/// score per vocabulary item for instance `i`.
pub fn evaluate_scores(
    scores: &[Vec<f64>],
    targets: &[usize],
    config: RankingConfig,
    seed: u64,
) -> Result<RankingReport> {
    if scores.len() != targets.len() {
        return Err(Error::contract(format!(
            "{} score vectors for {} targets",
            scores.len(),
            targets.len()
        )));
    }
    if config.sample_times == 0 || config.q == 0 || config.list_size == 0 {
        return Err(Error::Config("q, list_size and sample_times must be at least 1".into()));
    }
    let mut rng = Rng::derived(seed, NEGATIVE_STREAM);
    let (mut hits, mut rr, mut lists) = (0usize, 0.0, 0usize);
    let mut list = Vec::with_capacity(config.list_size);
    for (s, &target) in scores.iter().zip(targets) {
        let vocab = s.len();
        if vocab < config.list_size {
            return Err(Error::Config(format!(
                "vocabulary of {vocab} is smaller than the list size {}",
                config.list_size
            )));
        }
        for _ in 0..config.sample_times {
            list.clear();
            list.push(target);
            while list.len() < config.list_size {
                let id = rng.below(vocab as u64) as usize;
                if !list.contains(&id) {
                    list.push(id);
                }
            }
            let out = recall_mrr(s, target, config.q, &list)?;
            hits += usize::from(out.hit);
            rr += out.rr;
            lists += 1;
        }
    }
    let n = lists.max(1) as f64;
    Ok(RankingReport {
        recall_at_q: hits as f64 / n,
        mrr_at_q: rr / n,
        q: config.q,
        list_size: config.list_size,
        sample_times: config.sample_times,
        lists,
    })
}
