//! Event-sequence records, dataset generators and file formats.
//!
//! [`EventSequence`] is the single sample record used everywhere: the
//! synthetic task stores one time per sequence, Event-MNIST stores pixel
//! positions, and next-event logs add item ids.

mod idx;
mod jsonl;

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use idx::{parse_idx_images, parse_idx_labels, read_idx_images, read_idx_labels, IdxImages};
pub use jsonl::{load_event_jsonl, parse_event_jsonl, save_event_jsonl, to_jsonl};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Ordered timestamps with optional item ids and class label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventSequence {
    pub times: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub events: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

impl EventSequence {
    pub fn from_times(times: Vec<f64>) -> Self {
        EventSequence {
            times,
            events: None,
            label: None,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Checks finiteness, weak ordering of times and event/time alignment.
    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.times.iter().position(|t| !t.is_finite()) {
            return Err(Error::Data(format!("time at position {i} is not finite")));
        }
        if let Some(i) = self.times.windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::Data(format!(
                "times must be non-decreasing: {} follows {} at position {}",
                self.times[i + 1],
                self.times[i],
                i + 1
            )));
        }
        if let Some(ev) = &self.events {
            if ev.len() != self.times.len() {
                return Err(Error::Data(format!(
                    "{} event ids for {} times",
                    ev.len(),
                    self.times.len()
                )));
            }
        }
        Ok(())
    }
}

/// Train/test partition together with the seed that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub test: Vec<T>,
    pub seed: u64,
}

/// Number of days in the synthetic year.
pub const SYNTHETIC_DAYS: usize = 365;
/// Prefix of the synthetic year used for training (⌊0.75·365⌋).
pub const SYNTHETIC_TRAIN: usize = 273;

const NOISE_STREAM: u64 = 0x6e6f_6973_65;

/// One point of the day-of-week toy task.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPoint {
    /// Day index in `1..=365`.
    pub day: u32,
    /// `α·day`.
    pub tau: f64,
    pub label: u8,
}

impl SyntheticPoint {
    pub fn to_sequence(self) -> EventSequence {
        EventSequence {
            times: vec![self.tau],
            events: None,
            label: Some(self.label as usize),
        }
    }

    pub fn from_sequence(seq: &EventSequence) -> Result<Self> {
        match (seq.times.as_slice(), seq.label) {
            ([tau], Some(label @ (0 | 1))) => Ok(SyntheticPoint {
                day: 0,
                tau: *tau,
                label: label as u8,
            }),
            _ => Err(Error::Data(
                "synthetic samples need exactly one time and a 0/1 label".into(),
            )),
        }
    }
}

/// Days `1..=365` scaled by `alpha`, labelled 1 on multiples of 7. The first
/// 273 days train and the last 92 test; each training label is flipped
/// independently with probability `noise_rate`.
pub fn gen_synthetic(noise_rate: f64, alpha: f64, seed: u64) -> Result<Split<SyntheticPoint>> {
    if !(0.0..=1.0).contains(&noise_rate) {
        return Err(Error::Config(format!("noise rate must be in [0, 1], got {noise_rate}")));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("time scale must be positive, got {alpha}")));
    }
    let mut rng = Rng::derived(seed, NOISE_STREAM);
    let mut train = Vec::with_capacity(SYNTHETIC_TRAIN);
    let mut test = Vec::with_capacity(SYNTHETIC_DAYS - SYNTHETIC_TRAIN);
    for day in 1..=SYNTHETIC_DAYS as u32 {
        let mut label = u8::from(day % 7 == 0);
        if (day as usize) <= SYNTHETIC_TRAIN {
            if rng.bernoulli(noise_rate) {
                label ^= 1;
            }
            train.push(SyntheticPoint {
                day,
                tau: alpha * day as f64,
                label,
            });
        } else {
            test.push(SyntheticPoint {
                day,
                tau: alpha * day as f64,
                label,
            });
        }
    }
    Ok(Split { train, test, seed })
}

/// Output of [`gen_event_mnist`].
#[derive(Clone, Debug, PartialEq)]
pub struct EventMnist {
    pub sequences: Vec<EventSequence>,
    /// Images without any pixel above the threshold.
    pub dropped: usize,
}

/// Converts images into event sequences: the flat row-major positions of
/// pixels brighter than `threshold` (after scaling to `[0, 1]`) become event
/// times, shifted so the first event is at 0.
pub fn gen_event_mnist(images: &IdxImages, labels: &[u8], threshold: f64) -> Result<EventMnist> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("threshold must be in (0, 1), got {threshold}")));
    }
    if images.count != labels.len() {
        return Err(Error::Format(format!(
            "{} images but {} labels",
            images.count,
            labels.len()
        )));
    }
    let mut sequences = Vec::with_capacity(images.count);
    let mut dropped = 0;
    for (i, &label) in labels.iter().enumerate() {
        let positions: Vec<usize> = images
            .image(i)
            .iter()
            .enumerate()
            .filter(|(_, &p)| p as f64 / 255.0 > threshold)
            .map(|(j, _)| j)
            .collect();
        let Some(&first) = positions.first() else {
            dropped += 1;
            continue;
        };
        sequences.push(EventSequence {
            times: positions.iter().map(|&p| (p - first) as f64).collect(),
            events: None,
            label: Some(label as usize),
        });
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} images with no pixel above {threshold}");
    }
    Ok(EventMnist { sequences, dropped })
}

/// Reads an image/label IDX pair and converts it with [`gen_event_mnist`].
pub fn event_mnist_from_files(images: &Path, labels: &Path, threshold: f64) -> Result<EventMnist> {
    let images = read_idx_images(images)?;
    let labels = read_idx_labels(labels)?;
    gen_event_mnist(&images, &labels, threshold)
}

/// Groups consecutive events into frames of distinct ids; the final frame
/// may be partial.
pub fn bin_events(seq: &EventSequence, events_per_frame: usize) -> Result<Vec<BTreeSet<usize>>> {
    let events = seq
        .events
        .as_ref()
        .ok_or_else(|| Error::contract("binning needs event ids"))?;
    if events_per_frame == 0 {
        return Err(Error::contract("frames need at least one event"));
    }
    Ok(events
        .chunks(events_per_frame)
        .map(|c| c.iter().copied().collect())
        .collect())
}

/// One next-item prediction instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NextEventExample {
    pub prefix: EventSequence,
    pub target: usize,
}

/// Every `(first j events, event j+1)` pair of a sequence, with prefixes
/// truncated to their most recent `max_len` events. Sequences shorter than
/// two events yield nothing.
pub fn next_event_examples(seq: &EventSequence, max_len: usize) -> Result<Vec<NextEventExample>> {
    let events = seq
        .events
        .as_ref()
        .ok_or_else(|| Error::contract("next-event examples need event ids"))?;
    if max_len == 0 {
        return Err(Error::contract("max_len must be at least 1"));
    }
    if events.len() < 2 {
        log::warn!("skipping a sequence with {} events", events.len());
        return Ok(Vec::new());
    }
    Ok((1..events.len())
        .map(|j| {
            let start = j.saturating_sub(max_len);
            NextEventExample {
                prefix: EventSequence {
                    times: seq.times[start..j].to_vec(),
                    events: Some(events[start..j].to_vec()),
                    label: None,
                },
                target: events[j],
            }
        })
        .collect())
}

#[cfg(test)]
mod tests;
