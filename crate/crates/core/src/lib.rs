//! Learnable time embeddings for event sequences.
//!
//! The crate is organised bottom-up:
//!
//! * [`autodiff`] records dense matrix computations on a tape and differentiates them.
//! * [`time2vec`] maps a scalar time to one linear and `k` periodic features.
//! * [`cells`] holds the recurrent transitions (LSTM, peephole LSTM, LSTM+T, TLSTM1, TLSTM3).
//! * [`models`] composes embeddings and cells into task heads and counts parameters.
//! * [`data`] generates and ingests event sequences.
//! * [`train`] provides optimizers, losses, ranking metrics and the training loop.
//! * [`analysis`] inspects learned frequencies and signals.
//! * [`config`] and [`checkpoint`] are the run document and the saved-model format.
//! * [`gradsuite`] checks every gradient against central differences.

pub mod analysis;
pub mod autodiff;
pub mod cells;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod fsio;
pub mod gradsuite;
pub mod models;
pub mod rng;
pub mod tensor;
pub mod time2vec;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
