//! Long-video sequence encoding for small language models.
//!
//! The crate schedules frames from arbitrarily long videos into fixed-size
//! clips, encodes each clip into a constant number of embeddings, and repeats
//! positional indices across interleaved frame groups so the sequence never
//! exceeds the positional span seen during training. A small decoder-only
//! model, a synthetic benchmark builder and a multiple-choice / ROUGE
//! evaluation harness exercise the encoding end to end.

pub mod bench;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod io;
pub mod lm;
pub mod par;
pub mod pipeline;
pub mod rng;
pub mod schedule;
pub mod video;
pub mod vocab;

pub use error::{Error, Result};
pub use par::Execution;
