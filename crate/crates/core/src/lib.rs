//! Streaming articulatory voice conversion.
//!
//! Audio is framed into 200 Hz spectral frames, decomposed into pitch,
//! periodicity, loudness and 12 articulatory trajectories by causal
//! convolutional networks, and resynthesised in a target voice by a
//! harmonic-plus-noise vocoder conditioned on a speaker embedding.

pub mod articulatory;
pub mod error;
pub mod eval;
pub mod frontend;
pub mod models;
pub mod nn;
pub mod runtime;
pub mod source;
pub mod speaker;
pub mod vocoder;
pub mod wav;

pub use error::{Error, Result};
