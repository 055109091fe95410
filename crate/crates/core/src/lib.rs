//! Child text-to-speech workbench.
//!
//! The crate covers the whole transfer-learning pipeline for a FastPitch-style
//! parallel acoustic model: corpus manifests and text front-end ([`corpus`]),
//! signal processing ([`dsp`]), learned monotonic alignment ([`aligner`]), the
//! acoustic model with its own reverse-mode tape ([`acoustic`]), the two-stage
//! training driver ([`trainer`]), vocoder adapters ([`vocoder`]), synthetic
//! dataset generation ([`synthgen`]) and objective evaluation ([`evalharness`]).
//!
//! Data-parallel loops (per-utterance gradients, batch rendering, feature
//! extraction, per-utterance scoring) go through [`par::Exec`], which uses
//! rayon when the `parallel` feature is on and plain iterators otherwise.
//! Reductions always happen in input order, so results are bit-identical
//! across both modes and any thread count.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod acoustic;
pub mod aligner;
pub mod corpus;
pub mod dsp;
mod error;
pub mod evalharness;
pub mod external;
pub mod fsutil;
pub mod par;
pub mod synthgen;
pub mod trainer;
pub mod vocoder;

pub use error::{Error, Result};
