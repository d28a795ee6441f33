//! Causal beat and downbeat tracking over per-frame activation streams.
//!
//! The crate is `no_std` (with `alloc`) and contains only the inference
//! machinery: bar-pointer state spaces, observation/transition models, a
//! particle filter with dynamic particle injection, a Viterbi decoder with
//! beat extrapolation, the streaming [`Tracker`], and F-measure evaluation.
//! File formats, synthetic data and the command line live in the `vocalbeat`
//! crate.

#![cfg_attr(not(test), no_std)]
// Negated float comparisons below reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod dbn;
pub mod error;
pub mod eval;
pub mod models;
pub mod particle_filter;
pub mod state_space;
pub mod tracker;

pub use error::{Error, Result};
pub use models::{ActivationFrame, BarModel, BeatModel, OffBeatNorm, TransitionParams};
pub use particle_filter::{InjectionRequest, ParticleSet, PhaseEstimate};
pub use state_space::{BarStateSpace, BeatStateSpace, StateIndex};
pub use tracker::{BeatEvent, CombineMode, Method, RemovalPool, Tracker, TrackerConfig};
