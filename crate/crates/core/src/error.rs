use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid tempo range: fps={fps}, bpm {min_bpm}..{max_bpm}")]
    InvalidRange {
        fps: u32,
        min_bpm: f64,
        max_bpm: f64,
    },
    #[error("meter set is empty")]
    EmptyMeters,
    #[error("invalid meter {0}: a bar needs at least 2 beats")]
    InvalidMeter(u32),
    #[error("particle count must be at least 1")]
    ZeroParticles,
    #[error("weights are not normalized (sum = {0})")]
    UnnormalizedWeights(f64),
    #[error("resample output count must be at least 1")]
    EmptyResample,
    #[error("injection target has no states in this model")]
    InvalidInjectionTarget,
    #[error("input sequence is empty")]
    EmptyInput,
    #[error("need at least {needed} beats, got {got}")]
    InsufficientHistory { needed: usize, got: usize },
    #[error("no downbeats in history")]
    NoDownbeats,
    #[error("timestamps are not sorted")]
    Unsorted,
    #[error("activation out of range at frame {frame}: {value}")]
    ActivationOutOfRange { frame: usize, value: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("evaluation tables do not share the same cells")]
    MismatchedTables,
}
