//! Block-based processing graph with click-free parameter changes.

mod biquad;
mod graph;
mod pitchshift;
mod smooth;

pub use biquad::{biquad_coeffs, Biquad, BiquadCoeffs, FilterKind};
pub use graph::{
    db_to_linear, param_info, DspGraph, GraphSpec, NodeKind, NodeSpec, ParamAck, ParamHandle,
    ParamInfo, DEFAULT_SMOOTHING_MS,
};
pub use pitchshift::{pitchshift_block, PitchShifter, PITCH_WINDOW, RATIO_RANGE};
pub use smooth::{smoothing_coefficient, SmoothedParam};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DspError {
    #[error("{what} out of range: {value}")]
    OutOfRange { what: String, value: f64 },
    #[error("missing graph input {0:?}")]
    MissingInput(String),
    #[error("graph contains a cycle through {0:?}")]
    CycleDetected(Vec<String>),
    #[error("unknown parameter address {0:?}")]
    UnknownAddress(String),
    #[error("duplicate node id {0:?}")]
    DuplicateId(String),
    #[error("node {node:?} has no parameter {param:?}")]
    UnknownParam { node: String, param: String },
    #[error("node {node:?} references unknown input {input:?}")]
    UnknownInput { node: String, input: String },
    #[error("graph output {0:?} is not a node")]
    UnknownOutput(String),
    #[error("block size mismatch: expected {expected}, got {got}")]
    BlockMismatch { expected: usize, got: usize },
    #[error("invalid graph: {0}")]
    Invalid(String),
}
