//! Session runtime: config, trajectory scripts, the control and audio
//! contexts, the offline renderer and the threaded real-time runner.

mod audio;
mod config;
mod control;
mod offline;
mod params;
mod realtime;
mod script;

pub use audio::{AudioContext, AudioMsg, MeterFrame, Queues, METER_QUEUE_CAPACITY, UPDATE_QUEUE_CAPACITY};
pub use config::{
    config_to_string, demo_graph, demo_mapping, load_config, parse_config, save_config, ApiConfig, BlendConfig,
    FeedConfig, FieldError, LayoutConfig, Mode, OscConfig, RobotConfig, SessionConfig, SynthConfig,
};
pub use control::{
    ControlContext, IngressStats, JointSnapshot, StateSnapshot, ValidationFailed, PROTOCOL_VERSION,
};
pub use offline::{encode_wav, render_offline, Lockstep, SampleGrid, WavBuilder};
pub use params::{ParamTable, ParamTarget};
pub use realtime::{probe_devices, ClockKind, ControlMsg, DeviceKind, Engine, EngineClient, RunOptions, RunOutput};
pub use script::{load_script, parse_script, EventKind, ScriptCursor, ScriptEvent, TrajectoryScript};

use thiserror::Error;

use crate::sources::SourceError;

/// Upper bound on output channels; meter frames are fixed-size.
pub const MAX_CHANNELS: usize = 32;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("config syntax error at line {line}: {message}")]
    ConfigSyntax { line: usize, message: String },
    #[error("invalid config: {}", join_errors(.0))]
    ConfigInvalid(Vec<FieldError>),
    #[error("config: {0}")]
    Config(String),
    #[error("script syntax error at line {line}: {message}")]
    ScriptSyntax { line: usize, message: String },
    #[error("script event {index} at t = {t} precedes t = {previous}")]
    ScriptUnordered { index: usize, t: f64, previous: f64 },
    #[error("script event {index}: {reason}")]
    ScriptInvalid { index: usize, reason: String },
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error("i/o: {0}")]
    Io(String),
    #[error("audio device: {0}")]
    Device(String),
    #[error("engine thread panicked: {0}")]
    Thread(String),
}

fn join_errors(errors: &[FieldError]) -> String {
    errors.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; ")
}
