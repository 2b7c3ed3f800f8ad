//! Session configuration document (TOML).

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dsp::{DspGraph, GraphSpec, NodeKind, NodeSpec};
use crate::mapping::{Curve, MappingRoute, MappingSpec, SignalId};
use crate::robot::{KinematicParams, SteerParams, JOINTS};
use crate::sources::MotorVoiceParams;
use crate::spatial::{DistanceRolloff, SpatialParams, SpeakerLayout};

use super::params::ParamTable;
use super::EngineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// `run` paces the engine with the system clock.
    #[default]
    Realtime,
    /// `run` advances control and audio in lockstep as fast as possible.
    Offline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobotConfig {
    pub initial_q: [f64; JOINTS],
    pub steer: SteerParams,
    pub kinematics: KinematicParams,
}

impl Default for RobotConfig {
    fn default() -> Self {
        Self {
            initial_q: [0.0, -1.2, 1.6, -1.97, -1.57, 0.0],
            steer: SteerParams::default(),
            kinematics: KinematicParams::default(),
        }
    }
}

/// Sine drone forming the synthetic layer of the blend. Its pitch follows TCP
/// height; its level follows the loudness of the consequential bus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub base_hz: f64,
    pub hz_per_m: f64,
    pub level: f64,
    pub follow_ms: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            base_hz: 55.0,
            hz_per_m: 110.0,
            level: 0.8,
            follow_ms: 80.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlendConfig {
    /// 0 = consequential only, 1 = synthetic only.
    pub mix: f64,
    /// Initial per-voice level into the consequential bus.
    pub voice_mix: f64,
    /// Smoothing applied to joint speeds before they drive the voices.
    pub speed_smooth_ms: f64,
}

impl Default for BlendConfig {
    fn default() -> Self {
        Self {
            mix: 0.35,
            voice_mix: 0.3,
            speed_smooth_ms: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedConfig {
    /// Relative paths resolve against the config file's directory.
    pub path: PathBuf,
    #[serde(default = "default_true")]
    pub looping: bool,
    #[serde(default = "default_one")]
    pub gain: f64,
}

fn default_true() -> bool {
    true
}

fn default_one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LayoutConfig {
    /// Ring speaker azimuths in degrees, CCW from +x.
    pub ring_deg: Vec<f64>,
    pub point_source: bool,
    pub point_source_send: f64,
    pub rolloff: DistanceRolloff,
    pub reference_distance: f64,
    pub listener: [f64; 3],
}

impl Default for LayoutConfig {
    fn default() -> Self {
        Self {
            ring_deg: vec![45.0, 135.0, 225.0, 315.0],
            point_source: true,
            point_source_send: 0.5,
            rolloff: DistanceRolloff::None,
            reference_distance: 1.0,
            listener: [0.0; 3],
        }
    }
}

impl LayoutConfig {
    pub fn speaker_layout(&self) -> SpeakerLayout {
        SpeakerLayout {
            ring: self.ring_deg.iter().map(|d| d.to_radians()).collect(),
            has_point_source: self.point_source,
            point_source_channel: self.ring_deg.len(),
        }
    }

    pub fn spatial_params(&self) -> SpatialParams {
        SpatialParams {
            rolloff: self.rolloff,
            reference_distance: self.reference_distance,
            point_source_send: self.point_source_send,
            listener: self.listener,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OscConfig {
    pub in_port: u16,
    pub out_port: u16,
    pub out_host: String,
}

impl Default for OscConfig {
    fn default() -> Self {
        Self {
            in_port: 9000,
            out_port: 9001,
            out_host: "127.0.0.1".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ApiConfig {
    pub port: u16,
}

impl Default for ApiConfig {
    fn default() -> Self {
        Self { port: 8080 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SessionConfig {
    pub sample_rate: u32,
    pub block_size: usize,
    pub control_rate: u32,
    pub seed: u64,
    pub mode: Mode,
    /// Environment signal names accepted on `/env/<name>`.
    pub env: Vec<String>,
    pub robot: RobotConfig,
    pub voices: Vec<MotorVoiceParams>,
    pub synth: SynthConfig,
    pub blend: BlendConfig,
    pub feeds: Vec<FeedConfig>,
    pub layout: LayoutConfig,
    pub osc: OscConfig,
    pub api: ApiConfig,
    pub graph: GraphSpec,
    pub mapping: MappingSpec,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            sample_rate: 48_000,
            block_size: 256,
            control_rate: 100,
            seed: 1,
            mode: Mode::Realtime,
            env: vec!["light".into()],
            robot: RobotConfig::default(),
            voices: default_voices(),
            synth: SynthConfig::default(),
            blend: BlendConfig::default(),
            feeds: Vec::new(),
            layout: LayoutConfig::default(),
            osc: OscConfig::default(),
            api: ApiConfig::default(),
            graph: demo_graph(),
            mapping: demo_mapping(),
        }
    }
}

fn default_voices() -> Vec<MotorVoiceParams> {
    [82.0, 98.0, 123.0, 147.0, 185.0, 220.0]
        .iter()
        .map(|&base_freq| MotorVoiceParams {
            base_freq,
            idle_floor: 0.2,
            amp_per_radps: 0.05,
            ..MotorVoiceParams::default()
        })
        .collect()
}

fn node(id: &str, kind: NodeKind, params: &[(&str, f64)], inputs: &[&str]) -> NodeSpec {
    NodeSpec {
        id: id.into(),
        kind,
        filter: None,
        params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        inputs: inputs.iter().map(|s| s.to_string()).collect(),
    }
}

/// Lowpass and ring modulator on the dry path, a pitch-shifted echo on the
/// wet path, summed into a master gain.
pub fn demo_graph() -> GraphSpec {
    let mut lp = node("lp1", NodeKind::Biquad, &[("cutoff_hz", 1200.0), ("q", 0.9)], &["blend"]);
    lp.filter = Some(crate::dsp::FilterKind::Lowpass);
    GraphSpec {
        inputs: vec!["blend".into()],
        outputs: vec!["master".into()],
        smoothing_ms: crate::dsp::DEFAULT_SMOOTHING_MS,
        nodes: vec![
            lp,
            node("ring", NodeKind::Ringmod, &[("freq_hz", 30.0), ("depth", 0.2)], &["lp1"]),
            node("shift", NodeKind::Pitchshift, &[("ratio", 1.5)], &["blend"]),
            node("echo", NodeKind::Delay, &[("time_ms", 180.0), ("max_ms", 1000.0)], &["shift"]),
            node("wet", NodeKind::Gain, &[("gain_db", -12.0)], &["echo"]),
            node("mix", NodeKind::Mixer, &[], &["ring", "wet"]),
            node("master", NodeKind::Gain, &[("gain_db", 0.0)], &["mix"]),
        ],
    }
}

/// Proximity drives master attenuation, TCP speed opens the filter, and each
/// joint's speed raises its voice in the consequential mix.
pub fn demo_mapping() -> MappingSpec {
    let mut routes = vec![
        MappingRoute::linear(SignalId::Proximity, [0.3, 2.0], [-48.0, 0.0], "master.gain_db"),
        MappingRoute {
            curve: Curve::Exponential(2.0),
            ..MappingRoute::linear(SignalId::TcpSpeed, [0.0, 1.0], [400.0, 6000.0], "lp1.cutoff_hz")
        },
    ];
    for i in 0..JOINTS {
        routes.push(MappingRoute::linear(
            SignalId::JointSpeed(i),
            [0.0, 1.5],
            [0.3, 1.0],
            format!("voice{i}.mix"),
        ));
    }
    MappingSpec { routes }
}

/// One validation failure, addressed by a dotted field path.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Default)]
struct Errors(Vec<FieldError>);

impl Errors {
    fn add(&mut self, path: &str, message: String) {
        self.0.push(FieldError {
            path: path.to_string(),
            message,
        });
    }
}

impl SessionConfig {
    pub fn control_dt(&self) -> f64 {
        1.0 / self.control_rate as f64
    }

    pub fn channel_count(&self) -> usize {
        self.layout.ring_deg.len() + usize::from(self.layout.point_source)
    }

    /// Check every invariant; returns all failures found.
    pub fn validate(&self) -> Result<(), Vec<FieldError>> {
        let mut errors = Errors::default();
        if self.sample_rate == 0 {
            errors.add("sample_rate", "must be > 0".into());
        }
        if self.block_size == 0 {
            errors.add("block_size", "must be > 0".into());
        }
        if self.control_rate == 0 {
            errors.add("control_rate", "must be > 0".into());
        } else if self.block_size > 0
            && self.sample_rate > 0
            && self.control_rate as f64 > self.sample_rate as f64 / self.block_size as f64
        {
            errors.add("control_rate", "must not exceed sample_rate / block_size".into());
        }
        for name in &self.env {
            if SignalId::Env(name.clone()).to_string().parse::<SignalId>().is_err() {
                errors.add("env", format!("invalid env signal name {name:?}"));
            }
        }
        if let Err(e) = self.robot.kinematics.validate() {
            errors.add("robot.kinematics", e.to_string());
        }
        if let Err(e) = self.robot.steer.validate() {
            errors.add("robot.steer", e.to_string());
        }
        for (i, q) in self.robot.initial_q.iter().enumerate() {
            let [lo, hi] = self.robot.kinematics.limits[i];
            if !(lo..=hi).contains(q) {
                errors.add(&format!("robot.initial_q[{i}]"), "outside joint limits".into());
            }
        }
        if self.voices.is_empty() {
            errors.add("voices", "at least one motor voice is required".into());
        }
        for (i, v) in self.voices.iter().enumerate() {
            if let Err(e) = v.validate() {
                errors.add(&format!("voices[{i}]"), e.to_string());
            }
        }
        let s = &self.synth;
        if !(s.base_hz > 0.0 && s.hz_per_m.is_finite() && (0.0..=1.0).contains(&s.level) && s.follow_ms >= 0.0) {
            errors.add("synth", "base_hz > 0, level in [0, 1], follow_ms >= 0 required".into());
        }
        if !(0.0..=1.0).contains(&self.blend.mix) {
            errors.add("blend.mix", "must be in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.blend.voice_mix) {
            errors.add("blend.voice_mix", "must be in [0, 1]".into());
        }
        if !(self.blend.speed_smooth_ms >= 0.0) {
            errors.add("blend.speed_smooth_ms", "must be >= 0".into());
        }
        for (i, f) in self.feeds.iter().enumerate() {
            if !(f.gain.is_finite() && f.gain >= 0.0) {
                errors.add(&format!("feeds[{i}].gain"), "must be >= 0".into());
            }
        }
        if let Err(e) = self.layout.speaker_layout().validate() {
            errors.add("layout.ring_deg", e.to_string());
        }
        if self.channel_count() > super::MAX_CHANNELS {
            errors.add("layout.ring_deg", format!("at most {} output channels", super::MAX_CHANNELS));
        }
        if !(self.layout.reference_distance > 0.0) {
            errors.add("layout.reference_distance", "must be > 0".into());
        }
        if !(self.layout.point_source_send >= 0.0 && self.layout.point_source_send <= 1.0) {
            errors.add("layout.point_source_send", "must be in [0, 1]".into());
        }
        if self.graph.inputs != ["blend"] {
            errors.add("graph.inputs", "the graph takes exactly one input named \"blend\"".into());
        }
        if self.graph.outputs.len() != 1 {
            errors.add("graph.outputs", "exactly one output node is required".into());
        }
        if errors.0.is_empty() {
            match DspGraph::build(&self.graph, self.sample_rate as f64, self.block_size) {
                Err(e) => errors.add("graph", e.to_string()),
                Ok(graph) => {
                    let table = ParamTable::new(&graph, self.voices.len(), &self.env);
                    if let Err(e) = self.mapping.validate(&table) {
                        let path = match &e {
                            crate::mapping::MappingError::UnknownSink { route, .. }
                            | crate::mapping::MappingError::DuplicateSink { route, .. }
                            | crate::mapping::MappingError::BadRange { route, .. }
                            | crate::mapping::MappingError::UnknownSignal { route, .. } => {
                                format!("mapping.routes[{route}].{}", e.field())
                            }
                            _ => "mapping".into(),
                        };
                        errors.add(&path, e.to_string());
                    }
                }
            }
        }
        if errors.0.is_empty() {
            Ok(())
        } else {
            Err(errors.0)
        }
    }

    /// Resolve relative feed paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        for f in &mut self.feeds {
            if f.path.is_relative() {
                f.path = base.join(&f.path);
            }
        }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parse and validate a config document.
pub fn parse_config(text: &str) -> Result<SessionConfig, EngineError> {
    let config: SessionConfig = toml::from_str(text).map_err(|e| EngineError::ConfigSyntax {
        line: e.span().map(|s| line_of(text, s.start)).unwrap_or(1),
        message: e.message().to_string(),
    })?;
    config.validate().map_err(EngineError::ConfigInvalid)?;
    Ok(config)
}

/// Load, validate and resolve relative paths.
pub fn load_config(path: &Path) -> Result<SessionConfig, EngineError> {
    let text = std::fs::read_to_string(path).map_err(|e| EngineError::Io(format!("{}: {e}", path.display())))?;
    let mut config = parse_config(&text)?;
    if let Some(dir) = path.parent() {
        config.resolve_paths(dir);
    }
    Ok(config)
}

/// Canonical text form of a config.
pub fn config_to_string(config: &SessionConfig) -> String {
    toml::to_string(config).expect("session config is always representable")
}

pub fn save_config(config: &SessionConfig, path: &Path) -> Result<(), EngineError> {
    std::fs::write(path, config_to_string(config)).map_err(|e| EngineError::Io(format!("{}: {e}", path.display())))
}

