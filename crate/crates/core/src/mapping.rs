//! Routes kinematic and environment signals to DSP parameter targets.
//!
//! Each route clamps its source into `in_range`, normalises to `[0, 1]`,
//! shapes the value with a curve and rescales to `out_range`. Smoothing is
//! not applied here; `smooth_ms` is handed to the parameter layer.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::robot::JOINTS;

/// Curve constant used by `logarithmic` when none is given.
pub const DEFAULT_CURVE_K: f64 = 3.0;

pub const DEFAULT_ROUTE_SMOOTH_MS: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MappingError {
    #[error("syntax error at line {line}: {message}")]
    SyntaxError { line: usize, message: String },
    #[error("route {route}: unknown sink {sink:?}")]
    UnknownSink { route: usize, sink: String },
    #[error("route {route}: sink {sink:?} already used")]
    DuplicateSink { route: usize, sink: String },
    #[error("route {route}: bad range: {reason}")]
    BadRange { route: usize, reason: String },
    #[error("route {route}: unknown signal {signal}")]
    UnknownSignal { route: usize, signal: String },
    #[error("missing signal {0}")]
    MissingSignal(SignalId),
}

impl MappingError {
    /// Name of the offending route field, for error reporting.
    pub fn field(&self) -> &'static str {
        match self {
            MappingError::SyntaxError { .. } => "routes",
            MappingError::UnknownSink { .. } | MappingError::DuplicateSink { .. } => "sink",
            MappingError::BadRange { reason, .. } if reason.starts_with("in_range") => "in_range",
            MappingError::BadRange { reason, .. } if reason.starts_with("curve") => "curve",
            MappingError::BadRange { reason, .. } if reason.starts_with("smooth_ms") => "smooth_ms",
            MappingError::BadRange { reason, .. } if reason.starts_with("clamp") => "clamp",
            MappingError::BadRange { .. } => "out_range",
            MappingError::UnknownSignal { .. } | MappingError::MissingSignal(_) => "source",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SignalId {
    JointSpeed(usize),
    JointPos(usize),
    TcpSpeed,
    TcpHeight,
    Proximity,
    Env(String),
}

impl fmt::Display for SignalId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SignalId::JointSpeed(i) => write!(f, "joint_speed({i})"),
            SignalId::JointPos(i) => write!(f, "joint_pos({i})"),
            SignalId::TcpSpeed => f.write_str("tcp_speed"),
            SignalId::TcpHeight => f.write_str("tcp_height"),
            SignalId::Proximity => f.write_str("proximity"),
            SignalId::Env(name) => write!(f, "env({name})"),
        }
    }
}

fn call_arg<'a>(s: &'a str, name: &str) -> Option<&'a str> {
    s.strip_prefix(name)?.strip_prefix('(')?.strip_suffix(')').map(str::trim)
}

impl FromStr for SignalId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        let joint = |arg: &str| -> Result<usize, String> {
            let i: usize = arg.parse().map_err(|_| format!("bad joint index in {s:?}"))?;
            if i < JOINTS {
                Ok(i)
            } else {
                Err(format!("joint index {i} out of 0..{JOINTS}"))
            }
        };
        match s {
            "tcp_speed" => return Ok(SignalId::TcpSpeed),
            "tcp_height" => return Ok(SignalId::TcpHeight),
            "proximity" => return Ok(SignalId::Proximity),
            _ => {}
        }
        if let Some(arg) = call_arg(s, "joint_speed") {
            return joint(arg).map(SignalId::JointSpeed);
        }
        if let Some(arg) = call_arg(s, "joint_pos") {
            return joint(arg).map(SignalId::JointPos);
        }
        if let Some(arg) = call_arg(s, "env") {
            if !arg.is_empty() && arg.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return Ok(SignalId::Env(arg.to_string()));
            }
        }
        Err(format!("unknown signal {s:?}"))
    }
}

impl TryFrom<String> for SignalId {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<SignalId> for String {
    fn from(s: SignalId) -> String {
        s.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Curve {
    #[default]
    Linear,
    Exponential(f64),
    Logarithmic(f64),
}

impl fmt::Display for Curve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Curve::Linear => f.write_str("linear"),
            Curve::Exponential(k) => write!(f, "exponential({k})"),
            Curve::Logarithmic(k) if k == DEFAULT_CURVE_K => f.write_str("logarithmic"),
            Curve::Logarithmic(k) => write!(f, "logarithmic({k})"),
        }
    }
}

impl FromStr for Curve {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        let k = |arg: &str| -> Result<f64, String> {
            let k: f64 = arg.parse().map_err(|_| format!("bad curve constant in {s:?}"))?;
            if k.is_finite() && k != 0.0 {
                Ok(k)
            } else {
                Err(format!("curve constant must be finite and non-zero in {s:?}"))
            }
        };
        match s {
            "linear" => Ok(Curve::Linear),
            "exponential" => Ok(Curve::Exponential(DEFAULT_CURVE_K)),
            "logarithmic" => Ok(Curve::Logarithmic(DEFAULT_CURVE_K)),
            _ => {
                if let Some(arg) = call_arg(s, "exponential") {
                    k(arg).map(Curve::Exponential)
                } else if let Some(arg) = call_arg(s, "logarithmic") {
                    k(arg).map(Curve::Logarithmic)
                } else {
                    Err(format!("unknown curve {s:?}"))
                }
            }
        }
    }
}

impl TryFrom<String> for Curve {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<Curve> for String {
    fn from(c: Curve) -> String {
        c.to_string()
    }
}

/// Shape a normalised value. Endpoints map to themselves for every curve.
pub fn apply_curve(x: f64, curve: Curve) -> f64 {
    if !(x > 0.0) {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let y = match curve {
        Curve::Linear => x,
        Curve::Exponential(k) => (k * x).exp_m1() / k.exp_m1(),
        Curve::Logarithmic(k) => (x * k.exp_m1()).ln_1p() / k,
    };
    y.clamp(0.0, 1.0)
}

fn default_true() -> bool {
    true
}

fn default_smooth() -> f64 {
    DEFAULT_ROUTE_SMOOTH_MS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MappingRoute {
    pub source: SignalId,
    pub in_range: [f64; 2],
    #[serde(default)]
    pub curve: Curve,
    pub out_range: [f64; 2],
    #[serde(default = "default_true")]
    pub clamp: bool,
    #[serde(default = "default_smooth")]
    pub smooth_ms: f64,
    pub sink: String,
}

impl MappingRoute {
    pub fn linear(source: SignalId, in_range: [f64; 2], out_range: [f64; 2], sink: impl Into<String>) -> Self {
        Self {
            source,
            in_range,
            curve: Curve::Linear,
            out_range,
            clamp: true,
            smooth_ms: DEFAULT_ROUTE_SMOOTH_MS,
            sink: sink.into(),
        }
    }

    /// Map one source value to the sink value.
    pub fn map(&self, value: f64) -> f64 {
        let [lo, hi] = self.in_range;
        let x = if value.is_nan() { lo } else { value.clamp(lo, hi) };
        let norm = (x - lo) / (hi - lo);
        let c = apply_curve(norm, self.curve);
        let [out_lo, out_hi] = self.out_range;
        if c == 1.0 {
            return out_hi;
        }
        let y = out_lo + c * (out_hi - out_lo);
        y.clamp(out_lo.min(out_hi), out_lo.max(out_hi))
    }

    fn check_ranges(&self, route: usize) -> Result<(), MappingError> {
        let bad = |reason: String| MappingError::BadRange { route, reason };
        let [lo, hi] = self.in_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(bad(format!("in_range [{lo}, {hi}] must satisfy lo < hi")));
        }
        if !self.out_range.iter().all(|v| v.is_finite()) {
            return Err(bad("out_range must be finite".into()));
        }
        if !(self.smooth_ms >= 0.0 && self.smooth_ms.is_finite()) {
            return Err(bad("smooth_ms must be >= 0".into()));
        }
        if !self.clamp {
            return Err(bad("clamp must be true".into()));
        }
        match self.curve {
            Curve::Exponential(k) | Curve::Logarithmic(k) if !(k.is_finite() && k != 0.0) => {
                Err(bad("curve constant must be finite and non-zero".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MappingSpec {
    #[serde(default)]
    pub routes: Vec<MappingRoute>,
}

/// Why a sink was rejected by a [`SinkResolver`].
#[derive(Debug, Clone, PartialEq)]
pub enum SinkProblem {
    Unknown,
    /// The parameter exists but cannot take values in this range.
    OutOfRange(String),
}

/// Knows which parameter addresses exist and what values they accept.
pub trait SinkResolver {
    fn check_sink(&self, sink: &str, out_range: [f64; 2]) -> Result<(), SinkProblem>;

    fn knows_env(&self, _name: &str) -> bool {
        true
    }
}

/// Accepts any sink in a fixed set, with any range.
impl SinkResolver for BTreeSet<String> {
    fn check_sink(&self, sink: &str, _: [f64; 2]) -> Result<(), SinkProblem> {
        if self.contains(sink) {
            Ok(())
        } else {
            Err(SinkProblem::Unknown)
        }
    }
}

pub fn validate_route(route: &MappingRoute, index: usize, resolver: &dyn SinkResolver) -> Result<(), MappingError> {
    route.check_ranges(index)?;
    if let SignalId::Env(name) = &route.source {
        if !resolver.knows_env(name) {
            return Err(MappingError::UnknownSignal {
                route: index,
                signal: route.source.to_string(),
            });
        }
    }
    resolver
        .check_sink(&route.sink, route.out_range)
        .map_err(|p| match p {
            SinkProblem::Unknown => MappingError::UnknownSink {
                route: index,
                sink: route.sink.clone(),
            },
            SinkProblem::OutOfRange(reason) => MappingError::BadRange { route: index, reason },
        })
}

impl MappingSpec {
    pub fn validate(&self, resolver: &dyn SinkResolver) -> Result<(), MappingError> {
        let mut sinks = BTreeSet::new();
        for (i, route) in self.routes.iter().enumerate() {
            validate_route(route, i, resolver)?;
            if !sinks.insert(route.sink.as_str()) {
                return Err(MappingError::DuplicateSink {
                    route: i,
                    sink: route.sink.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn route_for_sink(&self, sink: &str) -> Option<&MappingRoute> {
        self.routes.iter().find(|r| r.sink == sink)
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parse and validate a mapping document (TOML with a `[[routes]]` array).
pub fn parse_mapping(text: &str, resolver: &dyn SinkResolver) -> Result<MappingSpec, MappingError> {
    let spec: MappingSpec = toml::from_str(text).map_err(|e| MappingError::SyntaxError {
        line: e.span().map(|s| line_of(text, s.start)).unwrap_or(1),
        message: e.message().to_string(),
    })?;
    spec.validate(resolver)?;
    Ok(spec)
}

/// Canonical text form; `parse_mapping` of the result yields the same spec.
pub fn serialize_mapping(spec: &MappingSpec) -> String {
    toml::to_string(spec).expect("mapping spec is always representable")
}

/// Read access to the current signal values.
pub trait SignalLookup {
    fn signal(&self, id: &SignalId) -> Option<f64>;
}

impl SignalLookup for BTreeMap<SignalId, f64> {
    fn signal(&self, id: &SignalId) -> Option<f64> {
        self.get(id).copied()
    }
}

/// Signal values captured on one control tick.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Signals {
    pub joint_speed: [f64; JOINTS],
    pub joint_pos: [f64; JOINTS],
    pub tcp_speed: f64,
    pub tcp_height: f64,
    /// Absent until a collaborator position is known.
    pub proximity: Option<f64>,
    pub env: BTreeMap<String, f64>,
}

impl SignalLookup for Signals {
    fn signal(&self, id: &SignalId) -> Option<f64> {
        match id {
            SignalId::JointSpeed(i) => self.joint_speed.get(*i).copied(),
            SignalId::JointPos(i) => self.joint_pos.get(*i).copied(),
            SignalId::TcpSpeed => Some(self.tcp_speed),
            SignalId::TcpHeight => Some(self.tcp_height),
            SignalId::Proximity => self.proximity,
            SignalId::Env(name) => self.env.get(name).copied(),
        }
    }
}

/// Evaluate every route in order. Fails if any source signal is missing.
pub fn evaluate(spec: &MappingSpec, signals: &dyn SignalLookup) -> Result<Vec<(String, f64)>, MappingError> {
    spec.routes
        .iter()
        .map(|r| {
            signals
                .signal(&r.source)
                .map(|v| (r.sink.clone(), r.map(v)))
                .ok_or_else(|| MappingError::MissingSignal(r.source.clone()))
        })
        .collect()
}
