//! Control context: owns the simulated arm, the collaborator, the mapping and
//! the parameter state, and talks to the audio context through queues.

use std::collections::BTreeMap;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::dsp::DspGraph;
use crate::mapping::{validate_route, MappingError, MappingRoute, MappingSpec, SignalLookup, Signals};
use crate::osc::{OscArg, OscMessage, OscPacket};
use crate::robot::{
    forward_kinematics, proximity, steer_towards, tcp_speed, ArmPoses, CollaboratorState, JointState,
    KinematicParams, Pose, SteerParams, JOINTS,
};

use super::audio::{AudioMsg, MeterFrame, Queues};
use super::config::SessionConfig;
use super::params::{ParamTable, ParamTarget};
use super::script::EventKind;
use super::EngineError;

pub const PROTOCOL_VERSION: u32 = 1;

/// Rejected mutation: offending field path and reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationFailed {
    pub field: String,
    pub reason: String,
}

impl ValidationFailed {
    pub fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSnapshot {
    pub q: [f64; JOINTS],
    pub qdot: [f64; JOINTS],
}

/// Consistent view of the engine after one control tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub seq: u64,
    pub tick: u64,
    /// Engine clock, seconds of simulated time.
    pub time: f64,
    pub joints: JointSnapshot,
    pub tcp: Pose,
    pub links: [Pose; JOINTS],
    pub collaborator: Option<[f64; 3]>,
    pub proximity: Option<f64>,
    pub tcp_speed: f64,
    pub blend_mix: f64,
    pub mapping: MappingSpec,
    pub env: BTreeMap<String, f64>,
    /// Per-output-channel RMS of the most recent audio block.
    pub meters: Vec<f32>,
    pub audio_blocks: u64,
}

/// Counters for inbound traffic that was ignored.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngressStats {
    pub unknown: u64,
    pub malformed: u64,
    pub dropped_updates: u64,
}

pub struct ControlContext {
    kinematics: KinematicParams,
    steer: SteerParams,
    control_rate: u32,
    dt: f64,
    tick: u64,
    seq: u64,
    joint: JointState,
    poses: ArmPoses,
    collaborator: Option<CollaboratorState>,
    signals: Signals,
    mapping: MappingSpec,
    table: ParamTable,
    /// Last value sent for each written address.
    sent: BTreeMap<String, f64>,
    blend_mix: f64,
    queues: Queues,
    meters: Vec<f32>,
    audio_blocks: u64,
    pub stats: IngressStats,
    egress: Vec<OscPacket>,
}

fn build_table(config: &SessionConfig) -> Result<ParamTable, EngineError> {
    let graph = DspGraph::build(&config.graph, config.sample_rate as f64, config.block_size)
        .map_err(|e| EngineError::Config(e.to_string()))?;
    Ok(ParamTable::new(&graph, config.voices.len(), &config.env))
}

impl ControlContext {
    pub fn new(config: &SessionConfig, queues: Queues) -> Result<Self, EngineError> {
        config.validate().map_err(EngineError::ConfigInvalid)?;
        let joint = JointState::at_rest(config.robot.initial_q);
        let poses = forward_kinematics(&joint, &config.robot.kinematics);
        let signals = Signals {
            joint_pos: joint.q,
            tcp_height: poses.tcp.position[2],
            env: config.env.iter().map(|n| (n.clone(), 0.0)).collect(),
            ..Signals::default()
        };
        Ok(Self {
            kinematics: config.robot.kinematics.clone(),
            steer: config.robot.steer,
            control_rate: config.control_rate,
            dt: config.control_dt(),
            tick: 0,
            seq: 0,
            joint,
            poses,
            collaborator: None,
            signals,
            mapping: config.mapping.clone(),
            table: build_table(config)?,
            sent: BTreeMap::new(),
            blend_mix: config.blend.mix,
            queues,
            meters: vec![0.0; config.channel_count()],
            audio_blocks: 0,
            stats: IngressStats::default(),
            egress: Vec::new(),
        })
    }

    pub fn tick_count(&self) -> u64 {
        self.tick
    }

    pub fn control_rate(&self) -> u32 {
        self.control_rate
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn joint_state(&self) -> &JointState {
        &self.joint
    }

    pub fn poses(&self) -> &ArmPoses {
        &self.poses
    }

    pub fn signals(&self) -> &Signals {
        &self.signals
    }

    pub fn collaborator(&self) -> Option<&CollaboratorState> {
        self.collaborator.as_ref()
    }

    pub fn mapping(&self) -> &MappingSpec {
        &self.mapping
    }

    pub fn params(&self) -> &ParamTable {
        &self.table
    }

    pub fn blend_mix(&self) -> f64 {
        self.blend_mix
    }

    /// Value most recently sent to the audio side for `address`, if any.
    pub fn sent_target(&self, address: &str) -> Option<f64> {
        self.sent.get(address).copied()
    }

    /// Next value of the total-order sequence counter.
    pub fn next_seq(&mut self) -> u64 {
        self.seq += 1;
        self.seq
    }

    pub fn set_collaborator(&mut self, position: [f64; 3]) -> Result<[f64; 3], ValidationFailed> {
        if !position.iter().all(|v| v.is_finite()) {
            return Err(ValidationFailed::new("position", "coordinates must be finite"));
        }
        self.collaborator = Some(CollaboratorState::new(position, self.joint.timestamp));
        Ok(position)
    }

    pub fn set_env(&mut self, name: &str, value: f64) -> Result<(), ValidationFailed> {
        if !self.table.knows_env_signal(name) {
            return Err(ValidationFailed::new("env", format!("undeclared env signal {name:?}")));
        }
        if !value.is_finite() {
            return Err(ValidationFailed::new("value", "must be finite"));
        }
        self.signals.env.insert(name.to_string(), value);
        Ok(())
    }

    fn push(&mut self, msg: AudioMsg) {
        if self.queues.updates.push(msg).is_err() {
            self.stats.dropped_updates += 1;
            warn!("parameter queue full; update dropped");
        }
    }

    fn send_param(&mut self, address: &str, target: ParamTarget, value: f64, smooth_ms: Option<f64>) {
        self.push(AudioMsg::Param {
            target,
            value,
            smooth_ms,
        });
        match self.sent.get_mut(address) {
            Some(v) => *v = value,
            None => {
                self.sent.insert(address.to_string(), value);
            }
        }
        if target == ParamTarget::BlendMix {
            self.blend_mix = value;
        }
    }

    /// Validate and forward a direct parameter write. Returns the accepted value.
    pub fn set_param(&mut self, address: &str, value: f64) -> Result<f64, ValidationFailed> {
        match self.table.check(address, value) {
            Ok(target) => {
                self.send_param(address, target, value, None);
                Ok(value)
            }
            Err(None) => Err(ValidationFailed::new("address", format!("unknown parameter {address:?}"))),
            Err(Some(reason)) => Err(ValidationFailed::new("value", reason)),
        }
    }

    pub fn set_mix(&mut self, value: f64) -> Result<f64, ValidationFailed> {
        self.set_param("blend.mix", value)
    }

    fn route_error(e: MappingError) -> ValidationFailed {
        ValidationFailed::new(e.field(), e.to_string())
    }

    /// Add a route, or replace the one writing the same sink.
    pub fn set_route(&mut self, route: MappingRoute) -> Result<MappingRoute, ValidationFailed> {
        let index = self
            .mapping
            .routes
            .iter()
            .position(|r| r.sink == route.sink)
            .unwrap_or(self.mapping.routes.len());
        validate_route(&route, index, &self.table).map_err(Self::route_error)?;
        let mut next = self.mapping.clone();
        if index < next.routes.len() {
            next.routes[index] = route.clone();
        } else {
            next.routes.push(route.clone());
        }
        self.mapping = next;
        Ok(route)
    }

    pub fn delete_route(&mut self, sink: &str) -> Result<MappingRoute, ValidationFailed> {
        let index = self
            .mapping
            .routes
            .iter()
            .position(|r| r.sink == sink)
            .ok_or_else(|| ValidationFailed::new("sink", format!("no route writes {sink:?}")))?;
        Ok(self.mapping.routes.remove(index))
    }

    /// Swap the whole mapping after validating it.
    pub fn replace_mapping(&mut self, spec: MappingSpec) -> Result<(), ValidationFailed> {
        spec.validate(&self.table).map_err(Self::route_error)?;
        self.mapping = spec;
        Ok(())
    }

    pub fn apply_event(&mut self, event: &EventKind) -> Result<(), ValidationFailed> {
        match event {
            EventKind::CollaboratorPos(p) => self.set_collaborator(*p).map(drop),
            EventKind::CollaboratorMove { from, .. } => self.set_collaborator(*from).map(drop),
            EventKind::ParamChange { address, value } => self.set_param(address, *value).map(drop),
            EventKind::MappingChange(spec) => self.replace_mapping(spec.clone()),
        }
    }

    /// Handle one inbound OSC packet. Bundles are unpacked in order.
    pub fn osc_ingress(&mut self, packet: &OscPacket) {
        match packet {
            OscPacket::Bundle(b) => {
                for e in &b.elements {
                    self.osc_ingress(e);
                }
            }
            OscPacket::Message(m) => self.osc_message(m),
        }
    }

    fn osc_message(&mut self, m: &OscMessage) {
        let floats: Option<Vec<f64>> = m.args.iter().map(|a| a.as_f32().map(f64::from)).collect();
        if m.address == "/collab/pos" {
            match floats.as_deref() {
                Some(&[x, y, z]) if self.set_collaborator([x, y, z]).is_ok() => {}
                _ => {
                    self.stats.malformed += 1;
                    debug!("malformed /collab/pos: {:?}", m.args);
                }
            }
        } else if let Some(name) = m.address.strip_prefix("/env/") {
            if !self.table.knows_env_signal(name) {
                self.stats.unknown += 1;
                return;
            }
            match floats.as_deref() {
                Some(&[v]) if self.set_env(name, v).is_ok() => {}
                _ => {
                    self.stats.malformed += 1;
                    debug!("malformed {}: {:?}", m.address, m.args);
                }
            }
        } else {
            self.stats.unknown += 1;
            debug!("ignoring OSC address {}", m.address);
        }
    }

    /// One control step: steer, recompute signals, evaluate the mapping,
    /// enqueue changed targets and motion, collect meters, build OSC egress.
    pub fn tick(&mut self) {
        let previous_tcp = self.poses.tcp;
        let t0 = self.joint.timestamp;
        match &self.collaborator {
            Some(c) => match steer_towards(&self.joint, c, &self.steer, self.dt, &self.kinematics) {
                Ok(outcome) => self.joint = outcome.state,
                Err(e) => {
                    warn!("steering failed: {e}");
                    self.rest();
                }
            },
            None => self.rest(),
        }
        self.poses = forward_kinematics(&self.joint, &self.kinematics);

        let s = &mut self.signals;
        for i in 0..JOINTS {
            s.joint_speed[i] = self.joint.qdot[i].abs();
            s.joint_pos[i] = self.joint.q[i];
        }
        s.tcp_speed = tcp_speed((&previous_tcp, t0), (&self.poses.tcp, self.joint.timestamp)).unwrap_or(0.0);
        s.tcp_height = self.poses.tcp.position[2];
        let base = Pose::default();
        s.proximity = self.collaborator.as_ref().map(|c| proximity(c, &base));

        for r in 0..self.mapping.routes.len() {
            let route = &self.mapping.routes[r];
            let Some(v) = self.signals.signal(&route.source) else { continue };
            let value = route.map(v);
            if self.sent.get(&route.sink) == Some(&value) {
                continue;
            }
            let (sink, smooth) = (route.sink.clone(), route.smooth_ms);
            match self.table.target(&sink) {
                Some(target) => self.send_param(&sink, target, value, Some(smooth)),
                None => warn!("route {r} writes unknown sink {sink}"),
            }
        }
        let joint_speed = self.signals.joint_speed;
        self.push(AudioMsg::Motion {
            joint_speed,
            tcp: self.poses.tcp.position,
        });

        while let Some(frame) = self.queues.meters.pop() {
            self.take_meters(&frame);
        }
        self.build_egress();
        self.tick += 1;
    }

    fn rest(&mut self) {
        self.joint.qdot = [0.0; JOINTS];
        self.joint.timestamp += self.dt;
    }

    fn take_meters(&mut self, frame: &MeterFrame) {
        self.meters.clear();
        self.meters.extend_from_slice(frame.levels());
        self.audio_blocks = frame.block + 1;
    }

    fn build_egress(&mut self) {
        self.egress.clear();
        let t = &self.poses.tcp;
        let pose = [t.position[0], t.position[1], t.position[2], t.roll, t.pitch, t.yaw];
        self.egress.push(OscPacket::Message(float_message("/tcp/pose", &pose)));
        for (i, l) in self.poses.links.iter().enumerate() {
            self.egress
                .push(OscPacket::Message(float_message(&format!("/link/{i}/rpy"), &[l.roll, l.pitch, l.yaw])));
        }
    }

    /// Packets produced by the most recent tick.
    pub fn osc_egress(&self) -> &[OscPacket] {
        &self.egress
    }

    pub fn snapshot(&mut self) -> StateSnapshot {
        let seq = self.next_seq();
        StateSnapshot {
            seq,
            tick: self.tick,
            time: self.tick as f64 * self.dt,
            joints: JointSnapshot {
                q: self.joint.q,
                qdot: self.joint.qdot,
            },
            tcp: self.poses.tcp,
            links: self.poses.links,
            collaborator: self.collaborator.map(|c| c.position),
            proximity: self.signals.proximity,
            tcp_speed: self.signals.tcp_speed,
            blend_mix: self.blend_mix,
            mapping: self.mapping.clone(),
            env: self.signals.env.clone(),
            meters: self.meters.clone(),
            audio_blocks: self.audio_blocks,
        }
    }

    pub fn meters(&self) -> &[f32] {
        &self.meters
    }
}

fn float_message(address: &str, values: &[f64]) -> OscMessage {
    OscMessage {
        address: address.to_string(),
        args: values.iter().map(|&v| OscArg::Float(v as f32)).collect(),
    }
}

impl ParamTable {
    fn knows_env_signal(&self, name: &str) -> bool {
        crate::mapping::SinkResolver::knows_env(self, name)
    }
}
