use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::biquad::{biquad_coeffs, Biquad, BiquadCoeffs, FilterKind};
use super::pitchshift::PitchShifter;
use super::{DspError, SmoothedParam};
use crate::sources::AudioBlock;

pub const DEFAULT_SMOOTHING_MS: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Gain,
    Biquad,
    Delay,
    Ringmod,
    Pitchshift,
    Mixer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: String,
    pub kind: NodeKind,
    /// Response type, biquad nodes only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<FilterKind>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    /// Node ids or graph input names; multiple inputs are summed.
    #[serde(default)]
    pub inputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    #[serde(default = "default_smoothing")]
    pub smoothing_ms: f64,
    #[serde(default)]
    pub nodes: Vec<NodeSpec>,
}

fn default_smoothing() -> f64 {
    DEFAULT_SMOOTHING_MS
}

/// Static description of one node parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamInfo {
    pub name: &'static str,
    pub default: f64,
    pub min: f64,
    /// Upper bound; parameters marked `nyquist_bound` are further limited to below `sr / 2`.
    pub max: f64,
    pub nyquist_bound: bool,
    /// Structural parameters are read once at build time and cannot be automated.
    pub automatable: bool,
}

const fn p(name: &'static str, default: f64, min: f64, max: f64) -> ParamInfo {
    ParamInfo {
        name,
        default,
        min,
        max,
        nyquist_bound: false,
        automatable: true,
    }
}

const GAIN_PARAMS: &[ParamInfo] = &[p("gain_db", 0.0, -120.0, 24.0)];
const BIQUAD_PARAMS: &[ParamInfo] = &[
    ParamInfo {
        nyquist_bound: true,
        ..p("cutoff_hz", 1000.0, 1.0, f64::INFINITY)
    },
    p("q", std::f64::consts::FRAC_1_SQRT_2, 0.05, 40.0),
];
const DELAY_PARAMS: &[ParamInfo] = &[
    p("time_ms", 100.0, 0.0, 10_000.0),
    ParamInfo {
        automatable: false,
        ..p("max_ms", 1000.0, 0.0, 10_000.0)
    },
];
const RINGMOD_PARAMS: &[ParamInfo] = &[
    ParamInfo {
        nyquist_bound: true,
        ..p("freq_hz", 30.0, 0.0, f64::INFINITY)
    },
    p("depth", 1.0, 0.0, 1.0),
];
const PITCH_PARAMS: &[ParamInfo] = &[p("ratio", 1.0, 0.25, 4.0)];

pub fn param_info(kind: NodeKind) -> &'static [ParamInfo] {
    match kind {
        NodeKind::Gain | NodeKind::Mixer => GAIN_PARAMS,
        NodeKind::Biquad => BIQUAD_PARAMS,
        NodeKind::Delay => DELAY_PARAMS,
        NodeKind::Ringmod => RINGMOD_PARAMS,
        NodeKind::Pitchshift => PITCH_PARAMS,
    }
}

impl ParamInfo {
    pub fn check(&self, value: f64, sample_rate: f64) -> Result<(), DspError> {
        let upper = if self.nyquist_bound {
            self.max.min(sample_rate / 2.0)
        } else {
            self.max
        };
        let ok = value.is_finite()
            && value >= self.min
            && if self.nyquist_bound { value < upper } else { value <= upper };
        if ok {
            Ok(())
        } else {
            Err(DspError::OutOfRange {
                what: self.name.to_string(),
                value,
            })
        }
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamHandle {
    pub node: usize,
    pub param: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamAck {
    pub address: String,
    pub value: f64,
}

#[derive(Debug, Clone, Copy)]
enum Source {
    Input(usize),
    Node(usize),
}

#[derive(Debug, Clone)]
enum NodeState {
    Gain { linear: f64 },
    Biquad { filter: Biquad, kind: FilterKind },
    Delay { line: Vec<f32>, write: usize },
    Ringmod { phase: f64 },
    Pitchshift(Box<PitchShifter>),
    Mixer { linear: f64 },
}

#[derive(Debug, Clone)]
struct Node {
    id: String,
    kind: NodeKind,
    sources: Vec<Source>,
    params: Vec<SmoothedParam>,
    state: NodeState,
}

/// Built, validated graph. Nodes are stored in evaluation order.
#[derive(Debug, Clone)]
pub struct DspGraph {
    spec: GraphSpec,
    sample_rate: f64,
    block_size: usize,
    nodes: Vec<Node>,
    buffers: Vec<Vec<f32>>,
    outputs: Vec<usize>,
    index: BTreeMap<String, usize>,
}

impl DspGraph {
    pub fn build(spec: &GraphSpec, sample_rate: f64, block_size: usize) -> Result<Self, DspError> {
        if block_size == 0 {
            return Err(DspError::Invalid("block size must be positive".into()));
        }
        if !(spec.smoothing_ms >= 0.0 && spec.smoothing_ms.is_finite()) {
            return Err(DspError::Invalid("smoothing_ms must be >= 0".into()));
        }
        let mut ids = BTreeSet::new();
        for n in &spec.nodes {
            if n.id.is_empty() || n.id.contains('.') {
                return Err(DspError::Invalid(format!("node id {:?} must be non-empty without '.'", n.id)));
            }
            if !ids.insert(n.id.as_str()) {
                return Err(DspError::DuplicateId(n.id.clone()));
            }
        }
        let mut input_names = BTreeSet::new();
        for name in &spec.inputs {
            if ids.contains(name.as_str()) || !input_names.insert(name.as_str()) {
                return Err(DspError::DuplicateId(name.clone()));
            }
        }
        for n in &spec.nodes {
            for param in n.params.keys() {
                let info = param_info(n.kind)
                    .iter()
                    .find(|i| i.name == param)
                    .ok_or_else(|| DspError::UnknownParam {
                        node: n.id.clone(),
                        param: param.clone(),
                    })?;
                info.check(n.params[param], sample_rate)?;
            }
            if n.filter.is_some() && n.kind != NodeKind::Biquad {
                return Err(DspError::Invalid(format!("node {:?}: filter applies to biquad only", n.id)));
            }
            for input in &n.inputs {
                if !ids.contains(input.as_str()) && !input_names.contains(input.as_str()) {
                    return Err(DspError::UnknownInput {
                        node: n.id.clone(),
                        input: input.clone(),
                    });
                }
            }
        }
        for out in &spec.outputs {
            if !ids.contains(out.as_str()) {
                return Err(DspError::UnknownOutput(out.clone()));
            }
        }

        let order = topological_order(spec)?;
        let position: BTreeMap<&str, usize> = order
            .iter()
            .enumerate()
            .map(|(i, &n)| (spec.nodes[n].id.as_str(), i))
            .collect();

        let mut nodes = Vec::with_capacity(order.len());
        for &n in &order {
            let ns = &spec.nodes[n];
            let sources = ns
                .inputs
                .iter()
                .map(|name| match position.get(name.as_str()) {
                    Some(&i) => Source::Node(i),
                    None => Source::Input(spec.inputs.iter().position(|x| x == name).unwrap_or(0)),
                })
                .collect();
            let params: Vec<SmoothedParam> = param_info(ns.kind)
                .iter()
                .map(|info| {
                    let v = ns.params.get(info.name).copied().unwrap_or(info.default);
                    SmoothedParam::new(v, spec.smoothing_ms, sample_rate)
                })
                .collect();
            let state = initial_state(ns, &params, sample_rate)?;
            nodes.push(Node {
                id: ns.id.clone(),
                kind: ns.kind,
                sources,
                params,
                state,
            });
        }
        let index = nodes.iter().enumerate().map(|(i, n)| (n.id.clone(), i)).collect();
        let outputs = spec.outputs.iter().map(|o| position[o.as_str()]).collect();
        Ok(Self {
            spec: spec.clone(),
            sample_rate,
            block_size,
            buffers: vec![vec![0.0; block_size]; nodes.len()],
            nodes,
            outputs,
            index,
        })
    }

    pub fn spec(&self) -> &GraphSpec {
        &self.spec
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn input_names(&self) -> &[String] {
        &self.spec.inputs
    }

    pub fn output_names(&self) -> &[String] {
        &self.spec.outputs
    }

    /// Node ids in evaluation order.
    pub fn evaluation_order(&self) -> Vec<&str> {
        self.nodes.iter().map(|n| n.id.as_str()).collect()
    }

    pub fn resolve(&self, address: &str) -> Option<ParamHandle> {
        let (node_id, param) = address.split_once('.')?;
        let node = *self.index.get(node_id)?;
        let infos = param_info(self.nodes[node].kind);
        let param = infos.iter().position(|i| i.name == param && i.automatable)?;
        Some(ParamHandle { node, param })
    }

    pub fn param_info_for(&self, handle: ParamHandle) -> &'static ParamInfo {
        &param_info(self.nodes[handle.node].kind)[handle.param]
    }

    /// All automatable `node.param` addresses.
    pub fn addresses(&self) -> Vec<String> {
        self.nodes
            .iter()
            .flat_map(|n| {
                param_info(n.kind)
                    .iter()
                    .filter(|i| i.automatable)
                    .map(move |i| format!("{}.{}", n.id, i.name))
            })
            .collect()
    }

    pub fn check_value(&self, handle: ParamHandle, value: f64) -> Result<(), DspError> {
        self.param_info_for(handle).check(value, self.sample_rate)
    }

    pub fn set_param(&mut self, address: &str, value: f64) -> Result<ParamAck, DspError> {
        let handle = self
            .resolve(address)
            .ok_or_else(|| DspError::UnknownAddress(address.to_string()))?;
        self.check_value(handle, value)?;
        self.set_param_handle(handle, value, None);
        Ok(ParamAck {
            address: address.to_string(),
            value,
        })
    }

    /// Retarget a resolved parameter. `smooth_ms` overrides the time constant when given.
    /// Does not allocate.
    pub fn set_param_handle(&mut self, handle: ParamHandle, value: f64, smooth_ms: Option<f64>) {
        let sr = self.sample_rate;
        let p = &mut self.nodes[handle.node].params[handle.param];
        if let Some(tau) = smooth_ms {
            p.set_time_constant(tau, sr);
        }
        p.set_target(value);
    }

    pub fn param_value(&self, handle: ParamHandle) -> f64 {
        self.nodes[handle.node].params[handle.param].current()
    }

    pub fn param_target(&self, handle: ParamHandle) -> f64 {
        self.nodes[handle.node].params[handle.param].target()
    }

    /// Clear all signal state (filter memories, delay lines, oscillator phases).
    pub fn reset(&mut self) {
        for node in &mut self.nodes {
            match &mut node.state {
                NodeState::Biquad { filter, .. } => filter.reset(),
                NodeState::Delay { line, write } => {
                    line.fill(0.0);
                    *write = 0;
                }
                NodeState::Ringmod { phase } => *phase = 0.0,
                NodeState::Pitchshift(ps) => ps.reset(),
                NodeState::Gain { .. } | NodeState::Mixer { .. } => {}
            }
        }
        for b in &mut self.buffers {
            b.fill(0.0);
        }
    }

    /// Evaluate one block. `inputs` follows the order of [`GraphSpec::inputs`];
    /// results are read back with [`DspGraph::output`]. Does not allocate.
    pub fn process_into(&mut self, inputs: &[&[f32]]) -> Result<(), DspError> {
        if inputs.len() != self.spec.inputs.len() {
            return Err(DspError::MissingInput(format!(
                "expected {} inputs, got {}",
                self.spec.inputs.len(),
                inputs.len()
            )));
        }
        for input in inputs {
            if input.len() != self.block_size {
                return Err(DspError::BlockMismatch {
                    expected: self.block_size,
                    got: input.len(),
                });
            }
        }
        let sr = self.sample_rate;
        for i in 0..self.nodes.len() {
            let (done, rest) = self.buffers.split_at_mut(i);
            let buf = &mut rest[0];
            buf.fill(0.0);
            let node = &mut self.nodes[i];
            for src in &node.sources {
                let data: &[f32] = match *src {
                    Source::Input(k) => inputs[k],
                    Source::Node(k) => &done[k],
                };
                if node.sources.len() == 1 {
                    buf.copy_from_slice(data);
                } else {
                    for (o, &x) in buf.iter_mut().zip(data) {
                        *o += x;
                    }
                }
            }
            node.process(buf, sr);
            debug_assert!(buf.iter().all(|s| s.is_finite()), "node {} emitted non-finite", node.id);
        }
        Ok(())
    }

    pub fn output(&self, k: usize) -> &[f32] {
        &self.buffers[self.outputs[k]]
    }

    /// Named-block convenience wrapper around [`DspGraph::process_into`].
    pub fn process_block(
        &mut self,
        inputs: &BTreeMap<String, AudioBlock>,
    ) -> Result<BTreeMap<String, AudioBlock>, DspError> {
        let mut ordered = Vec::with_capacity(self.spec.inputs.len());
        for name in &self.spec.inputs {
            let block = inputs
                .get(name)
                .ok_or_else(|| DspError::MissingInput(name.clone()))?;
            ordered.push(block.data.as_slice());
        }
        self.process_into(&ordered)?;
        let sr = self.sample_rate as u32;
        Ok(self
            .spec
            .outputs
            .iter()
            .enumerate()
            .map(|(k, name)| (name.clone(), AudioBlock::mono(self.output(k).to_vec(), sr)))
            .collect())
    }
}

fn initial_state(ns: &NodeSpec, params: &[SmoothedParam], sr: f64) -> Result<NodeState, DspError> {
    Ok(match ns.kind {
        NodeKind::Gain => NodeState::Gain {
            linear: db_to_linear(params[0].current()),
        },
        NodeKind::Mixer => NodeState::Mixer {
            linear: db_to_linear(params[0].current()),
        },
        NodeKind::Biquad => {
            let kind = ns.filter.unwrap_or_default();
            let coeffs = biquad_coeffs(kind, params[0].current(), params[1].current(), sr)?;
            NodeState::Biquad {
                filter: Biquad::new(coeffs),
                kind,
            }
        }
        NodeKind::Delay => {
            let max_ms = params[1].current();
            if params[0].current() > max_ms {
                return Err(DspError::OutOfRange {
                    what: "time_ms".into(),
                    value: params[0].current(),
                });
            }
            let len = (max_ms * sr / 1000.0).ceil() as usize + 1;
            NodeState::Delay {
                line: vec![0.0; len],
                write: 0,
            }
        }
        NodeKind::Ringmod => NodeState::Ringmod { phase: 0.0 },
        NodeKind::Pitchshift => NodeState::Pitchshift(Box::new(PitchShifter::new())),
    })
}

impl Node {
    fn process(&mut self, buf: &mut [f32], sr: f64) {
        match &mut self.state {
            NodeState::Gain { linear } | NodeState::Mixer { linear } => {
                let p = &mut self.params[0];
                if p.is_settled() {
                    let g = *linear;
                    if g != 1.0 {
                        for s in buf.iter_mut() {
                            *s = (*s as f64 * g) as f32;
                        }
                    }
                } else {
                    for s in buf.iter_mut() {
                        *s = (*s as f64 * db_to_linear(p.next())) as f32;
                    }
                    *linear = db_to_linear(p.current());
                }
            }
            NodeState::Biquad { filter, kind } => {
                let (cut, q) = self.params.split_at_mut(1);
                let (cut, q) = (&mut cut[0], &mut q[0]);
                if cut.is_settled() && q.is_settled() {
                    filter.process(buf);
                } else {
                    for s in buf.iter_mut() {
                        let c = cut.next().clamp(1.0, sr * 0.4999);
                        let qq = q.next().max(0.05);
                        filter.coeffs = biquad_coeffs(*kind, c, qq, sr).unwrap_or(BiquadCoeffs::IDENTITY);
                        *s = filter.tick(*s as f64) as f32;
                    }
                }
            }
            NodeState::Delay { line, write } => {
                let len = line.len();
                let time = &mut self.params[0];
                for s in buf.iter_mut() {
                    let d = ((time.next() * sr / 1000.0).round() as usize).min(len - 1);
                    line[*write] = *s;
                    *s = line[(*write + len - d) % len];
                    *write = (*write + 1) % len;
                }
            }
            NodeState::Ringmod { phase } => {
                let (f, depth) = self.params.split_at_mut(1);
                let (f, depth) = (&mut f[0], &mut depth[0]);
                for s in buf.iter_mut() {
                    let d = depth.next();
                    let m = (1.0 - d) + d * (std::f64::consts::TAU * *phase).sin();
                    *s = (*s as f64 * m) as f32;
                    *phase = (*phase + f.next() / sr).fract();
                }
            }
            NodeState::Pitchshift(ps) => ps.process(buf, &mut self.params[0]),
        }
    }
}

/// Kahn's algorithm; ties broken by node id so the order does not depend on
/// declaration order.
fn topological_order(spec: &GraphSpec) -> Result<Vec<usize>, DspError> {
    let by_id: BTreeMap<&str, usize> = spec
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.id.as_str(), i))
        .collect();
    let mut indegree = vec![0usize; spec.nodes.len()];
    let mut dependents: Vec<Vec<usize>> = vec![Vec::new(); spec.nodes.len()];
    for (i, n) in spec.nodes.iter().enumerate() {
        for input in &n.inputs {
            if let Some(&src) = by_id.get(input.as_str()) {
                indegree[i] += 1;
                dependents[src].push(i);
            }
        }
    }
    let mut ready: BTreeSet<(&str, usize)> = indegree
        .iter()
        .enumerate()
        .filter(|(_, &d)| d == 0)
        .map(|(i, _)| (spec.nodes[i].id.as_str(), i))
        .collect();
    let mut order = Vec::with_capacity(spec.nodes.len());
    while let Some(first) = ready.pop_first() {
        let i = first.1;
        order.push(i);
        for &d in &dependents[i] {
            indegree[d] -= 1;
            if indegree[d] == 0 {
                ready.insert((spec.nodes[d].id.as_str(), d));
            }
        }
    }
    if order.len() != spec.nodes.len() {
        let stuck = indegree
            .iter()
            .enumerate()
            .filter(|(_, &d)| d > 0)
            .map(|(i, _)| spec.nodes[i].id.clone())
            .collect();
        return Err(DspError::CycleDetected(stuck));
    }
    Ok(order)
}
