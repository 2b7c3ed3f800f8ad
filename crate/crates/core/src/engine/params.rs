//! Parameter addresses the mapping and the control API can write to.
//!
//! Graph parameters use `node.param`; the engine adds `blend.mix`,
//! `voice<i>.mix` and `synth.level`, all in `[0, 1]`.

use std::collections::{BTreeMap, BTreeSet};

use crate::dsp::{DspGraph, ParamHandle, ParamInfo};
use crate::mapping::{SinkProblem, SinkResolver};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamTarget {
    Graph(ParamHandle),
    BlendMix,
    VoiceMix(usize),
    SynthLevel,
}

#[derive(Debug, Clone, Copy)]
enum Bounds {
    Graph(&'static ParamInfo),
    Unit,
}

#[derive(Debug, Clone)]
pub struct ParamTable {
    entries: BTreeMap<String, (ParamTarget, Bounds)>,
    env: BTreeSet<String>,
    sample_rate: f64,
}

impl ParamTable {
    pub fn new(graph: &DspGraph, voices: usize, env: &[String]) -> Self {
        let mut entries = BTreeMap::new();
        for addr in graph.addresses() {
            let h = graph.resolve(&addr).expect("listed address resolves");
            entries.insert(addr, (ParamTarget::Graph(h), Bounds::Graph(graph.param_info_for(h))));
        }
        entries.insert("blend.mix".into(), (ParamTarget::BlendMix, Bounds::Unit));
        entries.insert("synth.level".into(), (ParamTarget::SynthLevel, Bounds::Unit));
        for i in 0..voices {
            entries.insert(format!("voice{i}.mix"), (ParamTarget::VoiceMix(i), Bounds::Unit));
        }
        Self {
            entries,
            env: env.iter().cloned().collect(),
            sample_rate: graph.sample_rate(),
        }
    }

    pub fn target(&self, address: &str) -> Option<ParamTarget> {
        self.entries.get(address).map(|e| e.0)
    }

    pub fn addresses(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Validate one value for an address. `Err(None)` means the address is unknown.
    pub fn check(&self, address: &str, value: f64) -> Result<ParamTarget, Option<String>> {
        let (target, bounds) = self.entries.get(address).ok_or(None)?;
        let ok = match bounds {
            Bounds::Graph(info) => info.check(value, self.sample_rate).is_ok(),
            Bounds::Unit => (0.0..=1.0).contains(&value),
        };
        if ok {
            Ok(*target)
        } else {
            Err(Some(format!("{value} outside the accepted range of {address}")))
        }
    }
}

impl SinkResolver for ParamTable {
    fn check_sink(&self, sink: &str, out_range: [f64; 2]) -> Result<(), SinkProblem> {
        for v in out_range {
            match self.check(sink, v) {
                Ok(_) => {}
                Err(None) => return Err(SinkProblem::Unknown),
                Err(Some(reason)) => return Err(SinkProblem::OutOfRange(format!("out_range: {reason}"))),
            }
        }
        Ok(())
    }

    fn knows_env(&self, name: &str) -> bool {
        self.env.contains(name)
    }
}
