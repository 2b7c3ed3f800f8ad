//! Timed stand-in for live interaction: collaborator moves, parameter writes
//! and mapping swaps.

use serde::{Deserialize, Serialize};

use crate::mapping::MappingSpec;

use super::EngineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// Collaborator position in the base frame (m).
    CollaboratorPos([f64; 3]),
    /// Straight-line collaborator motion starting at the event time; one
    /// position per control tick, ending exactly at `to`.
    CollaboratorMove { from: [f64; 3], to: [f64; 3], duration: f64 },
    ParamChange { address: String, value: f64 },
    /// Replaces the whole mapping.
    MappingChange(MappingSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEvent {
    /// Seconds from the start of the session.
    pub t: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryScript {
    #[serde(default)]
    pub events: Vec<ScriptEvent>,
}

impl TrajectoryScript {
    pub fn validate(&self) -> Result<(), EngineError> {
        let mut previous = 0.0;
        for (index, e) in self.events.iter().enumerate() {
            if !(e.t.is_finite() && e.t >= 0.0) {
                return Err(EngineError::ScriptInvalid {
                    index,
                    reason: format!("time {} must be finite and >= 0", e.t),
                });
            }
            if e.t < previous {
                return Err(EngineError::ScriptUnordered {
                    index,
                    t: e.t,
                    previous,
                });
            }
            previous = e.t;
            let finite = |p: &[f64; 3]| p.iter().all(|v| v.is_finite());
            let ok = match &e.kind {
                EventKind::CollaboratorPos(p) => finite(p),
                EventKind::CollaboratorMove { from, to, duration } => {
                    finite(from) && finite(to) && duration.is_finite() && *duration >= 0.0
                }
                _ => true,
            };
            if !ok {
                return Err(EngineError::ScriptInvalid {
                    index,
                    reason: "collaborator positions must be finite and durations >= 0".into(),
                });
            }
        }
        Ok(())
    }

    /// Straight-line collaborator path sampled every `step` seconds from `t0` to `t1`.
    pub fn linear_path(from: [f64; 3], to: [f64; 3], t0: f64, t1: f64, step: f64) -> Self {
        let n = ((t1 - t0) / step).round().max(1.0) as usize;
        let events = (0..=n)
            .map(|i| {
                let a = i as f64 / n as f64;
                let p = [0, 1, 2].map(|k| from[k] + a * (to[k] - from[k]));
                ScriptEvent {
                    t: t0 + a * (t1 - t0),
                    kind: EventKind::CollaboratorPos(p),
                }
            })
            .collect();
        Self { events }
    }

    /// Index of the control tick at which an event at `t` applies: the first
    /// tick whose start time is not earlier than `t`.
    pub fn tick_of(t: f64, control_rate: u32) -> u64 {
        (t * control_rate as f64 - 1e-9).ceil().max(0.0) as u64
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

pub fn parse_script(text: &str) -> Result<TrajectoryScript, EngineError> {
    let script: TrajectoryScript = toml::from_str(text).map_err(|e| EngineError::ScriptSyntax {
        line: e.span().map(|s| line_of(text, s.start)).unwrap_or(1),
        message: e.message().to_string(),
    })?;
    script.validate()?;
    Ok(script)
}

pub fn load_script(path: &std::path::Path) -> Result<TrajectoryScript, EngineError> {
    let text = std::fs::read_to_string(path).map_err(|e| EngineError::Io(format!("{}: {e}", path.display())))?;
    parse_script(&text)
}

/// Hands out script events tick by tick.
#[derive(Debug, Clone)]
pub struct ScriptCursor {
    events: Vec<(u64, EventKind)>,
    next: usize,
}

impl ScriptCursor {
    /// Moves are expanded into one position per tick.
    pub fn new(script: &TrajectoryScript, control_rate: u32) -> Self {
        let mut events = Vec::new();
        for e in &script.events {
            let start = TrajectoryScript::tick_of(e.t, control_rate);
            match &e.kind {
                EventKind::CollaboratorMove { from, to, duration } => {
                    let n = (duration * control_rate as f64).round() as u64;
                    for i in 0..=n {
                        let a = if n == 0 { 1.0 } else { i as f64 / n as f64 };
                        let p = [0, 1, 2].map(|k| from[k] + a * (to[k] - from[k]));
                        events.push((start + i, EventKind::CollaboratorPos(p)));
                    }
                }
                kind => events.push((start, kind.clone())),
            }
        }
        // stable: same-tick events keep script order
        events.sort_by_key(|e| e.0);
        Self { events, next: 0 }
    }

    /// Events due at or before `tick`, in script order.
    pub fn due(&mut self, tick: u64) -> &[(u64, EventKind)] {
        let start = self.next;
        while self.next < self.events.len() && self.events[self.next].0 <= tick {
            self.next += 1;
        }
        &self.events[start..self.next]
    }

    pub fn is_done(&self) -> bool {
        self.next == self.events.len()
    }
}
