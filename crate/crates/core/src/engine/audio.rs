//! Audio context: sources, blend, DSP graph and spatializer for one block.
//!
//! Everything is allocated in [`AudioContext::new`]; [`AudioContext::process`]
//! only touches preallocated buffers and the two lock-free queues.

use std::f64::consts::TAU;
use std::sync::Arc;

use crossbeam::queue::ArrayQueue;

use crate::dsp::{smoothing_coefficient, DspGraph, SmoothedParam};
use crate::robot::JOINTS;
use crate::sources::{blend_sample, motor_voice_into, FileFeed, MotorVoiceParams, VoiceState};
use crate::spatial::{spatialize_into, SourcePosition, SpatialParams, SpeakerLayout};

use super::config::SessionConfig;
use super::params::ParamTarget;
use super::{EngineError, MAX_CHANNELS};

/// Control-to-audio message. `Copy` so queue traffic never allocates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AudioMsg {
    Param {
        target: ParamTarget,
        value: f64,
        smooth_ms: Option<f64>,
    },
    Motion {
        joint_speed: [f64; JOINTS],
        tcp: [f64; 3],
    },
}

/// Per-channel RMS of one rendered block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeterFrame {
    pub block: u64,
    pub channels: usize,
    pub rms: [f32; MAX_CHANNELS],
}

impl MeterFrame {
    pub fn levels(&self) -> &[f32] {
        &self.rms[..self.channels]
    }
}

pub const UPDATE_QUEUE_CAPACITY: usize = 4096;
pub const METER_QUEUE_CAPACITY: usize = 64;

/// The two queues shared by the control and audio contexts.
#[derive(Debug, Clone)]
pub struct Queues {
    pub updates: Arc<ArrayQueue<AudioMsg>>,
    pub meters: Arc<ArrayQueue<MeterFrame>>,
}

impl Queues {
    pub fn new() -> Self {
        Self {
            updates: Arc::new(ArrayQueue::new(UPDATE_QUEUE_CAPACITY)),
            meters: Arc::new(ArrayQueue::new(METER_QUEUE_CAPACITY)),
        }
    }
}

impl Default for Queues {
    fn default() -> Self {
        Self::new()
    }
}

struct Voice {
    params: MotorVoiceParams,
    state: VoiceState,
    speed: SmoothedParam,
    mix: SmoothedParam,
}

struct Feed {
    feed: FileFeed,
    cursor: usize,
    gain: f32,
}

struct Synth {
    phase: f64,
    base_hz: f64,
    hz_per_m: f64,
    freq: SmoothedParam,
    level: SmoothedParam,
    /// Mean-square follower of the consequential bus.
    power: f64,
    follow_alpha: f64,
}

pub struct AudioContext {
    sample_rate: f64,
    block: usize,
    channels: usize,
    voices: Vec<Voice>,
    feeds: Vec<Feed>,
    synth: Synth,
    mix: SmoothedParam,
    graph: DspGraph,
    layout: SpeakerLayout,
    spatial: SpatialParams,
    tcp: [f64; 3],
    queues: Queues,
    blocks_done: u64,
    scratch: Vec<f32>,
    consequential: Vec<f32>,
    synthetic: Vec<f32>,
    blended: Vec<f32>,
    planar: Vec<f32>,
    gains: Vec<f64>,
    /// Frames written to the output were non-finite and replaced by zero.
    pub nan_replaced: u64,
}

impl AudioContext {
    /// `initial_tcp` places the source before the first motion message.
    pub fn new(config: &SessionConfig, queues: Queues, initial_tcp: [f64; 3]) -> Result<Self, EngineError> {
        let sr = config.sample_rate as f64;
        let block = config.block_size;
        let graph = DspGraph::build(&config.graph, sr, block).map_err(|e| EngineError::Config(e.to_string()))?;
        let voices = config
            .voices
            .iter()
            .enumerate()
            .map(|(i, p)| Voice {
                params: *p,
                state: VoiceState::new(config.seed.wrapping_add(i as u64)),
                speed: SmoothedParam::new(0.0, config.blend.speed_smooth_ms, sr),
                mix: SmoothedParam::new(config.blend.voice_mix, config.graph.smoothing_ms, sr),
            })
            .collect();
        let feeds = config
            .feeds
            .iter()
            .map(|f| {
                Ok(Feed {
                    feed: FileFeed::load(&f.path, config.sample_rate, f.looping)?,
                    cursor: 0,
                    gain: f.gain as f32,
                })
            })
            .collect::<Result<Vec<_>, crate::sources::SourceError>>()?;
        let s = &config.synth;
        let synth = Synth {
            phase: 0.0,
            base_hz: s.base_hz,
            hz_per_m: s.hz_per_m,
            freq: SmoothedParam::new(drone_freq(s.base_hz, s.hz_per_m, initial_tcp[2], sr), 50.0, sr),
            level: SmoothedParam::new(s.level, config.graph.smoothing_ms, sr),
            power: 0.0,
            follow_alpha: smoothing_coefficient(s.follow_ms, sr),
        };
        let layout = config.layout.speaker_layout();
        let channels = layout.channel_count();
        Ok(Self {
            sample_rate: sr,
            block,
            channels,
            voices,
            feeds,
            synth,
            mix: SmoothedParam::new(config.blend.mix, config.graph.smoothing_ms, sr),
            graph,
            spatial: config.layout.spatial_params(),
            gains: vec![0.0; layout.ring.len()],
            layout,
            tcp: initial_tcp,
            queues,
            blocks_done: 0,
            scratch: vec![0.0; block],
            consequential: vec![0.0; block],
            synthetic: vec![0.0; block],
            blended: vec![0.0; block],
            planar: vec![0.0; block * channels],
            nan_replaced: 0,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn block_size(&self) -> usize {
        self.block
    }

    pub fn blocks_done(&self) -> u64 {
        self.blocks_done
    }

    pub fn graph(&self) -> &DspGraph {
        &self.graph
    }

    /// Current target of a parameter as seen by the audio side.
    pub fn param_target(&self, target: ParamTarget) -> f64 {
        match target {
            ParamTarget::Graph(h) => self.graph.param_target(h),
            ParamTarget::BlendMix => self.mix.target(),
            ParamTarget::VoiceMix(i) => self.voices[i].mix.target(),
            ParamTarget::SynthLevel => self.synth.level.target(),
        }
    }

    fn apply(&mut self, msg: AudioMsg) {
        let sr = self.sample_rate;
        match msg {
            AudioMsg::Param {
                target,
                value,
                smooth_ms,
            } => {
                let p = match target {
                    ParamTarget::Graph(h) => {
                        self.graph.set_param_handle(h, value, smooth_ms);
                        return;
                    }
                    ParamTarget::BlendMix => &mut self.mix,
                    ParamTarget::VoiceMix(i) => match self.voices.get_mut(i) {
                        Some(v) => &mut v.mix,
                        None => return,
                    },
                    ParamTarget::SynthLevel => &mut self.synth.level,
                };
                if let Some(tau) = smooth_ms {
                    p.set_time_constant(tau, sr);
                }
                p.set_target(value);
            }
            AudioMsg::Motion { joint_speed, tcp } => {
                for (v, w) in self.voices.iter_mut().zip(joint_speed) {
                    v.speed.set_target(w);
                }
                self.tcp = tcp;
                let f = drone_freq(self.synth.base_hz, self.synth.hz_per_m, tcp[2], sr);
                self.synth.freq.set_target(f);
            }
        }
    }

    /// Render one block into `out` (interleaved, `block_size * channels`).
    pub fn process(&mut self, out: &mut [f32]) {
        debug_assert_eq!(out.len(), self.block * self.channels);
        while let Some(msg) = self.queues.updates.pop() {
            self.apply(msg);
        }
        let n = self.block;
        let sr = self.sample_rate;

        self.consequential.fill(0.0);
        for v in &mut self.voices {
            let w = v.speed.advance(n);
            motor_voice_into(w, &v.params, &mut v.state, sr, &mut self.scratch);
            for (c, &x) in self.consequential.iter_mut().zip(&self.scratch) {
                *c += (x as f64 * v.mix.next()) as f32;
            }
        }
        for f in &mut self.feeds {
            f.cursor = f.feed.read_into(f.cursor, &mut self.scratch);
            for (c, &x) in self.consequential.iter_mut().zip(&self.scratch) {
                *c += x * f.gain;
            }
        }

        let s = &mut self.synth;
        for (o, &c) in self.synthetic.iter_mut().zip(&self.consequential) {
            let x = c as f64;
            s.power = x * x + s.follow_alpha * (s.power - x * x);
            let amp = s.level.next() * s.power.sqrt();
            *o = (amp * (TAU * s.phase).sin()) as f32;
            s.phase += s.freq.next() / sr;
            s.phase -= s.phase.floor();
        }

        for ((o, &c), &y) in self.blended.iter_mut().zip(&self.consequential).zip(&self.synthetic) {
            *o = blend_sample(c, y, self.mix.next());
        }

        self.graph
            .process_into(&[&self.blended])
            .expect("graph input shape fixed at construction");
        let master = self.graph.output(0);
        let src = SourcePosition::from_point(self.tcp, self.spatial.listener);
        spatialize_into(master, &src, &self.layout, &self.spatial, &mut self.gains, &mut self.planar);

        let mut rms = [0f32; MAX_CHANNELS];
        for c in 0..self.channels {
            let ch = &mut self.planar[c * n..(c + 1) * n];
            let mut sum = 0.0f64;
            for (i, x) in ch.iter_mut().enumerate() {
                if !x.is_finite() {
                    *x = 0.0;
                    self.nan_replaced += 1;
                }
                sum += (*x as f64) * (*x as f64);
                out[i * self.channels + c] = *x;
            }
            rms[c] = (sum / n as f64).sqrt() as f32;
        }
        self.queues.meters.force_push(MeterFrame {
            block: self.blocks_done,
            channels: self.channels,
            rms,
        });
        self.blocks_done += 1;
    }
}

fn drone_freq(base_hz: f64, hz_per_m: f64, height: f64, sample_rate: f64) -> f64 {
    (base_hz + hz_per_m * height).clamp(1.0, sample_rate / 4.0)
}
