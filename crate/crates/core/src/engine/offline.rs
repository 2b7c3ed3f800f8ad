//! Deterministic single-thread render: control ticks and audio blocks
//! interleaved on the exact sample grid.

use std::io::Cursor;

use super::audio::{AudioContext, Queues};
use super::config::SessionConfig;
use super::control::ControlContext;
use super::script::{ScriptCursor, TrajectoryScript};
use super::EngineError;

/// Tick `k` runs before block `b` iff `k * sr <= b * block * control_rate`,
/// i.e. the tick's start sample is not after the block's first sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleGrid {
    pub sample_rate: u64,
    pub block_size: u64,
    pub control_rate: u64,
}

impl SampleGrid {
    pub fn of(config: &SessionConfig) -> Self {
        Self {
            sample_rate: config.sample_rate as u64,
            block_size: config.block_size as u64,
            control_rate: config.control_rate as u64,
        }
    }

    /// Number of ticks that must have run before block `b` starts.
    pub fn ticks_before_block(&self, b: u64) -> u64 {
        b * self.block_size * self.control_rate / self.sample_rate + 1
    }

    /// Number of blocks that must have completed before tick `k` runs.
    pub fn blocks_before_tick(&self, k: u64) -> u64 {
        (k * self.sample_rate).div_ceil(self.block_size * self.control_rate)
    }

    pub fn total_frames(&self, duration: f64) -> u64 {
        (duration * self.sample_rate as f64).round().max(0.0) as u64
    }

    pub fn blocks_for(&self, frames: u64) -> u64 {
        frames.div_ceil(self.block_size)
    }
}

/// Control and audio contexts advanced together in one thread.
pub struct Lockstep {
    pub control: ControlContext,
    pub audio: AudioContext,
    pub grid: SampleGrid,
    script: ScriptCursor,
    buffer: Vec<f32>,
}

impl Lockstep {
    pub fn new(config: &SessionConfig, script: &TrajectoryScript) -> Result<Self, EngineError> {
        config.validate().map_err(EngineError::ConfigInvalid)?;
        script.validate()?;
        let queues = Queues::new();
        let control = ControlContext::new(config, queues.clone())?;
        let audio = AudioContext::new(config, queues, control.poses().tcp.position)?;
        let buffer = vec![0.0; audio.block_size() * audio.channels()];
        Ok(Self {
            control,
            audio,
            grid: SampleGrid::of(config),
            script: ScriptCursor::new(script, config.control_rate),
            buffer,
        })
    }

    /// Apply due script events, then run one control tick.
    pub fn tick(&mut self) {
        run_tick(&mut self.control, &mut self.script);
    }

    /// Run the ticks due before the next block, then render it.
    pub fn step_block(&mut self) -> &[f32] {
        let b = self.audio.blocks_done();
        while self.control.tick_count() < self.grid.ticks_before_block(b) {
            self.tick();
        }
        self.audio.process(&mut self.buffer);
        &self.buffer
    }
}

pub(crate) fn run_tick(control: &mut ControlContext, script: &mut ScriptCursor) {
    let k = control.tick_count();
    for (_, event) in script.due(k).to_vec() {
        if let Err(e) = control.apply_event(&event) {
            log::warn!("script event at tick {k} rejected: {}: {}", e.field, e.reason);
        }
    }
    control.tick();
}

/// Collects interleaved float frames and encodes them as a float32 WAV.
pub struct WavBuilder {
    channels: usize,
    sample_rate: u32,
    samples: Vec<f32>,
}

impl WavBuilder {
    pub fn new(channels: usize, sample_rate: u32, frames_hint: usize) -> Self {
        Self {
            channels,
            sample_rate,
            samples: Vec::with_capacity(frames_hint * channels),
        }
    }

    /// Append without reallocating while within `frames_hint`.
    pub fn write(&mut self, interleaved: &[f32]) {
        self.samples.extend_from_slice(interleaved);
    }

    pub fn frames(&self) -> usize {
        self.samples.len() / self.channels
    }

    pub fn finish(self) -> Result<Vec<u8>, EngineError> {
        encode_wav(self.channels, self.sample_rate, &self.samples)
    }
}

pub fn encode_wav(channels: usize, sample_rate: u32, interleaved: &[f32]) -> Result<Vec<u8>, EngineError> {
    let spec = hound::WavSpec {
        channels: channels as u16,
        sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let io = |e: hound::Error| EngineError::Io(e.to_string());
    let mut cursor = Cursor::new(Vec::with_capacity(44 + interleaved.len() * 4));
    let mut writer = hound::WavWriter::new(&mut cursor, spec).map_err(io)?;
    for &s in interleaved {
        writer.write_sample(s).map_err(io)?;
    }
    writer.finalize().map_err(io)?;
    Ok(cursor.into_inner())
}

/// Render `duration` seconds to a float32 WAV. Identical inputs give identical bytes.
pub fn render_offline(
    config: &SessionConfig,
    script: &TrajectoryScript,
    duration: f64,
) -> Result<Vec<u8>, EngineError> {
    if !(duration.is_finite() && duration >= 0.0) {
        return Err(EngineError::Config(format!("duration {duration} must be >= 0")));
    }
    let mut engine = Lockstep::new(config, script)?;
    let channels = engine.audio.channels();
    let frames = engine.grid.total_frames(duration);
    let mut wav = WavBuilder::new(channels, config.sample_rate, frames as usize);
    let block = config.block_size as u64;
    for b in 0..engine.grid.blocks_for(frames) {
        let keep = (frames - b * block).min(block) as usize;
        let out = engine.step_block();
        wav.write(&out[..keep * channels]);
    }
    wav.finish()
}
