//! Sound sources that feed the blend stage: a synthetic per-joint motor voice,
//! WAV file feeds standing in for contact-microphone recordings, and the
//! linear crossfade that blends consequential and synthetic material.

use std::f64::consts::TAU;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SourceError {
    #[error("unsupported WAV format: {0}")]
    UnsupportedFormat(String),
    #[error("cannot read {path}: {reason}")]
    FileUnreadable { path: String, reason: String },
    #[error("block mismatch: {0}")]
    BlockMismatch(String),
    #[error("invalid motor voice parameters: {0}")]
    InvalidParams(String),
}

/// Planar block of samples: channel `c` occupies `data[c * frames..(c + 1) * frames]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBlock {
    pub channels: usize,
    pub sample_rate: u32,
    pub data: Vec<f32>,
}

impl AudioBlock {
    pub fn silent(channels: usize, frames: usize, sample_rate: u32) -> Self {
        Self {
            channels,
            sample_rate,
            data: vec![0.0; channels * frames],
        }
    }

    pub fn mono(samples: Vec<f32>, sample_rate: u32) -> Self {
        Self {
            channels: 1,
            sample_rate,
            data: samples,
        }
    }

    pub fn frames(&self) -> usize {
        if self.channels == 0 {
            0
        } else {
            self.data.len() / self.channels
        }
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.frames();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.frames();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|s| s.is_finite())
    }
}

pub fn rms(samples: &[f32]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let sum: f64 = samples.iter().map(|&s| (s as f64) * (s as f64)).sum();
    (sum / samples.len() as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotorVoiceParams {
    pub base_freq: f64,
    /// Hz added per rad/s of joint speed.
    pub freq_per_radps: f64,
    pub n_harmonics: u32,
    /// Gain ratio between successive harmonics.
    pub harmonic_rolloff: f64,
    pub noise_level: f64,
    pub idle_floor: f64,
    pub amp_per_radps: f64,
}

impl Default for MotorVoiceParams {
    fn default() -> Self {
        Self {
            base_freq: 110.0,
            freq_per_radps: 60.0,
            n_harmonics: 6,
            harmonic_rolloff: 0.6,
            noise_level: 0.15,
            idle_floor: 0.02,
            amp_per_radps: 0.4,
        }
    }
}

impl MotorVoiceParams {
    pub fn validate(&self) -> Result<(), SourceError> {
        let bad = |m: &str| Err(SourceError::InvalidParams(m.to_string()));
        if !(self.base_freq > 0.0 && self.base_freq.is_finite()) {
            return bad("base_freq must be > 0");
        }
        if self.n_harmonics < 1 {
            return bad("n_harmonics must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.harmonic_rolloff) {
            return bad("harmonic_rolloff must be in [0, 1]");
        }
        if !(self.idle_floor >= 0.0 && self.idle_floor.is_finite()) {
            return bad("idle_floor must be >= 0");
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return bad("noise_level must be >= 0");
        }
        if !(self.freq_per_radps.is_finite() && self.amp_per_radps.is_finite()) {
            return bad("per-speed slopes must be finite");
        }
        Ok(())
    }

    pub fn frequency(&self, joint_velocity: f64) -> f64 {
        self.base_freq + self.freq_per_radps * joint_velocity.abs()
    }

    pub fn amplitude(&self, joint_velocity: f64) -> f64 {
        (self.idle_floor + self.amp_per_radps * joint_velocity.abs()).clamp(0.0, 1.0)
    }

    fn harmonic_norm(&self) -> f64 {
        (0..self.n_harmonics as i32)
            .map(|k| self.harmonic_rolloff.powi(k))
            .sum()
    }
}

/// Oscillator phase (in cycles) and noise generator carried across blocks.
#[derive(Debug, Clone)]
pub struct VoiceState {
    phase: f64,
    rng: ChaCha8Rng,
}

impl VoiceState {
    pub fn new(seed: u64) -> Self {
        Self {
            phase: 0.0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn phase(&self) -> f64 {
        self.phase
    }
}

/// Render one block of a motor voice into `out`.
pub fn motor_voice_into(
    joint_velocity: f64,
    params: &MotorVoiceParams,
    state: &mut VoiceState,
    sample_rate: f64,
    out: &mut [f32],
) {
    let amp = params.amplitude(joint_velocity);
    let freq = params.frequency(joint_velocity);
    let step = freq / sample_rate;
    let nyquist = sample_rate / 2.0;
    let audible = (1..=params.n_harmonics)
        .take_while(|&k| k as f64 * freq < nyquist)
        .count() as i32;
    let norm = params.harmonic_norm();
    for s in out.iter_mut() {
        let mut stack = 0.0;
        let mut g = 1.0;
        for k in 1..=audible {
            stack += g * (TAU * k as f64 * state.phase).sin();
            g *= params.harmonic_rolloff;
        }
        let noise: f64 = state.rng.random_range(-1.0..1.0);
        *s = (amp * (stack / norm + params.noise_level * noise)) as f32;
        state.phase += step;
        state.phase -= state.phase.floor();
    }
}

pub fn motor_voice(
    joint_velocity: f64,
    params: &MotorVoiceParams,
    state: &mut VoiceState,
    block_size: usize,
    sample_rate: u32,
) -> AudioBlock {
    let mut block = AudioBlock::silent(1, block_size, sample_rate);
    motor_voice_into(joint_velocity, params, state, sample_rate as f64, &mut block.data);
    block
}

/// Decoded, mono, engine-rate samples of a WAV file.
#[derive(Debug, Clone, PartialEq)]
pub struct FileFeed {
    samples: Vec<f32>,
    looping: bool,
}

impl FileFeed {
    pub fn from_samples(samples: Vec<f32>, looping: bool) -> Self {
        Self { samples, looping }
    }

    /// Reads PCM16, PCM24 or float32 WAV, downmixes to mono and linearly
    /// resamples to `engine_rate`.
    pub fn load(path: &Path, engine_rate: u32, looping: bool) -> Result<Self, SourceError> {
        let unreadable = |reason: String| SourceError::FileUnreadable {
            path: path.display().to_string(),
            reason,
        };
        let reader = hound::WavReader::open(path).map_err(|e| match e {
            hound::Error::IoError(io) => unreadable(io.to_string()),
            hound::Error::Unsupported => SourceError::UnsupportedFormat("unsupported encoding".into()),
            other => unreadable(other.to_string()),
        })?;
        let spec = reader.spec();
        let interleaved = decode_samples(reader, spec).map_err(|e| match e {
            SourceError::FileUnreadable { reason, .. } => unreadable(reason),
            other => other,
        })?;
        let mono = downmix(&interleaved, spec.channels as usize);
        Ok(Self {
            samples: resample_linear(&mono, spec.sample_rate, engine_rate),
            looping,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    /// Fill `out` starting at `cursor`; returns the cursor for the next block.
    pub fn read_into(&self, cursor: usize, out: &mut [f32]) -> usize {
        let n = self.samples.len();
        if n == 0 {
            out.fill(0.0);
            return 0;
        }
        let mut pos = cursor;
        for s in out.iter_mut() {
            if pos >= n {
                if self.looping {
                    pos %= n;
                } else {
                    *s = 0.0;
                    continue;
                }
            }
            *s = self.samples[pos];
            pos += 1;
        }
        if self.looping {
            pos % n
        } else {
            pos.min(n)
        }
    }

    pub fn file_feed(&self, cursor: usize, block_size: usize, sample_rate: u32) -> (AudioBlock, usize) {
        let mut block = AudioBlock::silent(1, block_size, sample_rate);
        let next = self.read_into(cursor, &mut block.data);
        (block, next)
    }
}

fn decode_samples<R: std::io::Read>(
    reader: hound::WavReader<R>,
    spec: hound::WavSpec,
) -> Result<Vec<f32>, SourceError> {
    let read_err = |e: hound::Error| SourceError::FileUnreadable {
        path: String::new(),
        reason: e.to_string(),
    };
    match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| pcm_to_f32(v as i32, 16)).map_err(read_err))
            .collect(),
        (hound::SampleFormat::Int, 24) => reader
            .into_samples::<i32>()
            .map(|s| s.map(|v| pcm_to_f32(v, 24)).map_err(read_err))
            .collect(),
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map_err(read_err))
            .collect(),
        (fmt, bits) => Err(SourceError::UnsupportedFormat(format!("{fmt:?} {bits}-bit"))),
    }
}

/// Fixed-point to float: divide by `2^(bits - 1)`, so full-scale positive is just below 1.
pub fn pcm_to_f32(value: i32, bits: u32) -> f32 {
    (value as f64 / (1u64 << (bits - 1)) as f64) as f32
}

fn downmix(interleaved: &[f32], channels: usize) -> Vec<f32> {
    if channels <= 1 {
        return interleaved.to_vec();
    }
    interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f32>() / channels as f32)
        .collect()
}

pub fn resample_linear(samples: &[f32], from: u32, to: u32) -> Vec<f32> {
    if from == to || samples.is_empty() {
        return samples.to_vec();
    }
    let ratio = from as f64 / to as f64;
    let out_len = ((samples.len() as f64) / ratio).round().max(1.0) as usize;
    (0..out_len)
        .map(|j| {
            let t = j as f64 * ratio;
            let i = t.floor() as usize;
            let frac = t - i as f64;
            let a = samples[i.min(samples.len() - 1)] as f64;
            let b = samples[(i + 1).min(samples.len() - 1)] as f64;
            (a + (b - a) * frac) as f32
        })
        .collect()
}

/// One crossfaded sample, evaluated in f64 and rounded once.
#[inline]
pub fn blend_sample(consequential: f32, synthetic: f32, mix: f64) -> f32 {
    ((1.0 - mix) * consequential as f64 + mix * synthetic as f64) as f32
}

/// `out = (1 - mix) * consequential + mix * synthetic`.
pub fn blend_into(consequential: &[f32], synthetic: &[f32], mix: f32, out: &mut [f32]) {
    for ((o, &c), &s) in out.iter_mut().zip(consequential).zip(synthetic) {
        *o = blend_sample(c, s, mix as f64);
    }
}

pub fn blend(consequential: &AudioBlock, synthetic: &AudioBlock, mix: f32) -> Result<AudioBlock, SourceError> {
    if consequential.data.len() != synthetic.data.len()
        || consequential.channels != synthetic.channels
        || consequential.sample_rate != synthetic.sample_rate
    {
        return Err(SourceError::BlockMismatch(format!(
            "{}x{} @ {} Hz vs {}x{} @ {} Hz",
            consequential.channels,
            consequential.frames(),
            consequential.sample_rate,
            synthetic.channels,
            synthetic.frames(),
            synthetic.sample_rate
        )));
    }
    let mut out = consequential.clone();
    blend_into(&consequential.data, &synthetic.data, mix, &mut out.data);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SR: u32 = 48_000;

    fn quiet_params() -> MotorVoiceParams {
        MotorVoiceParams {
            noise_level: 0.0,
            ..MotorVoiceParams::default()
        }
    }

    #[test]
    fn idle_rms_matches_closed_form() {
        let p = MotorVoiceParams {
            idle_floor: 0.3,
            ..MotorVoiceParams::default()
        };
        let mut st = VoiceState::new(1);
        let block = motor_voice(0.0, &p, &mut st, SR as usize, SR);
        // Each sinusoid contributes g^2/2, uniform noise on [-1, 1) contributes level^2/3.
        let norm: f64 = (0..p.n_harmonics as i32).map(|k| p.harmonic_rolloff.powi(k)).sum();
        let tonal: f64 = (0..p.n_harmonics as i32)
            .map(|k| p.harmonic_rolloff.powi(2 * k) / 2.0)
            .sum::<f64>()
            / (norm * norm);
        let expected = p.idle_floor * (tonal + p.noise_level * p.noise_level / 3.0).sqrt();
        let got = rms(&block.data);
        assert!((got - expected).abs() / expected < 0.05, "{got} vs {expected}");
    }

    #[test]
    fn frequency_law_is_linear() {
        let p = MotorVoiceParams::default();
        let w = 0.7;
        assert!((p.frequency(2.0 * w) - p.frequency(w) - p.freq_per_radps * w).abs() < 1e-12);
        assert_eq!(p.frequency(-w), p.frequency(w));
    }

    #[test]
    fn phase_is_continuous_across_blocks() {
        let p = MotorVoiceParams {
            n_harmonics: 1,
            ..quiet_params()
        };
        let mut st = VoiceState::new(0);
        let a = motor_voice(1.0, &p, &mut st, 256, SR);
        let b = motor_voice(1.0, &p, &mut st, 256, SR);
        let max_intra = a
            .data
            .windows(2)
            .chain(b.data.windows(2))
            .map(|w| (w[1] - w[0]).abs())
            .fold(0.0f32, f32::max);
        let boundary = (b.data[0] - a.data[255]).abs();
        assert!(boundary <= max_intra);
    }

    #[test]
    fn output_bounded() {
        let p = MotorVoiceParams {
            harmonic_rolloff: 1.0,
            noise_level: 0.5,
            amp_per_radps: 5.0,
            ..MotorVoiceParams::default()
        };
        let mut st = VoiceState::new(3);
        let b = motor_voice(3.0, &p, &mut st, 4096, SR);
        assert!(b.data.iter().all(|s| s.abs() as f64 <= 1.0 + p.noise_level + 1e-6));
    }

    #[test]
    fn amplitude_monotone_in_speed() {
        let p = MotorVoiceParams::default();
        let levels: Vec<f64> = [0.0, 0.5, 1.0, 2.0]
            .iter()
            .map(|&w| {
                let mut st = VoiceState::new(9);
                rms(&motor_voice(w, &p, &mut st, 8192, SR).data)
            })
            .collect();
        assert!(levels.windows(2).all(|w| w[0] <= w[1]), "{levels:?}");
    }

    #[test]
    fn invalid_voice_params() {
        let mut p = MotorVoiceParams::default();
        p.n_harmonics = 0;
        assert!(p.validate().is_err());
        let mut p = MotorVoiceParams::default();
        p.harmonic_rolloff = 1.5;
        assert!(p.validate().is_err());
    }

    #[test]
    fn pcm16_full_scale() {
        assert_eq!(pcm_to_f32(32767, 16), 32767.0 / 32768.0);
        assert_eq!(pcm_to_f32(-32768, 16), -1.0);
        assert_eq!(pcm_to_f32(8_388_607, 24), (8_388_607.0f64 / 8_388_608.0) as f32);
    }

    #[test]
    fn file_feed_loops_and_stops() {
        let one = FileFeed::from_samples(vec![0.25], true);
        let (b, cur) = one.file_feed(0, 8, SR);
        assert!(b.data.iter().all(|&s| s == 0.25));
        assert_eq!(cur, 0);

        let once = FileFeed::from_samples(vec![1.0, 2.0, 3.0], false);
        let (b, cur) = once.file_feed(1, 4, SR);
        assert_eq!(b.data, vec![2.0, 3.0, 0.0, 0.0]);
        let (b, _) = once.file_feed(cur, 4, SR);
        assert_eq!(b.data, vec![0.0; 4]);

        let empty = FileFeed::from_samples(vec![], true);
        assert_eq!(empty.file_feed(0, 4, SR).0.data, vec![0.0; 4]);
    }

    #[test]
    fn blend_endpoints_and_mismatch() {
        let a = AudioBlock::mono(vec![0.1, -0.2, 0.3], SR);
        let b = AudioBlock::mono(vec![0.9, 0.8, -0.7], SR);
        assert_eq!(blend(&a, &b, 0.0).unwrap(), a);
        assert_eq!(blend(&a, &b, 1.0).unwrap(), b);
        assert_eq!(blend(&a, &a, 0.5).unwrap(), a);
        let short = AudioBlock::mono(vec![0.0; 2], SR);
        assert!(matches!(blend(&a, &short, 0.5), Err(SourceError::BlockMismatch(_))));
    }

    #[test]
    fn resample_doubles_length() {
        let out = resample_linear(&[0.0, 1.0], 24_000, 48_000);
        assert_eq!(out, vec![0.0, 0.5, 1.0, 1.0]);
    }
}
