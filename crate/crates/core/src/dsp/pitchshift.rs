//! Dual-tap delay-line pitch shifter.
//!
//! Two read taps sweep through a window of `PITCH_WINDOW` samples at a rate of
//! `1 - ratio` samples per sample, half a window apart. Each tap is weighted by
//! a triangular window over its sweep position, so a tap is silent at the
//! instant it wraps and the weights of the two taps always sum to one.

use super::{DspError, SmoothedParam};

pub const PITCH_WINDOW: usize = 4096;
pub const RATIO_RANGE: (f64, f64) = (0.25, 4.0);

const BUF_LEN: usize = 8192;
const BUF_MASK: usize = BUF_LEN - 1;

pub fn check_ratio(ratio: f64) -> Result<(), DspError> {
    if !(RATIO_RANGE.0..=RATIO_RANGE.1).contains(&ratio) {
        return Err(DspError::OutOfRange {
            what: "ratio".into(),
            value: ratio,
        });
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct PitchShifter {
    buf: Vec<f32>,
    write: usize,
    /// Sweep position of the first tap in [0, 1).
    phase: f64,
}

impl Default for PitchShifter {
    fn default() -> Self {
        Self::new()
    }
}

impl PitchShifter {
    pub fn new() -> Self {
        Self {
            buf: vec![0.0; BUF_LEN],
            write: 0,
            phase: 0.0,
        }
    }

    /// Delay, in samples, of the output at ratio 1.
    pub const fn latency() -> usize {
        PITCH_WINDOW / 2
    }

    pub fn reset(&mut self) {
        self.buf.fill(0.0);
        self.write = 0;
        self.phase = 0.0;
    }

    #[inline]
    fn read(&self, delay: f64) -> f64 {
        let whole = delay.floor();
        let frac = delay - whole;
        let i = (self.write + BUF_LEN - whole as usize) & BUF_MASK;
        let a = self.buf[i] as f64;
        if frac == 0.0 {
            return a;
        }
        let b = self.buf[(i + BUF_LEN - 1) & BUF_MASK] as f64;
        a + (b - a) * frac
    }

    #[inline]
    pub fn tick(&mut self, x: f32, ratio: f64) -> f32 {
        self.buf[self.write] = x;
        let w = PITCH_WINDOW as f64;
        let p1 = self.phase;
        let p2 = (p1 + 0.5).fract();
        let g1 = 1.0 - (2.0 * p1 - 1.0).abs();
        let g2 = 1.0 - (2.0 * p2 - 1.0).abs();
        let mut y = 0.0;
        if g1 != 0.0 {
            y += g1 * self.read(p1 * w);
        }
        if g2 != 0.0 {
            y += g2 * self.read(p2 * w);
        }
        self.phase = (self.phase + (1.0 - ratio) / w).rem_euclid(1.0);
        self.write = (self.write + 1) & BUF_MASK;
        y as f32
    }

    pub fn process(&mut self, buf: &mut [f32], ratio: &mut SmoothedParam) {
        for s in buf {
            let r = ratio.next();
            *s = self.tick(*s, r);
        }
    }
}

/// Shift a block at a constant ratio.
pub fn pitchshift_block(input: &[f32], ratio: f64, state: &mut PitchShifter) -> Result<Vec<f32>, DspError> {
    check_ratio(ratio)?;
    Ok(input.iter().map(|&x| state.tick(x, ratio)).collect())
}
