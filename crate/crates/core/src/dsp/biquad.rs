//! Second-order sections from the audio-EQ cookbook, run in transposed direct form II.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::DspError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    #[default]
    Lowpass,
    Highpass,
    /// Constant 0 dB peak gain.
    Bandpass,
}

/// Coefficients normalised so that `a0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiquadCoeffs {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl BiquadCoeffs {
    pub const IDENTITY: BiquadCoeffs = BiquadCoeffs {
        b0: 1.0,
        b1: 0.0,
        b2: 0.0,
        a1: 0.0,
        a2: 0.0,
    };

    pub fn dc_gain(&self) -> f64 {
        (self.b0 + self.b1 + self.b2) / (1.0 + self.a1 + self.a2)
    }

    /// Both poles strictly inside the unit circle (stability triangle).
    pub fn is_stable(&self) -> bool {
        self.a2.abs() < 1.0 && self.a1.abs() < 1.0 + self.a2
    }
}

pub fn biquad_coeffs(kind: FilterKind, cutoff: f64, q: f64, sample_rate: f64) -> Result<BiquadCoeffs, DspError> {
    if !(cutoff > 0.0 && cutoff < sample_rate / 2.0) {
        return Err(DspError::OutOfRange {
            what: "cutoff".into(),
            value: cutoff,
        });
    }
    if !(q > 0.0 && q.is_finite()) {
        return Err(DspError::OutOfRange {
            what: "q".into(),
            value: q,
        });
    }
    let w0 = 2.0 * PI * cutoff / sample_rate;
    let (sin, cos) = w0.sin_cos();
    let alpha = sin / (2.0 * q);
    let (b0, b1, b2) = match kind {
        FilterKind::Lowpass => ((1.0 - cos) / 2.0, 1.0 - cos, (1.0 - cos) / 2.0),
        FilterKind::Highpass => ((1.0 + cos) / 2.0, -(1.0 + cos), (1.0 + cos) / 2.0),
        FilterKind::Bandpass => (alpha, 0.0, -alpha),
    };
    let a0 = 1.0 + alpha;
    Ok(BiquadCoeffs {
        b0: b0 / a0,
        b1: b1 / a0,
        b2: b2 / a0,
        a1: -2.0 * cos / a0,
        a2: (1.0 - alpha) / a0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub coeffs: BiquadCoeffs,
    s1: f64,
    s2: f64,
}

impl Biquad {
    pub fn new(coeffs: BiquadCoeffs) -> Self {
        Self {
            coeffs,
            s1: 0.0,
            s2: 0.0,
        }
    }

    pub fn reset(&mut self) {
        self.s1 = 0.0;
        self.s2 = 0.0;
    }

    #[inline]
    pub fn tick(&mut self, x: f64) -> f64 {
        let c = &self.coeffs;
        let y = c.b0 * x + self.s1;
        self.s1 = c.b1 * x - c.a1 * y + self.s2;
        self.s2 = c.b2 * x - c.a2 * y;
        y
    }

    pub fn process(&mut self, buf: &mut [f32]) {
        for s in buf {
            *s = self.tick(*s as f64) as f32;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lowpass_passes_dc() {
        for cutoff in [100.0, 1000.0, 20_000.0, 23_999.0] {
            let c = biquad_coeffs(FilterKind::Lowpass, cutoff, 0.707, 48_000.0).unwrap();
            assert!((c.dc_gain() - 1.0).abs() < 1e-9, "{cutoff}");
        }
    }

    #[test]
    fn highpass_blocks_dc() {
        let c = biquad_coeffs(FilterKind::Highpass, 500.0, 0.707, 48_000.0).unwrap();
        assert!(c.dc_gain().abs() < 1e-9);
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(biquad_coeffs(FilterKind::Lowpass, 24_000.0, 0.7, 48_000.0).is_err());
        assert!(biquad_coeffs(FilterKind::Lowpass, 0.0, 0.7, 48_000.0).is_err());
        assert!(biquad_coeffs(FilterKind::Bandpass, 1000.0, 0.0, 48_000.0).is_err());
    }

    #[test]
    fn impulse_response_of_identity() {
        let mut f = Biquad::new(BiquadCoeffs::IDENTITY);
        let mut buf = [1.0, 0.5, -0.25];
        f.process(&mut buf);
        assert_eq!(buf, [1.0, 0.5, -0.25]);
    }
}
