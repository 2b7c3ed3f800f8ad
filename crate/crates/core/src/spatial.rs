//! Pairwise equal-power panning over a horizontal speaker ring, plus an
//! optional point-source channel at the robot base.
//!
//! Output channel order is the ring order followed by the point source.

use std::f64::consts::{FRAC_PI_2, TAU};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sources::AudioBlock;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpatialError {
    #[error("invalid speaker layout: {0}")]
    InvalidLayout(String),
    #[error("expected a mono block, got {0} channels")]
    NotMono(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerLayout {
    /// Speaker azimuths in radians, counter-clockwise from +x, strictly increasing in `[0, 2pi)`.
    pub ring: Vec<f64>,
    pub has_point_source: bool,
    pub point_source_channel: usize,
}

impl Default for SpeakerLayout {
    fn default() -> Self {
        default_layout()
    }
}

/// Quad ring at 45/135/225/315 degrees plus a point source on channel 4.
pub fn default_layout() -> SpeakerLayout {
    SpeakerLayout {
        ring: [45.0f64, 135.0, 225.0, 315.0].iter().map(|d| d.to_radians()).collect(),
        has_point_source: true,
        point_source_channel: 4,
    }
}

impl SpeakerLayout {
    /// Evenly spaced ring starting at `offset` radians.
    pub fn ring_of(n: usize, offset: f64, has_point_source: bool) -> Self {
        Self {
            ring: (0..n).map(|i| offset + TAU * i as f64 / n as f64).collect(),
            has_point_source,
            point_source_channel: n,
        }
    }

    pub fn channel_count(&self) -> usize {
        self.ring.len() + usize::from(self.has_point_source)
    }

    pub fn validate(&self) -> Result<(), SpatialError> {
        if self.ring.len() < 2 {
            return Err(SpatialError::InvalidLayout("ring needs at least 2 speakers".into()));
        }
        if !self.ring.iter().all(|a| a.is_finite() && (0.0..TAU).contains(a)) {
            return Err(SpatialError::InvalidLayout("ring azimuths must lie in [0, 2pi)".into()));
        }
        if !self.ring.windows(2).all(|w| w[0] < w[1]) {
            return Err(SpatialError::InvalidLayout("ring azimuths must be strictly increasing".into()));
        }
        if self.has_point_source && self.point_source_channel != self.ring.len() {
            return Err(SpatialError::InvalidLayout(
                "point source must be the channel after the ring".into(),
            ));
        }
        Ok(())
    }
}

fn wrap_positive(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Equal-power gains for one ring position. Writes `layout.ring.len()` gains into `out`.
pub fn pan_gains_into(azimuth: f64, layout: &SpeakerLayout, out: &mut [f64]) {
    let ring = &layout.ring;
    let n = ring.len();
    out[..n].fill(0.0);
    let phi = wrap_positive(azimuth);
    // segment i runs from ring[i] to ring[i + 1], the last one wraps to ring[0] + 2pi
    let (i, start, span) = match ring.iter().rposition(|&a| a <= phi) {
        Some(i) if i + 1 < n => (i, ring[i], ring[i + 1] - ring[i]),
        Some(i) => (i, ring[i], ring[0] + TAU - ring[i]),
        None => (n - 1, ring[n - 1] - TAU, ring[0] + TAU - ring[n - 1]),
    };
    let theta = ((phi - start) / span).clamp(0.0, 1.0);
    out[i] = (theta * FRAC_PI_2).cos();
    out[(i + 1) % n] = (theta * FRAC_PI_2).sin();
}

pub fn pan_gains(azimuth: f64, layout: &SpeakerLayout) -> Vec<f64> {
    let mut g = vec![0.0; layout.ring.len()];
    pan_gains_into(azimuth, layout, &mut g);
    g
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceRolloff {
    None,
    /// `reference / distance`, never above 1.
    Inverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialParams {
    pub rolloff: DistanceRolloff,
    pub reference_distance: f64,
    pub point_source_send: f64,
    /// Listener position in the base frame; azimuth and distance are measured from here.
    pub listener: [f64; 3],
}

impl Default for SpatialParams {
    fn default() -> Self {
        Self {
            rolloff: DistanceRolloff::None,
            reference_distance: 1.0,
            point_source_send: 0.5,
            listener: [0.0; 3],
        }
    }
}

/// Where the sonified source sits relative to the listener.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourcePosition {
    pub azimuth: f64,
    pub distance: f64,
}

impl SourcePosition {
    pub fn from_point(point: [f64; 3], listener: [f64; 3]) -> Self {
        let dx = point[0] - listener[0];
        let dy = point[1] - listener[1];
        let dz = point[2] - listener[2];
        Self {
            azimuth: wrap_positive(dy.atan2(dx)),
            distance: (dx * dx + dy * dy + dz * dz).sqrt(),
        }
    }
}

pub fn distance_gain(rolloff: DistanceRolloff, distance: f64, reference: f64) -> f64 {
    match rolloff {
        DistanceRolloff::None => 1.0,
        DistanceRolloff::Inverse => {
            if distance <= reference {
                1.0
            } else {
                reference / distance
            }
        }
    }
}

/// Pan a mono buffer into planar output channels (`out[c * frames..]`).
/// `gains` is scratch space of at least `layout.ring.len()` entries.
pub fn spatialize_into(
    mono: &[f32],
    src: &SourcePosition,
    layout: &SpeakerLayout,
    params: &SpatialParams,
    gains: &mut [f64],
    out: &mut [f32],
) {
    let frames = mono.len();
    pan_gains_into(src.azimuth, layout, gains);
    let roll = distance_gain(params.rolloff, src.distance, params.reference_distance);
    for (c, &g) in gains[..layout.ring.len()].iter().enumerate() {
        let g = g * roll;
        let ch = &mut out[c * frames..(c + 1) * frames];
        if g == 0.0 {
            ch.fill(0.0);
        } else {
            for (o, &x) in ch.iter_mut().zip(mono) {
                *o = (x as f64 * g) as f32;
            }
        }
    }
    if layout.has_point_source {
        let c = layout.point_source_channel;
        let send = params.point_source_send;
        for (o, &x) in out[c * frames..(c + 1) * frames].iter_mut().zip(mono) {
            *o = (x as f64 * send) as f32;
        }
    }
}

pub fn spatialize(
    block: &AudioBlock,
    src: &SourcePosition,
    layout: &SpeakerLayout,
    params: &SpatialParams,
) -> Result<AudioBlock, SpatialError> {
    if block.channels != 1 {
        return Err(SpatialError::NotMono(block.channels));
    }
    layout.validate()?;
    let mut out = AudioBlock::silent(layout.channel_count(), block.frames(), block.sample_rate);
    let mut gains = vec![0.0; layout.ring.len()];
    spatialize_into(&block.data, src, layout, params, &mut gains, &mut out.data);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_layout_shape() {
        let l = default_layout();
        l.validate().unwrap();
        assert_eq!(l.channel_count(), 5);
        assert_eq!(l.ring.len(), 4);
        assert!(l.has_point_source);
        assert_eq!(l.point_source_channel, 4);
    }

    #[test]
    fn at_speaker_and_midpoint() {
        let l = default_layout();
        let g = pan_gains(l.ring[2], &l);
        assert_eq!(g, vec![0.0, 0.0, 1.0, 0.0]);
        let g = pan_gains(90f64.to_radians(), &l);
        assert!((g[0] - 0.707_106_78).abs() < 1e-8 && (g[1] - 0.707_106_78).abs() < 1e-8);
        assert_eq!(g[2], 0.0);
    }

    #[test]
    fn wraps_between_last_and_first() {
        let l = default_layout();
        for az in [TAU - 1e-9, 0.0, 10f64.to_radians()] {
            let g = pan_gains(az, &l);
            assert!(g[3] > 0.0 && g[0] > 0.0, "{az}: {g:?}");
            assert_eq!(g[1], 0.0);
        }
    }

    #[test]
    fn invalid_layouts() {
        let mut l = default_layout();
        l.ring = vec![1.0];
        assert!(l.validate().is_err());
        let mut l = default_layout();
        l.ring.swap(0, 1);
        assert!(l.validate().is_err());
        let mut l = default_layout();
        l.ring[3] = TAU;
        assert!(l.validate().is_err());
    }

    #[test]
    fn spatialize_cases() {
        let l = default_layout();
        let block = AudioBlock::mono(vec![0.5, -0.25, 1.0], 48_000);
        let params = SpatialParams {
            point_source_send: 0.0,
            ..SpatialParams::default()
        };
        let src = SourcePosition {
            azimuth: l.ring[0],
            distance: 3.0,
        };
        let out = spatialize(&block, &src, &l, &params).unwrap();
        assert_eq!(out.channel(0), &block.data[..]);
        for c in 1..5 {
            assert!(out.channel(c).iter().all(|&s| s == 0.0));
        }

        let inv = SpatialParams {
            rolloff: DistanceRolloff::Inverse,
            ..params
        };
        let src2 = SourcePosition { distance: 2.0, ..src };
        let out = spatialize(&block, &src2, &l, &inv).unwrap();
        assert_eq!(out.channel(0), &[0.25, -0.125, 0.5]);
        let near = SourcePosition { distance: 0.3, ..src };
        assert_eq!(spatialize(&block, &near, &l, &inv).unwrap().channel(0), &block.data[..]);

        let stereo = AudioBlock::silent(2, 3, 48_000);
        assert!(matches!(spatialize(&stereo, &src, &l, &params), Err(SpatialError::NotMono(2))));
    }

    #[test]
    fn source_position_from_point() {
        let s = SourcePosition::from_point([0.0, 2.0, 0.0], [0.0; 3]);
        assert!((s.azimuth - FRAC_PI_2).abs() < 1e-12);
        assert!((s.distance - 2.0).abs() < 1e-12);
        let s = SourcePosition::from_point([1.0, -1e-12, 0.0], [0.0; 3]);
        assert!(s.azimuth < TAU && s.azimuth > 6.0);
    }
}
