//! Robot blended-sonification engine.
//!
//! A simulated six-axis arm is steered toward a collaborator; its joint motion
//! drives per-joint motor voices that are blended with a synthetic layer,
//! processed by a small DSP graph whose parameters follow a kinematic mapping,
//! and panned over a speaker ring plus a point source at the robot base.

pub mod api;
pub mod dsp;
pub mod engine;
pub mod mapping;
pub mod osc;
pub mod robot;
pub mod sources;
pub mod spatial;
