//! Kinematics for a six-axis serial arm described by standard Denavit-Hartenberg rows.
//!
//! Frame `i` is reached from frame `i - 1` by `Rz(q_i) Tz(d_i) Tx(a_i) Rx(alpha_i)`.
//! Orientation angles use the ZYX convention, `R = Rz(yaw) Ry(pitch) Rx(roll)`,
//! with every angle reported in `(-pi, pi]`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::{Matrix3, Matrix3x6, Matrix4, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const JOINTS: usize = 6;

/// Half-width of the band around `|pitch| = pi/2` where roll is folded into yaw.
pub const GIMBAL_BAND: f64 = 0.01;

/// Position errors below this are treated as already on target.
pub const STEER_DEADBAND: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RobotError {
    #[error("kinematic parameters invalid: {0}")]
    InvalidParams(String),
    #[error("joint state invalid: {0}")]
    InvalidState(String),
    #[error("steering parameters invalid: {0}")]
    InvalidSteer(String),
    #[error("time interval must be positive, got {0} s")]
    DegenerateInterval(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DhRow {
    /// Link length along the new x axis (m).
    pub a: f64,
    /// Offset along the previous z axis (m).
    pub d: f64,
    /// Twist about the new x axis (rad).
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinematicParams {
    pub dh: [DhRow; JOINTS],
    /// `[lo, hi]` per joint, radians.
    pub limits: [[f64; 2]; JOINTS],
    /// rad/s, shared by all joints.
    pub max_joint_speed: f64,
}

impl Default for KinematicParams {
    /// UR10-class geometry.
    fn default() -> Self {
        let row = |a, d, alpha| DhRow { a, d, alpha };
        Self {
            dh: [
                row(0.0, 0.1273, FRAC_PI_2),
                row(-0.612, 0.0, 0.0),
                row(-0.5723, 0.0, 0.0),
                row(0.0, 0.163941, FRAC_PI_2),
                row(0.0, 0.1157, -FRAC_PI_2),
                row(0.0, 0.0922, 0.0),
            ],
            limits: [
                [-TAU, TAU],
                [-TAU, TAU],
                [-PI, PI],
                [-TAU, TAU],
                [-TAU, TAU],
                [-TAU, TAU],
            ],
            max_joint_speed: 2.0,
        }
    }
}

impl KinematicParams {
    pub fn validate(&self) -> Result<(), RobotError> {
        for (i, row) in self.dh.iter().enumerate() {
            if !(row.a.is_finite() && row.d.is_finite() && row.alpha.is_finite()) {
                return Err(RobotError::InvalidParams(format!("dh[{i}] not finite")));
            }
        }
        for (i, [lo, hi]) in self.limits.iter().enumerate() {
            if !(lo < hi) {
                return Err(RobotError::InvalidParams(format!(
                    "limits[{i}]: lo {lo} must be below hi {hi}"
                )));
            }
        }
        if !(self.max_joint_speed > 0.0 && self.max_joint_speed.is_finite()) {
            return Err(RobotError::InvalidParams(
                "max_joint_speed must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Distance between the origins of frames `i` and `i + 1`; constant for any `q`.
    pub fn link_span(&self, i: usize) -> f64 {
        self.dh[i].a.hypot(self.dh[i].d)
    }

    fn clamp_to_limits(&self, q: &mut [f64; JOINTS]) {
        for (v, [lo, hi]) in q.iter_mut().zip(self.limits.iter()) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub q: [f64; JOINTS],
    pub qdot: [f64; JOINTS],
    pub timestamp: f64,
}

impl JointState {
    pub fn at_rest(q: [f64; JOINTS]) -> Self {
        Self {
            q,
            qdot: [0.0; JOINTS],
            timestamp: 0.0,
        }
    }

    pub fn validate(&self, params: &KinematicParams) -> Result<(), RobotError> {
        for i in 0..JOINTS {
            let [lo, hi] = params.limits[i];
            if !(lo..=hi).contains(&self.q[i]) {
                return Err(RobotError::InvalidState(format!("q[{i}] outside limits")));
            }
            if !(self.qdot[i].abs() <= params.max_joint_speed) {
                return Err(RobotError::InvalidState(format!(
                    "qdot[{i}] exceeds max joint speed"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    /// Base frame, metres.
    pub position: [f64; 3],
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl Pose {
    pub fn from_matrix(m: &Matrix4<f64>) -> Self {
        let rot: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        let (roll, pitch, yaw) = rotation_to_rpy(&rot);
        Self {
            position: [m[(0, 3)], m[(1, 3)], m[(2, 3)]],
            roll,
            pitch,
            yaw,
        }
    }

    pub fn position_vec(&self) -> Vector3<f64> {
        Vector3::from(self.position)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollaboratorState {
    /// Base frame, metres.
    pub position: [f64; 3],
    pub timestamp: f64,
}

impl CollaboratorState {
    pub fn new(position: [f64; 3], timestamp: f64) -> Self {
        Self {
            position,
            timestamp,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
    }
}

/// Map an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = (a + PI).rem_euclid(TAU) - PI;
    if w <= -PI {
        w += TAU;
    }
    w
}

pub fn rpy_to_rotation(roll: f64, pitch: f64, yaw: f64) -> Matrix3<f64> {
    let (sr, cr) = roll.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    Matrix3::new(
        cy * cp,
        cy * sp * sr - sy * cr,
        cy * sp * cr + sy * sr,
        sy * cp,
        sy * sp * sr + cy * cr,
        sy * sp * cr - cy * sr,
        -sp,
        cp * sr,
        cp * cr,
    )
}

/// ZYX Euler angles `(roll, pitch, yaw)`. Inside the gimbal band roll is
/// reported as 0 and yaw carries the whole rotation about the vertical.
pub fn rotation_to_rpy(r: &Matrix3<f64>) -> (f64, f64, f64) {
    let pitch = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
    if FRAC_PI_2 - pitch.abs() <= GIMBAL_BAND {
        let yaw = (-r[(0, 1)]).atan2(r[(1, 1)]);
        return (0.0, wrap_angle(pitch), wrap_angle(yaw));
    }
    let roll = r[(2, 1)].atan2(r[(2, 2)]);
    let yaw = r[(1, 0)].atan2(r[(0, 0)]);
    (wrap_angle(roll), wrap_angle(pitch), wrap_angle(yaw))
}

fn dh_transform(theta: f64, row: &DhRow) -> Matrix4<f64> {
    let (st, ct) = theta.sin_cos();
    let (sa, ca) = row.alpha.sin_cos();
    Matrix4::new(
        ct,
        -st * ca,
        st * sa,
        row.a * ct,
        st,
        ct * ca,
        -ct * sa,
        row.a * st,
        0.0,
        sa,
        ca,
        row.d,
        0.0,
        0.0,
        0.0,
        1.0,
    )
}

/// Homogeneous transforms of frames 1..=6 in the base frame.
pub fn link_frames(q: &[f64; JOINTS], params: &KinematicParams) -> [Matrix4<f64>; JOINTS] {
    let mut frames = [Matrix4::identity(); JOINTS];
    let mut acc = Matrix4::identity();
    for i in 0..JOINTS {
        acc *= dh_transform(q[i], &params.dh[i]);
        frames[i] = acc;
    }
    frames
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmPoses {
    pub links: [Pose; JOINTS],
    pub tcp: Pose,
}

pub fn forward_kinematics(state: &JointState, params: &KinematicParams) -> ArmPoses {
    let frames = link_frames(&state.q, params);
    let links = frames.map(|f| Pose::from_matrix(&f));
    ArmPoses {
        links,
        tcp: links[JOINTS - 1],
    }
}

pub fn tcp_position(q: &[f64; JOINTS], params: &KinematicParams) -> Vector3<f64> {
    let f = link_frames(q, params)[JOINTS - 1];
    Vector3::new(f[(0, 3)], f[(1, 3)], f[(2, 3)])
}

/// Geometric Jacobian: rows 0..3 are linear velocity, rows 3..6 angular velocity.
pub fn jacobian(state: &JointState, params: &KinematicParams) -> Matrix6<f64> {
    let frames = link_frames(&state.q, params);
    let tcp = frames[JOINTS - 1].fixed_view::<3, 1>(0, 3).into_owned();
    let mut j = Matrix6::zeros();
    let mut z = Vector3::z();
    let mut origin = Vector3::zeros();
    for i in 0..JOINTS {
        let lin = z.cross(&(tcp - origin));
        j.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
        j.fixed_view_mut::<3, 1>(3, i).copy_from(&z);
        z = frames[i].fixed_view::<3, 1>(0, 2).into_owned();
        origin = frames[i].fixed_view::<3, 1>(0, 3).into_owned();
    }
    j
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteerParams {
    /// Fraction of the remaining error corrected per step, in `(0, 1]`.
    pub gain: f64,
    /// DLS damping factor (lambda).
    pub damping: f64,
    /// Distance the TCP keeps from the collaborator (m).
    pub standoff: f64,
    /// Condition number of the positional Jacobian above which the step is scaled down.
    pub singularity_threshold: f64,
}

impl Default for SteerParams {
    fn default() -> Self {
        Self {
            gain: 0.5,
            damping: 0.01,
            standoff: 0.25,
            singularity_threshold: 1e4,
        }
    }
}

impl SteerParams {
    pub fn validate(&self) -> Result<(), RobotError> {
        if !(self.gain > 0.0 && self.gain <= 1.0) {
            return Err(RobotError::InvalidSteer("gain must be in (0, 1]".into()));
        }
        if !(self.damping > 0.0 && self.damping.is_finite()) {
            return Err(RobotError::InvalidSteer("damping must be positive".into()));
        }
        if !(self.standoff >= 0.0 && self.standoff.is_finite()) {
            return Err(RobotError::InvalidSteer("standoff must be >= 0".into()));
        }
        if !(self.singularity_threshold > 1.0) {
            return Err(RobotError::InvalidSteer(
                "singularity_threshold must exceed 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteerOutcome {
    pub state: JointState,
    /// Set when the positional Jacobian was near-singular and the step was scaled down.
    pub singularity_near: bool,
    pub condition_number: f64,
}

/// Point on the sphere of radius `standoff` around the collaborator, on the
/// collaborator-to-TCP ray.
pub fn standoff_target(tcp: &Vector3<f64>, collaborator: &Vector3<f64>, standoff: f64) -> Vector3<f64> {
    let away = tcp - collaborator;
    let n = away.norm();
    let dir = if n > STEER_DEADBAND { away / n } else { Vector3::z() };
    collaborator + dir * standoff
}

/// Distance from the TCP to its standoff target.
pub fn standoff_error(tcp: &Vector3<f64>, collaborator: &Vector3<f64>, standoff: f64) -> f64 {
    (standoff_target(tcp, collaborator, standoff) - tcp).norm()
}

/// One damped-least-squares resolved-rate step of the TCP toward the collaborator.
pub fn steer_towards(
    current: &JointState,
    collaborator: &CollaboratorState,
    steer: &SteerParams,
    dt: f64,
    params: &KinematicParams,
) -> Result<SteerOutcome, RobotError> {
    if !(dt > 0.0) {
        return Err(RobotError::DegenerateInterval(dt));
    }
    steer.validate()?;

    let jac = jacobian(current, params);
    let jp: Matrix3x6<f64> = jac.fixed_view::<3, 6>(0, 0).into_owned();
    let svd = jp.svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition_number = if smin > 0.0 { smax / smin } else { f64::INFINITY };

    let tcp = tcp_position(&current.q, params);
    let collab = Vector3::from(collaborator.position);
    let error = standoff_target(&tcp, &collab, steer.standoff) - tcp;

    let mut next = *current;
    next.timestamp = current.timestamp + dt;
    if error.norm() < STEER_DEADBAND {
        next.qdot = [0.0; JOINTS];
        return Ok(SteerOutcome {
            state: next,
            singularity_near: false,
            condition_number,
        });
    }

    let v = error * (steer.gain / dt);
    let lambda2 = steer.damping * steer.damping;
    let jjt = jp * jp.transpose() + Matrix3::identity() * lambda2;
    // jjt is symmetric positive definite for damping > 0
    let w = jjt
        .cholesky()
        .map(|c| c.solve(&v))
        .unwrap_or_else(|| Vector3::zeros());
    let mut qdot: Vector6<f64> = jp.transpose() * w;

    let singularity_near = condition_number > steer.singularity_threshold;
    if singularity_near {
        qdot *= steer.singularity_threshold / condition_number;
    }
    let peak = qdot.amax();
    if peak > params.max_joint_speed {
        qdot *= params.max_joint_speed / peak;
    }

    let mut q = current.q;
    for i in 0..JOINTS {
        q[i] += qdot[i] * dt;
    }
    params.clamp_to_limits(&mut q);
    for i in 0..JOINTS {
        // realized rate; clamp absorbs rounding in the q round trip
        next.qdot[i] = ((q[i] - current.q[i]) / dt).clamp(-params.max_joint_speed, params.max_joint_speed);
    }
    next.q = q;
    Ok(SteerOutcome {
        state: next,
        singularity_near,
        condition_number,
    })
}

/// Straight-line TCP speed between two timestamped poses (m/s).
pub fn tcp_speed(previous: (&Pose, f64), current: (&Pose, f64)) -> Result<f64, RobotError> {
    let dt = current.1 - previous.1;
    if !(dt > 0.0) {
        return Err(RobotError::DegenerateInterval(dt));
    }
    Ok((current.0.position_vec() - previous.0.position_vec()).norm() / dt)
}

/// Euclidean distance between the collaborator and a reference pose (m).
pub fn proximity(collaborator: &CollaboratorState, reference: &Pose) -> f64 {
    (Vector3::from(collaborator.position) - reference.position_vec()).norm()
}
