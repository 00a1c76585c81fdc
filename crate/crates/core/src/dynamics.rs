//! Rigid-body quadrotor model.
//!
//! Body frame is forward-left-up. Rotors sit in an X configuration and are
//! indexed front-right, back-left, front-left, back-right. The front-right /
//! back-left pair spins counter-clockwise seen from above, the other diagonal
//! pair clockwise, so each diagonal pair co-rotates.

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rotor positions in units of `arm_length / sqrt(2)`, as (x, y) in the body frame.
pub const ROTOR_LAYOUT: [(f64, f64); 4] = [(1.0, -1.0), (-1.0, 1.0), (1.0, 1.0), (-1.0, -1.0)];

/// Sign of each rotor's reaction torque about body z.
pub const ROTOR_YAW_SIGN: [f64; 4] = [-1.0, -1.0, 1.0, 1.0];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("integration produced a non-finite state")]
    NonFiniteState,
    #[error("invalid vehicle parameters: {0}")]
    InvalidParams(String),
}

/// Physical constants of the vehicle. Defaults describe a Crazyflie-2-class
/// micro quadrotor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadParams {
    /// kg
    pub mass: f64,
    /// Principal moments (Ixx, Iyy, Izz), kg·m².
    pub inertia: [f64; 3],
    /// Hub-to-rotor distance, m.
    pub arm_length: f64,
    /// N / RPM²
    pub thrust_coeff: f64,
    /// N·m / RPM²
    pub torque_coeff: f64,
    pub rpm_min: f64,
    pub rpm_max: f64,
    /// m/s²
    pub gravity: f64,
    /// Integration step, s.
    pub physics_dt: f64,
    /// First-order motor time constant in seconds; 0 disables the lag.
    pub motor_time_constant: f64,
}

impl Default for QuadParams {
    fn default() -> Self {
        Self {
            mass: 0.027,
            inertia: [1.4e-5, 1.4e-5, 2.17e-5],
            arm_length: 0.0397,
            thrust_coeff: 3.16e-10,
            torque_coeff: 7.94e-12,
            rpm_min: 0.0,
            rpm_max: 21_700.0,
            gravity: 9.81,
            physics_dt: 1.0 / 200.0,
            motor_time_constant: 0.0,
        }
    }
}

impl QuadParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let positive = [
            ("mass", self.mass),
            ("inertia.x", self.inertia[0]),
            ("inertia.y", self.inertia[1]),
            ("inertia.z", self.inertia[2]),
            ("arm_length", self.arm_length),
            ("thrust_coeff", self.thrust_coeff),
            ("torque_coeff", self.torque_coeff),
            ("rpm_max", self.rpm_max),
            ("gravity", self.gravity),
            ("physics_dt", self.physics_dt),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(DynamicsError::InvalidParams(format!(
                    "{name} must be finite and > 0, got {value}"
                )));
            }
        }
        if !(self.rpm_min >= 0.0 && self.rpm_min < self.rpm_max) {
            return Err(DynamicsError::InvalidParams(format!(
                "need 0 <= rpm_min < rpm_max, got [{}, {}]",
                self.rpm_min, self.rpm_max
            )));
        }
        if !(self.motor_time_constant.is_finite() && self.motor_time_constant >= 0.0) {
            return Err(DynamicsError::InvalidParams(
                "motor_time_constant must be >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Rotor speed at which total thrust equals weight.
    pub fn hover_rpm(&self) -> f64 {
        (self.mass * self.gravity / (4.0 * self.thrust_coeff)).sqrt()
    }

    /// Total thrust with every rotor at `rpm_max`.
    pub fn max_total_thrust(&self) -> f64 {
        4.0 * self.thrust_coeff * self.rpm_max * self.rpm_max
    }

    /// Roll/pitch moment arm of a single rotor in the X configuration.
    pub fn moment_arm(&self) -> f64 {
        self.arm_length / std::f64::consts::SQRT_2
    }

    fn inertia_vector(&self) -> Vector3<f64> {
        Vector3::from(self.inertia)
    }
}

/// Pose and twist. Position and velocity are in the world frame (z up),
/// angular velocity in the body frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    /// Rotation taking body-frame vectors to the world frame.
    pub orientation: UnitQuaternion<f64>,
    pub angular_velocity: Vector3<f64>,
}

impl QuadState {
    /// Level, motionless vehicle at `position`.
    pub fn at_rest(position: Vector3<f64>) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            orientation: UnitQuaternion::identity(),
            angular_velocity: Vector3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.velocity.iter().all(|v| v.is_finite())
            && self.orientation.coords.iter().all(|v| v.is_finite())
            && self.angular_velocity.iter().all(|v| v.is_finite())
    }

    pub fn euler_angles(&self) -> [f64; 3] {
        euler_angles(&self.orientation)
    }
}

/// Per-rotor speeds in RPM, ordered front-right, back-left, front-left, back-right.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotorCommand {
    pub rpm: [f64; 4],
}

impl MotorCommand {
    pub fn uniform(rpm: f64) -> Self {
        Self { rpm: [rpm; 4] }
    }

    /// Clamps every rotor into the actuator range.
    pub fn clamped(self, params: &QuadParams) -> Self {
        Self {
            rpm: self.rpm.map(|w| w.clamp(params.rpm_min, params.rpm_max)),
        }
    }
}

/// Collective thrust along body z and body-frame torques.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotorWrench {
    pub thrust: f64,
    pub torque: Vector3<f64>,
}

pub fn rotor_forces(cmd: &MotorCommand, params: &QuadParams) -> RotorWrench {
    let arm = params.moment_arm();
    let mut thrust = 0.0;
    let mut torque = Vector3::zeros();
    for (i, &w) in cmd.rpm.iter().enumerate() {
        let w2 = w * w;
        let f = params.thrust_coeff * w2;
        let (x, y) = ROTOR_LAYOUT[i];
        thrust += f;
        // r × (0, 0, f)
        torque.x += arm * y * f;
        torque.y -= arm * x * f;
        torque.z += ROTOR_YAW_SIGN[i] * params.torque_coeff * w2;
    }
    RotorWrench { thrust, torque }
}

/// Advances the state by one `physics_dt`.
///
/// Rotation is semi-implicit Euler: body rates are updated first and the new
/// rates drive an exact exponential-map quaternion update. Translation uses the
/// average of old and new velocity, which is exact under constant acceleration.
pub fn step_dynamics(
    state: &QuadState,
    cmd: &MotorCommand,
    params: &QuadParams,
) -> Result<QuadState, DynamicsError> {
    let dt = params.physics_dt;
    let wrench = rotor_forces(&cmd.clamped(params), params);

    let inertia = params.inertia_vector();
    let omega = state.angular_velocity;
    let gyro = omega.cross(&inertia.component_mul(&omega));
    let omega_dot = (wrench.torque - gyro).component_div(&inertia);
    let omega_next = omega + omega_dot * dt;
    let orientation = UnitQuaternion::new_normalize(
        (state.orientation * UnitQuaternion::from_scaled_axis(omega_next * dt)).into_inner(),
    );

    let thrust_world = state.orientation * Vector3::new(0.0, 0.0, wrench.thrust);
    let accel = thrust_world / params.mass - Vector3::new(0.0, 0.0, params.gravity);
    let velocity = state.velocity + accel * dt;
    let position = state.position + (state.velocity + velocity) * (0.5 * dt);

    let next = QuadState {
        position,
        velocity,
        orientation,
        angular_velocity: omega_next,
    };
    if next.is_finite() {
        Ok(next)
    } else {
        Err(DynamicsError::NonFiniteState)
    }
}

/// Z-Y-X (yaw, pitch, roll) angles of a world←body rotation.
///
/// Roll and yaw lie in (−π, π], pitch in [−π/2, π/2]. At gimbal lock roll is
/// set to zero and the remaining rotation is folded into yaw.
pub fn euler_angles(q: &UnitQuaternion<f64>) -> [f64; 3] {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    let sin_pitch = 2.0 * (w * y - z * x);
    if sin_pitch.abs() >= 1.0 - 1e-12 {
        let pitch = std::f64::consts::FRAC_PI_2.copysign(sin_pitch);
        let yaw = wrap_angle(2.0 * z.atan2(w));
        return [0.0, pitch, yaw];
    }
    let roll = (2.0 * (w * x + y * z)).atan2(1.0 - 2.0 * (x * x + y * y));
    let pitch = sin_pitch.asin();
    let yaw = (2.0 * (w * z + x * y)).atan2(1.0 - 2.0 * (y * y + z * z));
    [wrap_angle(roll), pitch, wrap_angle(yaw)]
}

/// Wraps an angle into (−π, π].
pub fn wrap_angle(angle: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut a = angle.rem_euclid(TAU);
    if a > PI {
        a -= TAU;
    }
    a
}
