//! Action decoders, attitude PID and the X-configuration mixer.
//!
//! Two action interfaces sit between the agent and the motors:
//! * thrust vector: collective-thrust fraction plus desired roll and pitch,
//!   tracked by an attitude PID whose torques go through [`mix_to_rpms`];
//! * direct RPM: four rotor speeds expressed as a small band around hover.

use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::dynamics::{wrap_angle, MotorCommand, QuadParams, QuadState, ROTOR_LAYOUT, ROTOR_YAW_SIGN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSpace {
    ThrustVector,
    Rpm,
}

impl ActionSpace {
    pub fn dim(self) -> usize {
        match self {
            ActionSpace::ThrustVector => 3,
            ActionSpace::Rpm => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ActionSpace::ThrustVector => "thrust_vector",
            ActionSpace::Rpm => "rpm",
        }
    }
}

impl fmt::Display for ActionSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActionSpace {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "thrust_vector" | "thrust-vector" => Ok(ActionSpace::ThrustVector),
            "rpm" => Ok(ActionSpace::Rpm),
            other => Err(format!("unknown action space `{other}` (expected thrust_vector or rpm)")),
        }
    }
}

/// Raw agent output, every component in [−1, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ControlAction {
    /// (thrust, roll, pitch)
    ThrustVector([f64; 3]),
    RpmDirect([f64; 4]),
}

impl ControlAction {
    /// Builds the variant matching `space` from a raw slice.
    ///
    /// Panics if `raw.len()` differs from `space.dim()`.
    pub fn from_slice(space: ActionSpace, raw: &[f64]) -> Self {
        assert_eq!(raw.len(), space.dim(), "action width mismatch");
        match space {
            ActionSpace::ThrustVector => ControlAction::ThrustVector([raw[0], raw[1], raw[2]]),
            ActionSpace::Rpm => ControlAction::RpmDirect([raw[0], raw[1], raw[2], raw[3]]),
        }
    }

    pub fn space(&self) -> ActionSpace {
        match self {
            ControlAction::ThrustVector(_) => ActionSpace::ThrustVector,
            ControlAction::RpmDirect(_) => ActionSpace::Rpm,
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        match self {
            ControlAction::ThrustVector(a) => a,
            ControlAction::RpmDirect(a) => a,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttitudeSetpoint {
    /// Fraction of maximum collective thrust, in [0, 1].
    pub thrust_fraction: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

/// Gains for one axis. Torque = kp·e + ki·∫e − kd·ω.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Bound on |∫e| in rad·s.
    pub integral_limit: f64,
}

impl AxisGains {
    pub const ZERO: AxisGains = AxisGains { kp: 0.0, ki: 0.0, kd: 0.0, integral_limit: 1.0 };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PidGains {
    pub roll: AxisGains,
    pub pitch: AxisGains,
    pub yaw: AxisGains,
}

impl Default for PidGains {
    /// Tuned for the default vehicle: roughly 17 rad/s natural frequency and
    /// 0.85 damping on roll/pitch.
    fn default() -> Self {
        let tilt = AxisGains { kp: 4.0e-3, ki: 1.0e-3, kd: 4.0e-4, integral_limit: 0.5 };
        Self {
            roll: tilt,
            pitch: tilt,
            yaw: AxisGains { kp: 3.0e-3, ki: 0.0, kd: 4.5e-4, integral_limit: 0.5 },
        }
    }
}

impl PidGains {
    pub fn axes(&self) -> [AxisGains; 3] {
        [self.roll, self.pitch, self.yaw]
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, g) in ["roll", "pitch", "yaw"].iter().zip(self.axes()) {
            if !(g.kp > 0.0 && g.ki >= 0.0 && g.kd >= 0.0 && g.integral_limit > 0.0) {
                return Err(format!(
                    "{name} gains need kp > 0, ki >= 0, kd >= 0, integral_limit > 0"
                ));
            }
        }
        Ok(())
    }
}

/// Integrator and last-error memory of the attitude loop.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PidState {
    pub integral: [f64; 3],
    pub last_error: [f64; 3],
}

pub fn decode_thrust_vector_action(raw: [f64; 3], current_yaw: f64) -> AttitudeSetpoint {
    let [u, roll, pitch] = raw.map(|v| v.clamp(-1.0, 1.0));
    AttitudeSetpoint {
        thrust_fraction: (u + 1.0) / 2.0,
        roll,
        pitch,
        yaw: current_yaw,
    }
}

/// rpm_i = hover·(1 + scale·a_i), clamped to the actuator range.
pub fn decode_rpm_action(raw: [f64; 4], params: &QuadParams, scale: f64) -> MotorCommand {
    let hover = params.hover_rpm();
    MotorCommand {
        rpm: raw.map(|a| hover * (1.0 + scale * a.clamp(-1.0, 1.0))),
    }
    .clamped(params)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixOutput {
    pub command: MotorCommand,
    /// Set when the exact allocation needed a negative or out-of-range rotor
    /// speed and the command was clamped.
    pub infeasible: bool,
}

/// Inverts [`crate::dynamics::rotor_forces`]: per-rotor thrust from
/// (collective thrust, body torques), then square roots and clamping.
pub fn mix_to_rpms(thrust: f64, torque: &Vector3<f64>, params: &QuadParams) -> MixOutput {
    // The allocation rows (1, y, −x, yaw sign) are mutually orthogonal with
    // squared norm 4, so the inverse is a scaled transpose.
    let arm = params.moment_arm();
    let tx = torque.x / arm;
    let ty = torque.y / arm;
    let tz = torque.z * params.thrust_coeff / params.torque_coeff;
    let mut rpm = [0.0; 4];
    let mut infeasible = false;
    for i in 0..4 {
        let (x, y) = ROTOR_LAYOUT[i];
        let f = 0.25 * (thrust + y * tx - x * ty + ROTOR_YAW_SIGN[i] * tz);
        let w2 = f / params.thrust_coeff;
        if w2 < 0.0 {
            infeasible = true;
        }
        let w = w2.max(0.0).sqrt();
        if w > params.rpm_max || w < params.rpm_min {
            infeasible = true;
        }
        rpm[i] = w.clamp(params.rpm_min, params.rpm_max);
    }
    MixOutput { command: MotorCommand { rpm }, infeasible }
}

/// Body torques from angle errors with rate feedback on the derivative term.
pub fn attitude_torques(
    state: &QuadState,
    sp: &AttitudeSetpoint,
    gains: &PidGains,
    pid: &PidState,
    dt: f64,
) -> (Vector3<f64>, PidState) {
    let [roll, pitch, yaw] = state.euler_angles();
    let error = [sp.roll - roll, sp.pitch - pitch, wrap_angle(sp.yaw - yaw)];
    let mut next = PidState { last_error: error, ..*pid };
    let mut torque = Vector3::zeros();
    for (axis, g) in gains.axes().iter().enumerate() {
        let limit = g.integral_limit;
        next.integral[axis] = (pid.integral[axis] + error[axis] * dt).clamp(-limit, limit);
        torque[axis] = g.kp * error[axis] + g.ki * next.integral[axis]
            - g.kd * state.angular_velocity[axis];
    }
    (torque, next)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidOutput {
    pub command: MotorCommand,
    pub state: PidState,
    pub saturated: bool,
}

pub fn attitude_pid_step(
    state: &QuadState,
    sp: &AttitudeSetpoint,
    gains: &PidGains,
    pid: &PidState,
    params: &QuadParams,
    dt: f64,
) -> PidOutput {
    let (torque, next) = attitude_torques(state, sp, gains, pid, dt);
    let thrust = sp.thrust_fraction.clamp(0.0, 1.0) * params.max_total_thrust();
    let mix = mix_to_rpms(thrust, &torque, params);
    PidOutput { command: mix.command, state: next, saturated: mix.infeasible }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{rotor_forces, step_dynamics};
    use approx::assert_relative_eq;
    use nalgebra::UnitQuaternion;

    #[test]
    fn thrust_vector_decode_endpoints() {
        let sp = decode_thrust_vector_action([-1.0, 0.0, 0.0], 0.0);
        assert_eq!(sp, AttitudeSetpoint { thrust_fraction: 0.0, roll: 0.0, pitch: 0.0, yaw: 0.0 });
        let sp = decode_thrust_vector_action([1.0, 0.5, -0.5], 0.3);
        assert_eq!(sp, AttitudeSetpoint { thrust_fraction: 1.0, roll: 0.5, pitch: -0.5, yaw: 0.3 });
    }

    #[test]
    fn thrust_vector_decode_hover_inverse() {
        let p = QuadParams::default();
        let raw_u = 2.0 * p.mass * p.gravity / (4.0 * p.thrust_coeff * p.rpm_max * p.rpm_max) - 1.0;
        let sp = decode_thrust_vector_action([raw_u, 0.0, 0.0], 0.0);
        let thrust = sp.thrust_fraction * p.max_total_thrust();
        assert_relative_eq!(thrust, p.mass * p.gravity, max_relative = 1e-9);
    }

    #[test]
    fn rpm_decode_endpoints() {
        let p = QuadParams::default();
        let h = p.hover_rpm();
        assert_eq!(decode_rpm_action([0.0; 4], &p, 0.05).rpm, [h; 4]);
        assert_eq!(decode_rpm_action([1.0; 4], &p, 0.05).rpm, [h * 1.05; 4]);
        let low = decode_rpm_action([-1.0; 4], &p, 0.05);
        assert_relative_eq!(
            rotor_forces(&low, &p).thrust,
            0.95 * 0.95 * p.mass * p.gravity,
            max_relative = 1e-9
        );
    }

    #[test]
    fn decoders_clamp_out_of_range_inputs() {
        let p = QuadParams::default();
        assert_eq!(decode_rpm_action([3.0; 4], &p, 0.05), decode_rpm_action([1.0; 4], &p, 0.05));
        assert_eq!(decode_thrust_vector_action([2.0, -7.0, 9.0], 0.1).roll, -1.0);
    }

    #[test]
    fn mixer_symmetric_and_yaw_only() {
        let p = QuadParams::default();
        let hover = mix_to_rpms(p.mass * p.gravity, &Vector3::zeros(), &p);
        assert!(!hover.infeasible);
        for w in hover.command.rpm {
            assert_relative_eq!(w, p.hover_rpm(), max_relative = 1e-12);
        }
        let yaw = mix_to_rpms(0.0, &Vector3::new(0.0, 0.0, 1e-7), &p);
        // FR/BL spin one way, FL/BR the other: only the second pair is driven.
        assert_eq!(yaw.command.rpm[0], yaw.command.rpm[1]);
        assert_eq!(yaw.command.rpm[2], yaw.command.rpm[3]);
        assert!(yaw.command.rpm[2] > yaw.command.rpm[0]);
        assert!(yaw.infeasible);
        let w = rotor_forces(&mix_to_rpms(0.05, &Vector3::new(0.0, 0.0, 1e-7), &p).command, &p);
        assert_relative_eq!(w.thrust, 0.05, max_relative = 1e-12);
        assert_relative_eq!(w.torque.z, 1e-7, max_relative = 1e-9);
    }

    #[test]
    fn level_hover_setpoint_gives_hover_rpms() {
        let p = QuadParams::default();
        let state = QuadState::at_rest(Vector3::new(0.0, 0.0, 1.0));
        let sp = AttitudeSetpoint {
            thrust_fraction: p.mass * p.gravity / p.max_total_thrust(),
            roll: 0.0,
            pitch: 0.0,
            yaw: 0.0,
        };
        let out = attitude_pid_step(&state, &sp, &PidGains::default(), &PidState::default(), &p, 0.005);
        for w in out.command.rpm {
            assert!((w - p.hover_rpm()).abs() < 1e-6);
        }
        assert!(!out.saturated);
    }

    #[test]
    fn positive_roll_error_speeds_up_left_rotors() {
        let p = QuadParams::default();
        let state = QuadState::at_rest(Vector3::new(0.0, 0.0, 1.0));
        let sp = AttitudeSetpoint { thrust_fraction: 0.45, roll: 0.2, pitch: 0.0, yaw: 0.0 };
        let out = attitude_pid_step(&state, &sp, &PidGains::default(), &PidState::default(), &p, 0.005);
        let [fr, bl, fl, br] = out.command.rpm;
        assert!(bl > fr && bl > br);
        assert!(fl > fr && fl > br);
    }

    #[test]
    fn zero_gains_give_zero_torque() {
        let gains = PidGains { roll: AxisGains::ZERO, pitch: AxisGains::ZERO, yaw: AxisGains::ZERO };
        let mut state = QuadState::at_rest(Vector3::zeros());
        state.orientation = UnitQuaternion::from_euler_angles(0.3, -0.2, 1.0);
        state.angular_velocity = Vector3::new(1.0, -2.0, 0.5);
        let sp = AttitudeSetpoint { thrust_fraction: 0.5, roll: -0.4, pitch: 0.7, yaw: -2.0 };
        let mut pid = PidState::default();
        for _ in 0..10 {
            let (torque, next) = attitude_torques(&state, &sp, &gains, &pid, 0.005);
            assert_eq!(torque, Vector3::zeros());
            pid = next;
        }
    }

    #[test]
    fn integrator_respects_clamp() {
        let gains = PidGains::default();
        let state = QuadState::at_rest(Vector3::zeros());
        let sp = AttitudeSetpoint { thrust_fraction: 0.5, roll: 1.0, pitch: -1.0, yaw: 3.0 };
        let mut pid = PidState::default();
        for _ in 0..10_000 {
            pid = attitude_torques(&state, &sp, &gains, &pid, 0.005).1;
            for (axis, g) in gains.axes().iter().enumerate() {
                assert!(pid.integral[axis].abs() <= g.integral_limit);
            }
        }
    }

    #[test]
    fn yaw_error_is_wrapped() {
        let mut state = QuadState::at_rest(Vector3::zeros());
        state.orientation = UnitQuaternion::from_euler_angles(0.0, 0.0, 3.0);
        let sp = AttitudeSetpoint { thrust_fraction: 0.5, roll: 0.0, pitch: 0.0, yaw: -3.0 };
        let (_, pid) = attitude_torques(&state, &sp, &PidGains::default(), &PidState::default(), 0.005);
        assert_relative_eq!(pid.last_error[2], 2.0 * std::f64::consts::PI - 6.0, epsilon = 1e-12);
    }

    #[test]
    fn default_gains_recover_from_roll_offset() {
        let p = QuadParams::default();
        let gains = PidGains::default();
        let mut state = QuadState::at_rest(Vector3::new(0.0, 0.0, 1.0));
        state.orientation = UnitQuaternion::from_euler_angles(5f64.to_radians(), 0.0, 0.0);
        let sp = AttitudeSetpoint {
            thrust_fraction: p.mass * p.gravity / p.max_total_thrust(),
            roll: 0.0,
            pitch: 0.0,
            yaw: 0.0,
        };
        let mut pid = PidState::default();
        for _ in 0..200 {
            let out = attitude_pid_step(&state, &sp, &gains, &pid, &p, p.physics_dt);
            assert!(!out.saturated);
            pid = out.state;
            state = step_dynamics(&state, &out.command, &p).unwrap();
        }
        assert!(state.euler_angles()[0].abs() < 1f64.to_radians());
    }

    #[test]
    fn action_space_parse() {
        assert_eq!("rpm".parse::<ActionSpace>(), Ok(ActionSpace::Rpm));
        assert_eq!("thrust_vector".parse::<ActionSpace>(), Ok(ActionSpace::ThrustVector));
        assert!("torque".parse::<ActionSpace>().is_err());
    }
}
