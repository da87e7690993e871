//! Kinematic bicycle model.

use super::{normalize_angle, Action, EgoState, WHEELBASE};

pub const MAX_STEER_ANGLE: f64 = 0.6; // rad at steer = 1
pub const MAX_ACCEL: f64 = 3.0; // m/s^2 at throttle = 1
pub const BRAKE_DECEL: f64 = 8.0; // m/s^2
pub const MAX_SPEED: f64 = 10.0; // m/s

/// Advances the ego one step. Inputs are clamped to their bounds.
///
/// x' = x + v cos(h) dt, y' = y + v sin(h) dt,
/// h' = h + (v/L) tan(steer * MAX_STEER_ANGLE) dt,
/// v' = clamp(v + a dt, 0, MAX_SPEED) with a = throttle * MAX_ACCEL or
/// -BRAKE_DECEL when braking. The pre-update speed drives all three pose
/// updates.
pub fn step_dynamics(ego: &EgoState, action: Action, dt: f64) -> EgoState {
    debug_assert!(dt > 0.0);
    let action = action.clamped();
    let v = ego.speed;
    let h = ego.pose.heading;

    let x = ego.pose.x + v * h.cos() * dt;
    let y = ego.pose.y + v * h.sin() * dt;
    let heading = normalize_angle(h + v / WHEELBASE * (action.steer * MAX_STEER_ANGLE).tan() * dt);
    let accel = if action.brake {
        -BRAKE_DECEL
    } else {
        action.throttle * MAX_ACCEL
    };
    let speed = (v + accel * dt).clamp(0.0, MAX_SPEED);

    EgoState {
        pose: super::Pose { x, y, heading },
        speed,
        last_action: action,
    }
}
