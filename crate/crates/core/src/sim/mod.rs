//! Deterministic 2D driving world with traffic lights, stop signs, scripted
//! actors, kinematic ego dynamics and dual-modality rasterizers.

mod dynamics;
mod labels;
mod raster;
mod route;
mod world;

pub use dynamics::{step_dynamics, BRAKE_DECEL, MAX_ACCEL, MAX_SPEED, MAX_STEER_ANGLE};
pub use labels::{ground_truth, FrameLabels, LightClass};
pub use raster::{rasterize, RasterGrid, RasterPair, FRONT_CHANNELS, RASTER_SIZE, TOPDOWN_CHANNELS};
pub use route::{Feature, RouteError, RouteSpec, VehicleBehavior, ROUTE_FORMAT_VERSION};
pub use world::{
    Actor, ActorKind, EpisodeStatus, GoverningLight, LightPhase, TraceFrame, World, WorldTrace,
};

/// Simulation tick length in seconds.
pub const TICK_DT: f64 = 0.1;
/// Ticks between dataset frames / model inferences (frame interval 0.5 s).
pub const TICKS_PER_FRAME: u32 = 5;
/// Seconds between dataset frames.
pub const FRAME_DT: f64 = TICK_DT * TICKS_PER_FRAME as f64;
/// Wheelbase of the kinematic bicycle.
pub const WHEELBASE: f64 = 2.5;
/// Ego footprint (full extents, meters).
pub const EGO_LENGTH: f64 = 4.5;
pub const EGO_WIDTH: f64 = 2.0;
/// A light governs the ego while its stop line is within this many meters
/// ahead along the route.
pub const LIGHT_RANGE: f64 = 30.0;
/// A stop sign is "in frame" within this many meters ahead.
pub const SIGN_VISIBLE_RANGE: f64 = 25.0;

/// World-frame pose; heading is normalized into (-pi, pi].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            heading: normalize_angle(heading),
        }
    }

    /// World point into this pose's frame (x forward, y left).
    pub fn world_to_ego(&self, p: [f64; 2]) -> [f64; 2] {
        let dx = p[0] - self.x;
        let dy = p[1] - self.y;
        let (s, c) = self.heading.sin_cos();
        [dx * c + dy * s, -dx * s + dy * c]
    }

    /// Ego-frame point back to world coordinates.
    pub fn ego_to_world(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.heading.sin_cos();
        [self.x + p[0] * c - p[1] * s, self.y + p[0] * s + p[1] * c]
    }
}

/// Normalizes an angle into (-pi, pi].
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * std::f64::consts::PI);
    if r > std::f64::consts::PI {
        r -= 2.0 * std::f64::consts::PI;
    }
    r
}

/// Control input: steer in [-1, 1], throttle in [0, 1], brake in {0, 1}.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Action {
    pub steer: f64,
    pub throttle: f64,
    pub brake: bool,
}

impl Action {
    pub fn clamped(self) -> Self {
        Self {
            steer: self.steer.clamp(-1.0, 1.0),
            throttle: self.throttle.clamp(0.0, 1.0),
            brake: self.brake,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoState {
    pub pose: Pose,
    /// m/s, always >= 0.
    pub speed: f64,
    pub last_action: Action,
}

impl EgoState {
    pub fn at(pose: Pose) -> Self {
        Self {
            pose,
            speed: 0.0,
            last_action: Action::default(),
        }
    }
}

/// Oriented rectangle footprint used for collisions and rasterization.
#[derive(Debug, Clone, Copy)]
pub struct Footprint {
    pub center: [f64; 2],
    pub heading: f64,
    pub half_len: f64,
    pub half_wid: f64,
}

impl Footprint {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        let (s, c) = self.heading.sin_cos();
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        u.abs() <= self.half_len && v.abs() <= self.half_wid
    }

    fn corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.heading.sin_cos();
        let l = self.half_len;
        let w = self.half_wid;
        let rot = |u: f64, v: f64| {
            [
                self.center[0] + u * c - v * s,
                self.center[1] + u * s + v * c,
            ]
        };
        [rot(l, w), rot(l, -w), rot(-l, -w), rot(-l, w)]
    }

    /// Separating-axis overlap test for two oriented rectangles.
    pub fn overlaps(&self, other: &Footprint) -> bool {
        let ca = self.corners();
        let cb = other.corners();
        for rect in [&ca, &cb] {
            for i in 0..2 {
                let edge = [rect[i + 1][0] - rect[i][0], rect[i + 1][1] - rect[i][1]];
                let axis = [-edge[1], edge[0]];
                let project = |cs: &[[f64; 2]; 4]| {
                    let mut lo = f64::INFINITY;
                    let mut hi = f64::NEG_INFINITY;
                    for p in cs {
                        let d = p[0] * axis[0] + p[1] * axis[1];
                        lo = lo.min(d);
                        hi = hi.max(d);
                    }
                    (lo, hi)
                };
                let (alo, ahi) = project(&ca);
                let (blo, bhi) = project(&cb);
                if ahi < blo || bhi < alo {
                    return false;
                }
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ego_frame_roundtrip() {
        let pose = Pose::new(3.0, -2.0, 0.7);
        let p = [10.0, 5.0];
        let e = pose.world_to_ego(p);
        let back = pose.ego_to_world(e);
        assert!((back[0] - p[0]).abs() < 1e-12);
        assert!((back[1] - p[1]).abs() < 1e-12);
    }

    #[test]
    fn y_is_left() {
        let pose = Pose::new(0.0, 0.0, 0.0);
        let e = pose.world_to_ego([0.0, 1.0]);
        assert!(e[1] > 0.0);
    }

    #[test]
    fn rect_overlap_cases() {
        let a = Footprint {
            center: [0.0, 0.0],
            heading: 0.0,
            half_len: 2.25,
            half_wid: 1.0,
        };
        let near = Footprint {
            center: [3.0, 0.0],
            heading: 0.5,
            half_len: 2.25,
            half_wid: 1.0,
        };
        let far = Footprint {
            center: [10.0, 0.0],
            heading: 0.5,
            half_len: 2.25,
            half_wid: 1.0,
        };
        assert!(a.overlaps(&near));
        assert!(!a.overlaps(&far));
    }

    proptest! {
        #[test]
        fn normalize_angle_lands_in_range(a in -100.0f64..100.0) {
            let n = normalize_angle(a);
            prop_assert!(n > -std::f64::consts::PI && n <= std::f64::consts::PI);
        }

        #[test]
        fn normalize_angle_preserves_direction(a in -100.0f64..100.0) {
            let n = normalize_angle(a);
            prop_assert!((n.sin() - a.sin()).abs() < 1e-9);
            prop_assert!((n.cos() - a.cos()).abs() < 1e-9);
        }
    }
}
