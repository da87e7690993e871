//! Privileged per-frame labels: segmentation targets, light and stop-sign
//! classes, stop-line position and the heading delta to the next frame.

use super::raster::{probe_point, FRONT_WINDOW, RASTER_SIZE, TOPDOWN_WINDOW};
use super::world::{ActorKind, LightPhase, World};
use super::{normalize_angle, SIGN_VISIBLE_RANGE};

pub const SEG_CLASSES: usize = 4;
pub const SEG_DRIVABLE: usize = 0;
pub const SEG_NON_DRIVABLE: usize = 1;
pub const SEG_DYNAMIC: usize = 2;
pub const SEG_OTHER: usize = 3;

/// Traffic-light class affecting the ego, in label order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LightClass {
    Red,
    Yellow,
    Green,
    None,
}

impl LightClass {
    pub fn index(self) -> usize {
        match self {
            LightClass::Red => 0,
            LightClass::Yellow => 1,
            LightClass::Green => 2,
            LightClass::None => 3,
        }
    }

    pub fn one_hot(self) -> [f32; 4] {
        let mut v = [0.0; 4];
        v[self.index()] = 1.0;
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameLabels {
    /// Pixel-major one-hot segmentation of the front window, (H*W) x 4.
    pub seg_front: Vec<f32>,
    /// Pixel-major one-hot segmentation of the top-down window, (H*W) x 4.
    pub seg_topdown: Vec<f32>,
    pub light_class: LightClass,
    /// One-hot {absent, present} for a stop sign ahead in frame.
    pub stop_sign_present: bool,
    /// Forward distance to the governing stop line in the ego frame;
    /// present exactly when `light_class != None`.
    pub stop_line_ego: Option<f64>,
    pub in_stop_zone: bool,
    /// Heading change to the successor frame, normalized into (-pi, pi].
    pub heading_delta: f64,
    /// Next sparse goal in the ego frame.
    pub goal_ego: [f64; 2],
}

impl FrameLabels {
    pub fn stop_sign_one_hot(&self) -> [f32; 2] {
        if self.stop_sign_present {
            [0.0, 1.0]
        } else {
            [1.0, 0.0]
        }
    }
}

/// Labels for `world`, with `next_world` being the successor frame used for
/// the heading delta.
pub fn ground_truth(world: &World, next_world: &World) -> FrameLabels {
    let ego_s = world.ego_station();

    let light = world.governing_light();
    let (light_class, stop_line_ego) = match light {
        Some(g) => {
            let class = match g.phase {
                LightPhase::Red => LightClass::Red,
                LightPhase::Yellow => LightClass::Yellow,
                LightPhase::Green => LightClass::Green,
            };
            let rel = world.ego.pose.world_to_ego(g.stop_line);
            (class, Some(rel[0]))
        }
        None => (LightClass::None, None),
    };

    let stop_sign_present = world
        .stop_signs()
        .iter()
        .any(|(_, station, _)| (0.0..=SIGN_VISIBLE_RANGE).contains(&(station - ego_s)));

    FrameLabels {
        seg_front: segment(world, true),
        seg_topdown: segment(world, false),
        light_class,
        stop_sign_present,
        stop_line_ego,
        in_stop_zone: world.active_stop_zone().is_some(),
        heading_delta: normalize_angle(
            next_world.ego.pose.heading - world.ego.pose.heading,
        ),
        goal_ego: world.goal_ego(),
    }
}

/// One-hot class per cell by majority over the 2x2 subsamples; ties break
/// toward dynamic > other > drivable > non-drivable.
fn segment(world: &World, front: bool) -> Vec<f32> {
    let window = if front { FRONT_WINDOW } else { TOPDOWN_WINDOW };
    let ego = world.ego.pose;
    let mut out = vec![0.0f32; RASTER_SIZE * RASTER_SIZE * SEG_CLASSES];
    for row in 0..RASTER_SIZE {
        for col in 0..RASTER_SIZE {
            let mut votes = [0u32; SEG_CLASSES];
            for s in window.samples(row, col) {
                let hit = probe_point(world, ego.ego_to_world(s));
                let class = match hit.actor {
                    Some(ActorKind::Vehicle) | Some(ActorKind::Pedestrian) => SEG_DYNAMIC,
                    Some(ActorKind::Static) => SEG_OTHER,
                    None if hit.on_road => SEG_DRIVABLE,
                    None => SEG_NON_DRIVABLE,
                };
                votes[class] += 1;
            }
            let max = *votes.iter().max().unwrap();
            let order = [SEG_DYNAMIC, SEG_OTHER, SEG_DRIVABLE, SEG_NON_DRIVABLE];
            let best = order.iter().copied().find(|c| votes[*c] == max).unwrap();
            let pixel = row * RASTER_SIZE + col;
            out[pixel * SEG_CLASSES + best] = 1.0;
        }
    }
    out
}
