//! Route geometry: an arc-length parameterized centerline with
//! route-anchored features (lights, stop signs, scripted actors).
//!
//! Routes load from JSON documents with this shape:
//!
//! ```json
//! {
//!   "version": 1,
//!   "road_halfwidth": 4.0,
//!   "centerline": [[0.0, 0.0], [120.0, 0.0]],
//!   "goals": [[50.0, 0.0], [120.0, 0.0]],
//!   "features": [
//!     {"type": "traffic_light", "station": 60.0, "green": 5.0, "yellow": 1.0, "red": 4.0, "offset": 0.0},
//!     {"type": "stop_sign", "station": 40.0, "zone_length": 10.0},
//!     {"type": "vehicle", "station": 80.0, "lateral": 0.0, "speed": 2.0, "behavior": "cruise"},
//!     {"type": "static", "station": 90.0, "lateral": 2.0, "half_len": 1.0, "half_wid": 1.0},
//!     {"type": "pedestrian", "station": 100.0, "side": 1.0, "walk_speed": 1.2, "trigger_distance": 15.0}
//!   ]
//! }
//! ```
//!
//! `station` is meters of arc length along the centerline. `lateral` and
//! `side` are meters along the left normal of the route tangent.

use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;
use thiserror::Error;

pub const ROUTE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RouteError {
    #[error("route {path}: {detail}")]
    Io { path: String, detail: String },
    #[error("route {path}: invalid JSON: {detail}")]
    Parse { path: String, detail: String },
    #[error("invalid route: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteSpec {
    pub version: u32,
    #[serde(default = "default_halfwidth")]
    pub road_halfwidth: f64,
    pub centerline: Vec<[f64; 2]>,
    pub goals: Vec<[f64; 2]>,
    #[serde(default)]
    pub features: Vec<Feature>,
    /// Filled at load time; not part of the document.
    #[serde(skip)]
    cum_len: Vec<f64>,
}

fn default_halfwidth() -> f64 {
    4.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Feature {
    TrafficLight {
        station: f64,
        green: f64,
        yellow: f64,
        red: f64,
        #[serde(default)]
        offset: f64,
    },
    StopSign {
        station: f64,
        #[serde(default = "default_zone")]
        zone_length: f64,
    },
    Vehicle {
        station: f64,
        #[serde(default)]
        lateral: f64,
        speed: f64,
        behavior: VehicleBehavior,
    },
    Static {
        station: f64,
        #[serde(default)]
        lateral: f64,
        #[serde(default = "default_static_half")]
        half_len: f64,
        #[serde(default = "default_static_half")]
        half_wid: f64,
    },
    Pedestrian {
        station: f64,
        /// +1 starts on the left roadside, -1 on the right.
        side: f64,
        walk_speed: f64,
        trigger_distance: f64,
    },
}

fn default_zone() -> f64 {
    10.0
}

fn default_static_half() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VehicleBehavior {
    Cruise,
    Parked,
}

impl RouteSpec {
    /// Programmatic constructor; validates and parameterizes immediately.
    pub fn build(
        centerline: Vec<[f64; 2]>,
        goals: Vec<[f64; 2]>,
        features: Vec<Feature>,
        road_halfwidth: f64,
    ) -> Result<Self, RouteError> {
        let mut r = RouteSpec {
            version: ROUTE_FORMAT_VERSION,
            road_halfwidth,
            centerline,
            goals,
            features,
            cum_len: vec![],
        };
        r.finish()?;
        Ok(r)
    }

    pub fn load(path: &Path) -> Result<Self, RouteError> {
        let text = fs::read_to_string(path).map_err(|e| RouteError::Io {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        let mut spec: RouteSpec = serde_json::from_str(&text).map_err(|e| RouteError::Parse {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        spec.finish()?;
        Ok(spec)
    }

    /// Validates invariants and builds the arc-length table.
    fn finish(&mut self) -> Result<(), RouteError> {
        if self.version != ROUTE_FORMAT_VERSION {
            return Err(RouteError::Invalid(format!(
                "version {} (expected {})",
                self.version, ROUTE_FORMAT_VERSION
            )));
        }
        if self.centerline.len() < 2 {
            return Err(RouteError::Invalid("centerline needs >= 2 points".into()));
        }
        if self.road_halfwidth <= 0.0 {
            return Err(RouteError::Invalid("road_halfwidth must be > 0".into()));
        }
        self.cum_len = Vec::with_capacity(self.centerline.len());
        self.cum_len.push(0.0);
        for w in self.centerline.windows(2) {
            let seg = dist(w[0], w[1]);
            if seg <= 1e-9 {
                return Err(RouteError::Invalid(
                    "centerline arc length must be strictly increasing".into(),
                ));
            }
            self.cum_len.push(self.cum_len.last().unwrap() + seg);
        }
        let len = self.length();
        for f in &self.features {
            let s = f.station();
            if !(0.0..=len).contains(&s) {
                return Err(RouteError::Invalid(format!(
                    "feature station {s} outside route length {len}"
                )));
            }
            if let Feature::StopSign { zone_length, .. } = f {
                if *zone_length <= 0.0 {
                    return Err(RouteError::Invalid("stop zone_length must be > 0".into()));
                }
            }
        }
        if self.goals.is_empty() {
            return Err(RouteError::Invalid("at least one goal required".into()));
        }
        Ok(())
    }

    pub fn length(&self) -> f64 {
        *self.cum_len.last().unwrap()
    }

    /// World point and tangent heading at an arc-length station
    /// (clamped to the route).
    pub fn sample(&self, station: f64) -> ([f64; 2], f64) {
        let s = station.clamp(0.0, self.length());
        // Find segment via the cumulative table.
        let mut i = match self
            .cum_len
            .binary_search_by(|v| v.partial_cmp(&s).unwrap())
        {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        };
        if i >= self.centerline.len() - 1 {
            i = self.centerline.len() - 2;
        }
        let a = self.centerline[i];
        let b = self.centerline[i + 1];
        let seg = self.cum_len[i + 1] - self.cum_len[i];
        let t = ((s - self.cum_len[i]) / seg).clamp(0.0, 1.0);
        let p = [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t];
        let heading = (b[1] - a[1]).atan2(b[0] - a[0]);
        (p, heading)
    }

    /// Arc-length station and lateral distance of the closest centerline
    /// point to `p`. Lateral is signed along the left normal.
    pub fn project(&self, p: [f64; 2]) -> (f64, f64) {
        let mut best = (0.0, f64::INFINITY, 0.0);
        for i in 0..self.centerline.len() - 1 {
            let a = self.centerline[i];
            let b = self.centerline[i + 1];
            let ab = [b[0] - a[0], b[1] - a[1]];
            let seg2 = ab[0] * ab[0] + ab[1] * ab[1];
            let t = (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / seg2).clamp(0.0, 1.0);
            let q = [a[0] + ab[0] * t, a[1] + ab[1] * t];
            let d = dist(p, q);
            if d < best.1 {
                let station = self.cum_len[i] + t * (self.cum_len[i + 1] - self.cum_len[i]);
                let seg_len = seg2.sqrt();
                let left = [-ab[1] / seg_len, ab[0] / seg_len];
                let lat = (p[0] - q[0]) * left[0] + (p[1] - q[1]) * left[1];
                best = (station, d, lat);
            }
        }
        (best.0, best.2)
    }

    /// Unsigned distance from `p` to the centerline.
    pub fn distance_to_centerline(&self, p: [f64; 2]) -> f64 {
        let (s, _) = self.project(p);
        let (q, _) = self.sample(s);
        dist(p, q)
    }

    pub fn on_road(&self, p: [f64; 2]) -> bool {
        self.distance_to_centerline(p) <= self.road_halfwidth
    }

    /// Magnitude of route curvature around a station, from the heading
    /// change over a +-2 m window.
    pub fn curvature(&self, station: f64) -> f64 {
        let ds = 2.0;
        let (_, h0) = self.sample(station - ds);
        let (_, h1) = self.sample(station + ds);
        let dh = crate::sim::normalize_angle(h1 - h0);
        (dh / (2.0 * ds)).abs()
    }

    /// First goal strictly ahead of `station`, else the last goal.
    pub fn next_goal(&self, station: f64) -> [f64; 2] {
        for g in &self.goals {
            let (gs, _) = self.project(*g);
            if gs > station + 1.0 {
                return *g;
            }
        }
        *self.goals.last().unwrap()
    }

    pub fn lights(&self) -> impl Iterator<Item = (usize, f64, f64, f64, f64, f64)> + '_ {
        self.features.iter().enumerate().filter_map(|(i, f)| {
            if let Feature::TrafficLight {
                station,
                green,
                yellow,
                red,
                offset,
            } = f
            {
                Some((i, *station, *green, *yellow, *red, *offset))
            } else {
                None
            }
        })
    }

    pub fn stop_signs(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        self.features.iter().enumerate().filter_map(|(i, f)| {
            if let Feature::StopSign {
                station,
                zone_length,
            } = f
            {
                Some((i, *station, *zone_length))
            } else {
                None
            }
        })
    }
}

impl Feature {
    pub fn station(&self) -> f64 {
        match self {
            Feature::TrafficLight { station, .. }
            | Feature::StopSign { station, .. }
            | Feature::Vehicle { station, .. }
            | Feature::Static { station, .. }
            | Feature::Pedestrian { station, .. } => *station,
        }
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}
