//! Desk-scale driving imitation lab.
//!
//! A deterministic 2D driving world produces dual-modality raster
//! observations (a camera-like front view and a LiDAR-like top-down view)
//! together with privileged labels. A rule-based expert demonstrates routes,
//! a small fusion network is trained to predict future waypoints from the
//! rasters, and a closed-loop evaluator scores the trained policy with
//! leaderboard-style driving metrics.
//!
//! The training objective augments plain behavior cloning with differentiable
//! traffic-rule penalties (red light, stop sign, turn overspeed) combined as
//! fixed-multiplier Lagrangian terms, and with cross-semantics auxiliary
//! tasks that align the shared features of the two modalities.

pub mod autodiff;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod expert;
pub mod losses;
pub mod model;
pub mod pid;
pub mod rng;
pub mod sim;
pub mod trainer;
