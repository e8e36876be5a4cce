use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::aerial::CoverageParams;
use crate::camera::{CameraIntrinsics, CameraPose, ImageFrame};
use crate::geometry::{normalize_angle, Vec2};
use crate::ids::{RobotId, UavId};
use crate::topology::TopologyState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub position: Vec2,
    pub heading: f64,
}

impl RobotState {
    pub fn new(position: Vec2, heading: f64) -> Self {
        Self {
            position,
            heading: normalize_angle(heading),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UavState {
    pub pose: CameraPose,
    pub intrinsics: CameraIntrinsics,
    /// Safety margin inside the image border, pixels.
    pub fov_margin: f64,
    pub coverage: CoverageParams,
    /// Scripted yaw rate, rad/s.
    pub yaw_rate: f64,
}

impl UavState {
    pub fn frame(&self) -> ImageFrame {
        ImageFrame::from_intrinsics(&self.intrinsics, self.fov_margin)
    }

    /// Pixels per meter.
    pub fn image_scale(&self) -> f64 {
        self.pose.image_scale(&self.intrinsics)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub time: f64,
    pub step: u64,
    pub robots: BTreeMap<RobotId, RobotState>,
    pub uavs: BTreeMap<UavId, UavState>,
    pub topology: TopologyState,
}

impl WorldState {
    pub fn team(&self) -> BTreeSet<RobotId> {
        self.robots.keys().copied().collect()
    }

    /// `(id, position, heading)` triples in id order, as fed to the camera model.
    pub fn robot_triples(&self) -> impl Iterator<Item = (RobotId, Vec2, f64)> + '_ {
        self.robots.iter().map(|(id, r)| (*id, r.position, r.heading))
    }

    /// Largest pairwise robot distance, meters.
    pub fn max_pairwise_distance(&self) -> f64 {
        let pts: Vec<Vec2> = self.robots.values().map(|r| r.position).collect();
        let mut best: f64 = 0.0;
        for (i, a) in pts.iter().enumerate() {
            for b in &pts[i + 1..] {
                best = best.max(a.distance(*b));
            }
        }
        best
    }
}
