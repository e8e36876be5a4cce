//! Per-UAV control computation.
//!
//! Each aerial unit fits a least-squares similarity between its slice of the
//! template and the current image positions of the robots it controls, turns
//! the fitted template into desired image points, and sends every controlled
//! robot a motion goal expressed in that robot's own frame. Everything here
//! works in pixels of the unit's own image; nothing reads calibration or pose.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::camera::{ImageFrame, Observation, TemplateImage};
use crate::error::AerialError;
use crate::geometry::{apply_similarity, center, fit_similarity, normalize_angle, PointSet, Similarity2, Vec2};
use crate::ids::{RobotId, UavId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AerialUnit {
    pub uav_id: UavId,
    /// Robots currently in the field of view.
    pub observed: BTreeSet<RobotId>,
    /// Robots this unit sends commands to; a subset of `observed`.
    pub controlled: BTreeSet<RobotId>,
    /// Template restricted to `controlled`.
    pub template: TemplateImage,
}

impl AerialUnit {
    pub fn new(
        uav_id: UavId,
        observed: BTreeSet<RobotId>,
        controlled: BTreeSet<RobotId>,
        full_template: &TemplateImage,
    ) -> Self {
        let template = full_template.restrict(&controlled);
        Self {
            uav_id,
            observed,
            controlled,
            template,
        }
    }
}

/// Motion goal sent from one aerial unit to one robot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotCommand {
    pub uav_id: UavId,
    pub robot_id: RobotId,
    /// Goal distance in the sender's pixels.
    pub rho_m: f64,
    /// Goal angle in the robot frame, in `[-pi, pi)`. `pi` means straight
    /// ahead, `0` straight behind.
    pub alpha_m: f64,
    /// Image distances from this robot to every other robot the sender controls.
    pub neighbor_distances: Vec<(RobotId, f64)>,
}

impl RobotCommand {
    /// Goal vector in the robot frame (x along heading, y to its left).
    pub fn goal_in_robot_frame(&self) -> Vec2 {
        // alpha = pi - bearing
        Vec2::new(-self.alpha_m.cos(), self.alpha_m.sin()) * self.rho_m
    }

    pub fn neighbor_distance(&self, id: RobotId) -> Option<f64> {
        self.neighbor_distances
            .iter()
            .find(|(other, _)| *other == id)
            .map(|(_, d)| *d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesiredPoints {
    pub points: BTreeMap<RobotId, Vec2>,
    /// Fitted image similarity from the centered template to the centered
    /// current points.
    pub similarity: Similarity2,
    /// Centroid of the current image points.
    pub centroid: Vec2,
}

fn find_observation(obs: &[Observation], id: RobotId) -> Option<&Observation> {
    obs.iter().find(|o| o.robot_id == id)
}

/// Desired image positions for every robot in the unit's controlled set.
pub fn desired_points(unit: &AerialUnit, obs: &[Observation]) -> Result<DesiredPoints, AerialError> {
    let geometry = |source| AerialError::Geometry {
        uav: unit.uav_id,
        source,
    };
    let mut template = PointSet::new();
    let mut current = PointSet::new();
    for &id in &unit.controlled {
        let t = unit.template.get(id).ok_or(AerialError::MissingTemplatePoint {
            uav: unit.uav_id,
            robot: id,
        })?;
        let o = find_observation(obs, id).ok_or(AerialError::MissingObservation {
            uav: unit.uav_id,
            robot: id,
        })?;
        template.push(id, t).map_err(geometry)?;
        current.push(id, o.image_point).map_err(geometry)?;
    }

    let (template_c, _) = center(&template).map_err(geometry)?;
    let (current_c, centroid) = center(&current).map_err(geometry)?;
    let similarity = fit_similarity(&template_c, &current_c).map_err(geometry)?;
    let points = template_c
        .iter()
        .map(|(id, p)| (*id, apply_similarity(&similarity, *p) + centroid))
        .collect();
    Ok(DesiredPoints {
        points,
        similarity,
        centroid,
    })
}

/// Goal angle relative to the robot heading, from the image goal vector and
/// the image heading direction.
pub fn goal_angle(rho: Vec2, heading_dir: Vec2) -> f64 {
    let rho_m = rho.norm();
    if rho_m == 0.0 {
        return 0.0;
    }
    let unit = rho / rho_m;
    normalize_angle((-unit.cross(heading_dir)).atan2(-unit.dot(heading_dir)))
}

pub fn command_for(
    unit: &AerialUnit,
    obs: &[Observation],
    desired: &DesiredPoints,
    robot_id: RobotId,
) -> Result<RobotCommand, AerialError> {
    if !unit.controlled.contains(&robot_id) {
        return Err(AerialError::NotControlled {
            uav: unit.uav_id,
            robot: robot_id,
        });
    }
    let missing = |robot| AerialError::MissingObservation {
        uav: unit.uav_id,
        robot,
    };
    let me = find_observation(obs, robot_id).ok_or(missing(robot_id))?;
    let target = desired.points.get(&robot_id).ok_or(missing(robot_id))?;

    let rho = *target - me.image_point;
    let rho_m = rho.norm();
    let alpha_m = goal_angle(rho, me.heading_dir);

    let mut neighbor_distances = Vec::with_capacity(unit.controlled.len().saturating_sub(1));
    for &other in unit.controlled.iter().filter(|id| **id != robot_id) {
        let o = find_observation(obs, other).ok_or(missing(other))?;
        neighbor_distances.push((other, me.image_point.distance(o.image_point)));
    }

    Ok(RobotCommand {
        uav_id: unit.uav_id,
        robot_id,
        rho_m,
        alpha_m,
        neighbor_distances,
    })
}

/// Desired points and one command per controlled robot.
pub fn compute_commands(
    unit: &AerialUnit,
    obs: &[Observation],
) -> Result<(DesiredPoints, Vec<RobotCommand>), AerialError> {
    let desired = desired_points(unit, obs)?;
    let commands = unit
        .controlled
        .iter()
        .map(|id| command_for(unit, obs, &desired, *id))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((desired, commands))
}

/// Scripted circular sweep, in the unit's body frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Orbit {
    /// Horizontal speed, m/s.
    pub speed: f64,
    /// Rate at which the sweep direction turns, rad/s.
    pub turn_rate: f64,
}

/// Gains and thresholds of the field-of-view coverage rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoverageParams {
    /// Horizontal gain, (m/s) per pixel of bounding-box offset.
    pub k_xy: f64,
    /// Vertical speed magnitude, m/s.
    pub k_z: f64,
    /// Normalized offset beyond which horizontal re-centering kicks in.
    pub trigger: f64,
    /// Climb when the bounding radius exceeds this fraction of the usable radius.
    pub upper: f64,
    /// Descend when the bounding radius drops below this fraction.
    pub lower: f64,
    pub orbit: Option<Orbit>,
}

impl Default for CoverageParams {
    fn default() -> Self {
        Self {
            k_xy: 0.002,
            k_z: 0.5,
            trigger: 0.9,
            upper: 0.8,
            lower: 0.0,
            orbit: None,
        }
    }
}

/// Body-frame velocity `[vx, vy, vz]` keeping the unit's controlled robots and
/// the pairs it shares with its neighbors inside the usable image area. `x`
/// and `y` follow the image axes, `z` points up.
pub fn uav_velocity(
    unit: &AerialUnit,
    obs: &[Observation],
    shared: &BTreeMap<UavId, [RobotId; 2]>,
    frame: &ImageFrame,
    params: &CoverageParams,
    time: f64,
) -> [f64; 3] {
    let must_keep: BTreeSet<RobotId> = unit
        .controlled
        .iter()
        .copied()
        .chain(shared.values().flatten().copied())
        .collect();
    let points: Vec<Vec2> = obs
        .iter()
        .filter(|o| must_keep.contains(&o.robot_id))
        .map(|o| o.image_point)
        .collect();
    if points.is_empty() {
        return [0.0; 3];
    }

    let (mut lo, mut hi) = (points[0], points[0]);
    for p in &points {
        lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    let box_center = (lo + hi) * 0.5;

    let worst = points
        .iter()
        .map(|p| frame.normalized_offset(*p))
        .fold(0.0, f64::max);
    let mut horizontal = Vec2::ZERO;
    if worst > params.trigger {
        horizontal = (box_center - frame.center) * params.k_xy;
    } else if let Some(orbit) = params.orbit {
        horizontal = Vec2::from_angle(orbit.turn_rate * time) * orbit.speed;
    }

    let usable = frame.usable_half_extent();
    let radius = points
        .iter()
        .map(|p| p.distance(box_center))
        .fold(0.0, f64::max)
        / usable.x.min(usable.y);
    let vertical = if radius > params.upper {
        params.k_z
    } else if radius < params.lower {
        -params.k_z
    } else {
        0.0
    };

    [horizontal.x, horizontal.y, vertical]
}
