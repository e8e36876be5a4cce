//! Simulated perception for downward-facing cameras over a planar ground.
//!
//! A camera looking straight down at a plane maps ground points to pixels by
//! a pure similarity: rotate by the negated yaw and scale by focal/height.
//! This module is the only place, together with the simulator physics and
//! monitors, that reads [`CameraIntrinsics`] or [`CameraPose`]. Controllers
//! only ever see [`Observation`]s and [`ImageFrame`]s.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geometry::{normalize_angle, Vec2};
use crate::ids::RobotId;

/// Lowest height a camera pose may take, in meters.
pub const MIN_HEIGHT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    /// Focal length in pixels.
    pub focal: f64,
    pub principal_point: Vec2,
    /// Half width and half height of the image, in pixels.
    pub image_half_extent: Vec2,
}

impl CameraIntrinsics {
    pub fn is_valid(&self) -> bool {
        self.focal > 0.0
            && self.focal.is_finite()
            && self.principal_point.is_finite()
            && self.image_half_extent.x > 0.0
            && self.image_half_extent.y > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    /// Camera position in meters; `z` is the height above the ground plane.
    pub position: [f64; 3],
    /// Rotation about the vertical axis, in `[-pi, pi)`.
    pub yaw: f64,
}

impl CameraPose {
    pub fn new(x: f64, y: f64, height: f64, yaw: f64) -> Self {
        Self {
            position: [x, y, height],
            yaw: normalize_angle(yaw),
        }
    }

    pub fn ground_position(&self) -> Vec2 {
        Vec2::new(self.position[0], self.position[1])
    }

    pub fn height(&self) -> f64 {
        self.position[2]
    }

    /// Pixels per meter on the ground plane for these intrinsics.
    pub fn image_scale(&self, intr: &CameraIntrinsics) -> f64 {
        intr.focal / self.height()
    }
}

/// One robot as a camera sees it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub robot_id: RobotId,
    pub image_point: Vec2,
    /// Unit vector along the robot heading, in image axes.
    pub heading_dir: Vec2,
}

/// Geometry of the image raster as the aerial unit knows it from its own
/// images: the image center, half extents and the safety margin. Carries no
/// calibration or pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageFrame {
    pub center: Vec2,
    pub half_extent: Vec2,
    /// Pixel buffer inside the border.
    pub margin: f64,
}

impl ImageFrame {
    pub fn from_intrinsics(intr: &CameraIntrinsics, margin: f64) -> Self {
        Self {
            center: intr.principal_point,
            half_extent: intr.image_half_extent,
            margin,
        }
    }

    /// Half extents of the area inside the margin.
    pub fn usable_half_extent(&self) -> Vec2 {
        Vec2::new(
            (self.half_extent.x - self.margin).max(0.0),
            (self.half_extent.y - self.margin).max(0.0),
        )
    }

    pub fn contains(&self, p: Vec2, margin: f64) -> bool {
        let d = p - self.center;
        d.x.abs() <= self.half_extent.x - margin && d.y.abs() <= self.half_extent.y - margin
    }

    /// Chebyshev-style offset of `p` from the center, normalized so the
    /// margin boundary sits at 1.
    pub fn normalized_offset(&self, p: Vec2) -> f64 {
        let u = self.usable_half_extent();
        let d = p - self.center;
        (d.x.abs() / u.x).max(d.y.abs() / u.y)
    }

    /// Euclidean distance of `p` from the center over the usable radius.
    pub fn normalized_radius(&self, p: Vec2) -> f64 {
        let u = self.usable_half_extent();
        (p - self.center).norm() / u.x.min(u.y)
    }
}

/// Desired-shape template: robot id to pixel position, at arbitrary scale.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TemplateImage {
    pub points: BTreeMap<RobotId, Vec2>,
}

impl TemplateImage {
    pub fn new(points: BTreeMap<RobotId, Vec2>) -> Self {
        Self { points }
    }

    pub fn get(&self, id: RobotId) -> Option<Vec2> {
        self.points.get(&id).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = RobotId> + '_ {
        self.points.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Template restricted to `ids`; ids missing from the template are skipped.
    pub fn restrict<'a, I>(&self, ids: I) -> TemplateImage
    where
        I: IntoIterator<Item = &'a RobotId>,
    {
        TemplateImage {
            points: ids
                .into_iter()
                .filter_map(|id| self.points.get(id).map(|p| (*id, *p)))
                .collect(),
        }
    }

    /// True when at least three points are present and they are not collinear.
    pub fn is_non_degenerate(&self) -> bool {
        let pts: Vec<Vec2> = self.points.values().copied().collect();
        if pts.len() < 3 {
            return false;
        }
        let scale = self.diameter().max(f64::MIN_POSITIVE);
        let base = pts[0];
        let Some(far) = pts
            .iter()
            .copied()
            .max_by(|a, b| (*a - base).norm().total_cmp(&(*b - base).norm()))
        else {
            return false;
        };
        let axis = far - base;
        if axis.norm() < 1e-12 * scale {
            return false;
        }
        pts.iter()
            .any(|p| axis.cross(*p - base).abs() / axis.norm() > 1e-9 * scale)
    }

    /// Largest pairwise distance, in pixels.
    pub fn diameter(&self) -> f64 {
        let pts: Vec<Vec2> = self.points.values().copied().collect();
        let mut best: f64 = 0.0;
        for (i, a) in pts.iter().enumerate() {
            for b in &pts[i + 1..] {
                best = best.max(a.distance(*b));
            }
        }
        best
    }
}

/// Pixel position of a ground point.
pub fn project(intr: &CameraIntrinsics, pose: &CameraPose, ground: Vec2) -> Vec2 {
    let offset = (ground - pose.ground_position()).rotate(-pose.yaw);
    intr.principal_point + offset * pose.image_scale(intr)
}

/// Ground point seen at pixel `image`. Inverse of [`project`].
pub fn back_project(intr: &CameraIntrinsics, pose: &CameraPose, image: Vec2) -> Vec2 {
    let offset = ((image - intr.principal_point) / pose.image_scale(intr)).rotate(pose.yaw);
    pose.ground_position() + offset
}

/// Image-axes unit vector of a ground heading.
pub fn project_heading(pose: &CameraPose, heading: f64) -> Vec2 {
    Vec2::from_angle(heading - pose.yaw)
}

/// Observations of every robot whose projection lies inside the image shrunk
/// by `fov_margin` pixels, ordered by robot id.
pub fn observe<I>(
    intr: &CameraIntrinsics,
    pose: &CameraPose,
    world_robots: I,
    fov_margin: f64,
) -> Vec<Observation>
where
    I: IntoIterator<Item = (RobotId, Vec2, f64)>,
{
    let frame = ImageFrame::from_intrinsics(intr, fov_margin);
    let mut out: Vec<Observation> = world_robots
        .into_iter()
        .filter_map(|(id, position, heading)| {
            let image_point = project(intr, pose, position);
            frame.contains(image_point, fov_margin).then(|| Observation {
                robot_id: id,
                image_point,
                heading_dir: project_heading(pose, heading),
            })
        })
        .collect();
    out.sort_by_key(|o| o.robot_id);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn intr(focal: f64) -> CameraIntrinsics {
        CameraIntrinsics {
            focal,
            principal_point: Vec2::new(320.0, 240.0),
            image_half_extent: Vec2::new(320.0, 240.0),
        }
    }

    #[test]
    fn point_under_camera_hits_principal_point() {
        let pose = CameraPose::new(3.0, -2.0, 7.0, 0.8);
        let p = project(&intr(500.0), &pose, Vec2::new(3.0, -2.0));
        assert!((p - Vec2::new(320.0, 240.0)).norm() < 1e-12);
    }

    #[test]
    fn scale_is_focal_over_height() {
        let pose = CameraPose::new(0.0, 0.0, 10.0, 0.0);
        let p = project(&intr(500.0), &pose, Vec2::new(1.0, 0.0));
        assert!((p - Vec2::new(370.0, 240.0)).norm() < 1e-12);
    }

    #[test]
    fn distance_ratios_preserved() {
        let pose = CameraPose::new(1.3, -0.7, 4.2, -2.3);
        let i = intr(812.0);
        let g = [Vec2::new(0.1, 0.2), Vec2::new(-3.0, 1.5), Vec2::new(2.2, -0.4)];
        let p: Vec<Vec2> = g.iter().map(|x| project(&i, &pose, *x)).collect();
        let ground_ratio = g[0].distance(g[1]) / g[1].distance(g[2]);
        let image_ratio = p[0].distance(p[1]) / p[1].distance(p[2]);
        assert!((ground_ratio - image_ratio).abs() < 1e-9);
    }

    #[test]
    fn back_projection_inverts_projection() {
        let pose = CameraPose::new(-4.0, 2.0, 6.5, 2.9);
        let i = intr(377.0);
        let g = Vec2::new(-1.25, 3.5);
        assert!((back_project(&i, &pose, project(&i, &pose, g)) - g).norm() < 1e-12);
    }

    #[test]
    fn heading_examples() {
        let h = project_heading(&CameraPose::new(0.0, 0.0, 1.0, 0.0), 0.0);
        assert!((h - Vec2::new(1.0, 0.0)).norm() < 1e-15);
        let h = project_heading(&CameraPose::new(0.0, 0.0, 1.0, PI / 2.0), PI / 2.0);
        assert!((h - Vec2::new(1.0, 0.0)).norm() < 1e-15);
        for (yaw, heading) in [(0.3, -2.0), (-3.0, 1.0), (2.5, 2.5)] {
            let pose = CameraPose::new(0.0, 0.0, 1.0, yaw);
            let h = project_heading(&pose, heading);
            assert!((h.norm() - 1.0).abs() < 1e-12);
            let diff = normalize_angle(h.angle() - heading);
            assert!((diff - normalize_angle(-pose.yaw)).abs() < 1e-12);
        }
    }

    #[test]
    fn observe_filters_by_margin() {
        let pose = CameraPose::new(0.0, 0.0, 10.0, 0.0);
        let i = intr(500.0);
        assert!(observe(&i, &pose, Vec::new(), 32.0).is_empty());

        // 50 px/m: x half extent 320 px minus 32 px margin leaves 5.76 m
        let robots = vec![
            (RobotId(3), Vec2::new(0.0, 0.0), 0.0),
            (RobotId(1), Vec2::new(5.7, 0.0), 0.0),
            (RobotId(2), Vec2::new(5.8, 0.0), 0.0),
            (RobotId(4), Vec2::new(0.0, -4.5), 0.0),
        ];
        let obs = observe(&i, &pose, robots, 32.0);
        let ids: Vec<RobotId> = obs.iter().map(|o| o.robot_id).collect();
        assert_eq!(ids, vec![RobotId(1), RobotId(3)]);
        assert_eq!(obs[1].image_point, Vec2::new(320.0, 240.0));
    }

    #[test]
    fn template_degeneracy() {
        let line = TemplateImage::new(
            (0..4)
                .map(|i| (RobotId(i), Vec2::new(i as f64, 2.0 * i as f64)))
                .collect(),
        );
        assert!(!line.is_non_degenerate());
        let tri = TemplateImage::new(
            [(0, (0.0, 0.0)), (1, (1.0, 0.0)), (2, (0.0, 1.0))]
                .into_iter()
                .map(|(i, (x, y))| (RobotId(i), Vec2::new(x, y)))
                .collect(),
        );
        assert!(tri.is_non_degenerate());
        assert!((tri.diameter() - 2f64.sqrt()).abs() < 1e-15);
    }
}
