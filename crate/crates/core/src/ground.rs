//! Ground-robot side: fuse commands from several cameras and turn the fused
//! goal into unicycle velocities.
//!
//! Each camera measures in its own pixel scale. A robot recovers the ratio of
//! two cameras' scales from the image distances both report to a robot they
//! both control, then reweights each goal so every term enters the sum in a
//! common (averaged) scale.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::aerial::RobotCommand;
use crate::error::GroundError;
use crate::geometry::{normalize_angle, Vec2};
use crate::ids::{RobotId, UavId};

/// Commands one robot received in a step, at most one per aerial unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inbox {
    pub robot_id: RobotId,
    pub commands: Vec<RobotCommand>,
}

impl Inbox {
    pub fn new(robot_id: RobotId) -> Self {
        Self {
            robot_id,
            commands: Vec::new(),
        }
    }

    pub fn push(&mut self, cmd: RobotCommand) -> Result<(), GroundError> {
        if self.commands.iter().any(|c| c.uav_id == cmd.uav_id) {
            return Err(GroundError::DuplicateCommand {
                robot: self.robot_id,
                uav: cmd.uav_id,
            });
        }
        self.commands.push(cmd);
        Ok(())
    }

    pub fn senders(&self) -> impl Iterator<Item = UavId> + '_ {
        self.commands.iter().map(|c| c.uav_id)
    }
}

/// Scale ratios `r_kj = r_k / r_j` keyed by `(k, j)`.
pub type ScaleRatios = BTreeMap<(UavId, UavId), f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalMotion {
    /// Fused goal vector in the robot frame, in mixed pixel scale.
    pub rho_g: Vec2,
    pub rho_m: f64,
    pub alpha_m: f64,
    /// Either 0 (drive backwards) or pi (drive forwards).
    pub alpha_d: f64,
}

impl GlobalMotion {
    pub fn from_vector(rho_g: Vec2) -> Self {
        let rho_m = rho_g.norm();
        let alpha_m = if rho_m == 0.0 {
            0.0
        } else {
            normalize_angle(PI - rho_g.y.atan2(rho_g.x))
        };
        let alpha_d = if alpha_m.abs() <= FRAC_PI_2 { 0.0 } else { PI };
        Self {
            rho_g,
            rho_m,
            alpha_m,
            alpha_d,
        }
    }

    /// `alpha_m - alpha_d` wrapped into `[-pi, pi)`; its magnitude never
    /// exceeds pi/2.
    pub fn misalignment(&self) -> f64 {
        normalize_angle(self.alpha_m - self.alpha_d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Gains {
    pub k_v: f64,
    pub k_w: f64,
    /// Goals shorter than this many pixels stop the robot.
    pub b_th: f64,
}

impl Default for Gains {
    fn default() -> Self {
        Self {
            k_v: 1.0,
            k_w: 2.0,
            b_th: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlOutput {
    pub v: f64,
    /// Counterclockwise positive.
    pub omega: f64,
}

pub fn relative_scales(inbox: &Inbox) -> Result<ScaleRatios, GroundError> {
    let mut out = ScaleRatios::new();
    for j in &inbox.commands {
        for k in &inbox.commands {
            if j.uav_id == k.uav_id {
                out.insert((k.uav_id, j.uav_id), 1.0);
                continue;
            }
            // smallest common neighbor id
            let common = j
                .neighbor_distances
                .iter()
                .filter(|(id, _)| *id != inbox.robot_id)
                .filter_map(|(id, dj)| k.neighbor_distance(*id).map(|dk| (*id, *dj, dk)))
                .filter(|(_, dj, dk)| *dj > 0.0 && *dk > 0.0)
                .min_by_key(|(id, _, _)| *id);
            let (_, dj, dk) = common.ok_or(GroundError::NoCommonNeighbor {
                robot: inbox.robot_id,
                first: j.uav_id,
                second: k.uav_id,
            })?;
            out.insert((k.uav_id, j.uav_id), dk / dj);
        }
    }
    Ok(out)
}

/// Fuses every received goal into a single robot-frame vector.
pub fn combine(inbox: &Inbox, scales: &ScaleRatios) -> Result<GlobalMotion, GroundError> {
    if inbox.commands.is_empty() {
        return Err(GroundError::EmptyInbox {
            robot: inbox.robot_id,
        });
    }
    let mut sum = Vec2::ZERO;
    for j in &inbox.commands {
        let mut weight = 0.0;
        for k in &inbox.commands {
            weight += scales
                .get(&(k.uav_id, j.uav_id))
                .ok_or(GroundError::MissingScale {
                    robot: inbox.robot_id,
                    first: k.uav_id,
                    second: j.uav_id,
                })?;
        }
        sum += j.goal_in_robot_frame() * weight;
    }
    Ok(GlobalMotion::from_vector(sum / inbox.commands.len() as f64))
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn control_law(g: &GlobalMotion, gains: &Gains) -> ControlOutput {
    if g.rho_m < gains.b_th || g.rho_m == 0.0 {
        return ControlOutput::default();
    }
    // cos(+-pi/2) is ~6e-17 in floating point, not zero
    let c = g.alpha_m.cos();
    let c = if c.abs() < 1e-15 { 0.0 } else { c };
    ControlOutput {
        v: -gains.k_v * sign(c) * g.rho_m,
        omega: -gains.k_w * g.misalignment(),
    }
}

/// Full robot-side pipeline for one inbox.
pub fn robot_control(inbox: &Inbox, gains: &Gains) -> Result<(GlobalMotion, ControlOutput), GroundError> {
    let scales = relative_scales(inbox)?;
    let g = combine(inbox, &scales)?;
    Ok((g, control_law(&g, gains)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cmd(uav: u32, robot: u32, rho: Vec2, neighbors: &[(u32, f64)]) -> RobotCommand {
        // rho given in robot frame
        let rho_m = rho.norm();
        let alpha_m = if rho_m == 0.0 {
            0.0
        } else {
            normalize_angle(PI - rho.angle())
        };
        RobotCommand {
            uav_id: UavId(uav),
            robot_id: RobotId(robot),
            rho_m,
            alpha_m,
            neighbor_distances: neighbors.iter().map(|(i, d)| (RobotId(*i), *d)).collect(),
        }
    }

    fn inbox(cmds: Vec<RobotCommand>) -> Inbox {
        let mut b = Inbox::new(cmds[0].robot_id);
        for c in cmds {
            b.push(c).unwrap();
        }
        b
    }

    #[test]
    fn single_camera_scales() {
        let b = inbox(vec![cmd(3, 1, Vec2::new(1.0, 2.0), &[(2, 10.0)])]);
        let s = relative_scales(&b).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[&(UavId(3), UavId(3))], 1.0);
        let g = combine(&b, &s).unwrap();
        assert!((g.rho_g - Vec2::new(1.0, 2.0)).norm() < 1e-12);
    }

    #[test]
    fn ratio_from_common_neighbor() {
        let b = inbox(vec![
            cmd(1, 1, Vec2::new(1.0, 0.0), &[(2, 10.0), (5, 3.0)]),
            cmd(2, 1, Vec2::new(2.0, 0.0), &[(2, 20.0), (7, 1.0)]),
        ]);
        let s = relative_scales(&b).unwrap();
        assert_eq!(s[&(UavId(2), UavId(1))], 2.0);
        assert_eq!(s[&(UavId(1), UavId(2))], 0.5);
        let g = combine(&b, &s).unwrap();
        assert!((g.rho_g - Vec2::new(3.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn tie_break_uses_smallest_common_id() {
        let b = inbox(vec![
            cmd(1, 1, Vec2::new(1.0, 0.0), &[(4, 10.0), (2, 10.0)]),
            cmd(2, 1, Vec2::new(1.0, 0.0), &[(4, 50.0), (2, 30.0)]),
        ]);
        let s = relative_scales(&b).unwrap();
        assert_eq!(s[&(UavId(2), UavId(1))], 3.0);
    }

    #[test]
    fn missing_common_neighbor_is_an_error() {
        let b = inbox(vec![
            cmd(1, 1, Vec2::new(1.0, 0.0), &[(2, 10.0)]),
            cmd(2, 1, Vec2::new(1.0, 0.0), &[(3, 10.0)]),
        ]);
        assert!(matches!(
            relative_scales(&b),
            Err(GroundError::NoCommonNeighbor { .. })
        ));
    }

    #[test]
    fn empty_and_duplicate_inbox() {
        let b = Inbox::new(RobotId(4));
        assert!(matches!(
            combine(&b, &ScaleRatios::new()),
            Err(GroundError::EmptyInbox { .. })
        ));
        let mut b = inbox(vec![cmd(1, 1, Vec2::new(1.0, 0.0), &[])]);
        assert!(b.push(cmd(1, 1, Vec2::new(1.0, 0.0), &[])).is_err());
    }

    #[test]
    fn zero_commands_zero_motion() {
        let b = inbox(vec![
            cmd(1, 1, Vec2::ZERO, &[(2, 10.0)]),
            cmd(2, 1, Vec2::ZERO, &[(2, 15.0)]),
        ]);
        let (g, out) = robot_control(&b, &Gains::default()).unwrap();
        assert_eq!(g.rho_m, 0.0);
        assert_eq!(g.alpha_m, 0.0);
        assert_eq!(out, ControlOutput::default());
    }

    #[test]
    fn control_law_examples() {
        let gains = Gains {
            k_v: 1.5,
            k_w: 2.0,
            b_th: 0.0,
        };
        let zero = GlobalMotion::from_vector(Vec2::ZERO);
        assert_eq!(control_law(&zero, &gains), ControlOutput::default());

        // goal to the robot's side
        let side = GlobalMotion {
            rho_g: Vec2::new(0.0, 1.0),
            rho_m: 1.0,
            alpha_m: FRAC_PI_2,
            alpha_d: 0.0,
        };
        let out = control_law(&side, &gains);
        assert_eq!(out.v, 0.0);
        assert!((out.omega - 2.0 * (0.0 - FRAC_PI_2)).abs() < 1e-15);

        // goal straight ahead
        let ahead = GlobalMotion {
            rho_g: Vec2::new(2.0, 0.0),
            rho_m: 2.0,
            alpha_m: PI,
            alpha_d: PI,
        };
        let out = control_law(&ahead, &gains);
        assert_eq!(out.v, 2.0 * 1.5);
        assert_eq!(out.omega, 0.0);
        // the normalized form of the same goal behaves identically
        let out2 = control_law(&GlobalMotion::from_vector(Vec2::new(2.0, 0.0)), &gains);
        assert_eq!(out2.v, 3.0);
        assert!(out2.omega.abs() < 1e-15);
    }

    #[test]
    fn stopping_threshold() {
        let gains = Gains {
            b_th: 0.5,
            ..Gains::default()
        };
        let g = GlobalMotion::from_vector(Vec2::new(0.3, 0.1));
        assert_eq!(control_law(&g, &gains), ControlOutput::default());
    }

    #[test]
    fn alpha_d_boundary_and_misalignment_bound() {
        let g = GlobalMotion::from_vector(Vec2::new(0.0, -1.0));
        // bearing -pi/2 -> alpha = 3pi/2 -> -pi/2
        assert!((g.alpha_m + FRAC_PI_2).abs() < 1e-15);
        assert_eq!(g.alpha_d, 0.0);
        for k in 0..360 {
            let a = k as f64 * PI / 180.0;
            let g = GlobalMotion::from_vector(Vec2::from_angle(a) * 3.0);
            assert!((-PI..PI).contains(&g.alpha_m));
            assert!(g.misalignment().abs() <= FRAC_PI_2 + 1e-15);
            assert!(g.misalignment().cos() >= -1e-15);
        }
    }
}
