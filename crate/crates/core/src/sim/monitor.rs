//! Analysis-only monitors. These are the only consumers, besides the physics
//! step, allowed to read ground truth and camera parameters.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::aerial::{desired_points, AerialUnit};
use crate::camera::{back_project, project, project_heading, Observation, TemplateImage};
use crate::error::{AerialError, SimError};
use crate::geometry::{apply_similarity, center, fit_similarity, PointSet, Similarity2, Vec2};
use crate::ground::GlobalMotion;
use crate::ids::{RobotId, UavId};
use crate::sim::world::WorldState;

/// Lyapunov cost and shape error of one world snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorRecord {
    pub time: f64,
    /// Sum of the per-unit costs, m^2.
    pub v: f64,
    pub v_per_uav: BTreeMap<UavId, f64>,
    /// RMS distance between the robots and the best global similarity fit of
    /// the full template, meters.
    pub shape_error: f64,
    /// Norm of the stacked global-fit error vector, meters.
    pub stack_norm: f64,
    /// Diameter of the fitted template on the ground, meters.
    pub formation_diameter: f64,
    /// Ground-frame fit of each unit's controlled subset to its template
    /// subset; scale in m/px.
    pub partial: BTreeMap<UavId, Similarity2>,
}

/// Noise-free observations of the given robots, without field-of-view culling.
pub(crate) fn exact_observations<'a, I>(world: &WorldState, uav: UavId, ids: I) -> Vec<Observation>
where
    I: IntoIterator<Item = &'a RobotId>,
{
    let u = &world.uavs[&uav];
    ids.into_iter()
        .filter_map(|id| {
            let r = world.robots.get(id)?;
            Some(Observation {
                robot_id: *id,
                image_point: project(&u.intrinsics, &u.pose, r.position),
                heading_dir: project_heading(&u.pose, r.heading),
            })
        })
        .collect()
}

/// Ground positions of unit `uav`'s desired image points.
pub fn desired_ground(
    world: &WorldState,
    template: &TemplateImage,
    uav: UavId,
) -> Result<BTreeMap<RobotId, Vec2>, AerialError> {
    let sets = &world.topology.units()[&uav];
    let unit = AerialUnit::new(uav, sets.observed.clone(), sets.controlled.clone(), template);
    let obs = exact_observations(world, uav, &sets.controlled);
    let desired = desired_points(&unit, &obs)?;
    let u = &world.uavs[&uav];
    Ok(desired
        .points
        .iter()
        .map(|(id, p)| (*id, back_project(&u.intrinsics, &u.pose, *p)))
        .collect())
}

/// Desired ground points of every unit.
pub fn all_desired_ground(
    world: &WorldState,
    template: &TemplateImage,
) -> Result<BTreeMap<UavId, BTreeMap<RobotId, Vec2>>, AerialError> {
    world
        .topology
        .units()
        .keys()
        .map(|u| desired_ground(world, template, *u).map(|d| (*u, d)))
        .collect()
}

/// Cost of unit `uav`: half the squared distance of each controlled robot to
/// its desired ground point.
pub fn unit_cost(world: &WorldState, template: &TemplateImage, uav: UavId) -> Result<f64, AerialError> {
    let desired = desired_ground(world, template, uav)?;
    Ok(0.5
        * desired
            .iter()
            .map(|(id, d)| (*d - world.robots[id].position).norm_squared())
            .sum::<f64>())
}

fn ground_fit(
    world: &WorldState,
    template: &TemplateImage,
    ids: impl IntoIterator<Item = RobotId>,
) -> Result<(Similarity2, PointSet, PointSet, Vec2), SimError> {
    let mut t = PointSet::new();
    let mut g = PointSet::new();
    for id in ids {
        let (Some(tp), Some(r)) = (template.get(id), world.robots.get(&id)) else {
            continue;
        };
        t.push(id, tp)?;
        g.push(id, r.position)?;
    }
    let (tc, _) = center(&t)?;
    let (gc, c) = center(&g)?;
    let h = fit_similarity(&tc, &gc)?;
    Ok((h, tc, gc, c))
}

pub fn cost(world: &WorldState, template: &TemplateImage) -> Result<MonitorRecord, SimError> {
    let mut v_per_uav = BTreeMap::new();
    let mut partial = BTreeMap::new();
    for (uav, sets) in world.topology.units() {
        v_per_uav.insert(*uav, unit_cost(world, template, *uav)?);
        if sets.controlled.len() >= 2 {
            let (h, ..) = ground_fit(world, template, sets.controlled.iter().copied())?;
            partial.insert(*uav, h);
        }
    }
    let v = v_per_uav.values().sum();

    let (h, tc, gc, _) = ground_fit(world, template, world.robots.keys().copied())?;
    let sq: f64 = tc
        .iter()
        .zip(gc.iter())
        .map(|((_, t), (_, g))| (apply_similarity(&h, *t) - *g).norm_squared())
        .sum();
    let n = world.robots.len().max(1) as f64;

    Ok(MonitorRecord {
        time: world.time,
        v,
        v_per_uav,
        shape_error: (sq / n).sqrt(),
        stack_norm: sq.sqrt(),
        formation_diameter: template.diameter() * h.s,
        partial,
    })
}

/// Result of comparing the finite-difference gradient of a unit's cost with
/// the closed-form `x_i - x_i^d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub finite_difference: Vec2,
    pub analytic: Vec2,
    /// `|fd - analytic| / |analytic|`, or the absolute difference when the
    /// analytic gradient vanishes.
    pub relative_error: f64,
}

pub fn gradient_check(
    world: &WorldState,
    template: &TemplateImage,
    uav: UavId,
    robot: RobotId,
    h: f64,
) -> Result<GradientCheck, SimError> {
    let controlled = world
        .topology
        .controlled(uav)
        .ok_or(AerialError::NotControlled { uav, robot })?;
    if !controlled.contains(&robot) {
        return Err(AerialError::NotControlled { uav, robot }.into());
    }
    let desired = desired_ground(world, template, uav)?;
    let analytic = world.robots[&robot].position - desired[&robot];

    let mut probe = world.clone();
    let mut eval = |offset: Vec2| -> Result<f64, SimError> {
        probe.robots.get_mut(&robot).expect("robot exists").position = world.robots[&robot].position + offset;
        Ok(unit_cost(&probe, template, uav)?)
    };
    let dx = (eval(Vec2::new(h, 0.0))? - eval(Vec2::new(-h, 0.0))?) / (2.0 * h);
    let dy = (eval(Vec2::new(0.0, h))? - eval(Vec2::new(0.0, -h))?) / (2.0 * h);
    let finite_difference = Vec2::new(dx, dy);

    let diff = (finite_difference - analytic).norm();
    let scale = analytic.norm();
    let relative_error = if scale > 1e-12 { diff / scale } else { diff };
    Ok(GradientCheck {
        finite_difference,
        analytic,
        relative_error,
    })
}

/// Average ground-truth pixels-per-meter of the units controlling `robot`.
pub fn mean_scale(world: &WorldState, robot: RobotId) -> f64 {
    let scales: Vec<f64> = world
        .topology
        .controllers(robot)
        .map(|u| world.uavs[&u].image_scale())
        .collect();
    if scales.is_empty() {
        0.0
    } else {
        scales.iter().sum::<f64>() / scales.len() as f64
    }
}

/// Sum over controlling units of `x_i^{d,j} - x_i`, in the world frame.
pub fn summed_ground_error(
    world: &WorldState,
    desired: &BTreeMap<UavId, BTreeMap<RobotId, Vec2>>,
    robot: RobotId,
) -> Vec2 {
    let x = world.robots[&robot].position;
    desired
        .values()
        .filter_map(|d| d.get(&robot))
        .fold(Vec2::ZERO, |acc, d| acc + (*d - x))
}

/// Continuous-time rate of change of the cost predicted from the fused
/// robot motions: `-k_v * sum_i rbar_i cos(alpha_m - alpha_d) |e_i|^2`.
pub fn predicted_cost_rate(
    world: &WorldState,
    desired: &BTreeMap<UavId, BTreeMap<RobotId, Vec2>>,
    motions: &BTreeMap<RobotId, GlobalMotion>,
    k_v: f64,
) -> f64 {
    motions
        .iter()
        .map(|(id, g)| {
            let e = summed_ground_error(world, desired, *id);
            if g.rho_m == 0.0 {
                return 0.0;
            }
            // v = 0 exactly when cos(alpha_m) rounds to zero
            let c = g.alpha_m.cos();
            if c.abs() < 1e-15 {
                return 0.0;
            }
            -k_v * mean_scale(world, *id) * g.misalignment().cos() * e.norm_squared()
        })
        .sum()
}
