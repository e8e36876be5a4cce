//! Scenario files: a single TOML document describing the template, the initial
//! team, the cameras and the run settings.
//!
//! ```toml
//! name = "triangle"
//! dt = 0.001
//! max_time = 60.0
//!
//! [gains]
//! k_v = 1.0
//! k_w = 2.0
//!
//! [switching]
//! mode = "fixed"            # fixed | scripted | event
//!
//! [[template]]
//! id = 1
//! x = 0.0
//! y = 0.0
//!
//! [[robots]]
//! id = 1
//! x = 1.0
//! y = -2.0
//! heading = 0.3
//!
//! [[uavs]]
//! id = 1
//! position = [0.0, 0.0, 10.0]
//! yaw = 0.0
//! focal = 400.0
//! half_extent = [320.0, 240.0]
//! controlled = [1, 2, 3]
//! ```
//!
//! Angles are radians, lengths meters, image quantities pixels.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aerial::CoverageParams;
use crate::camera::{observe, CameraIntrinsics, CameraPose, TemplateImage, MIN_HEIGHT};
use crate::error::ScenarioError;
use crate::geometry::Vec2;
use crate::ground::Gains;
use crate::ids::{RobotId, UavId};
use crate::sim::world::{RobotState, UavState, WorldState};
use crate::sim::{ConvergenceCriterion, ScheduledSwitch, SimConfig, Simulation, SwitchingMode};
use crate::topology::{check_conditions, Class, SwitchPolicy, TopologyClass, TopologyState, UnitSets};

fn default_dt() -> f64 {
    1e-3
}

fn default_log_every() -> u64 {
    10
}

fn default_min_height() -> f64 {
    1.0
}

fn default_min_dwell() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchingKind {
    #[default]
    Fixed,
    Scripted,
    Event,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Assignment {
    pub uav: u32,
    pub controlled: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    pub time: f64,
    pub assign: Vec<Assignment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchingSpec {
    #[serde(default)]
    pub mode: SwitchingKind,
    #[serde(default = "default_min_dwell")]
    pub min_dwell: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub schedule: Vec<ScheduleEntry>,
}

impl Default for SwitchingSpec {
    fn default() -> Self {
        Self {
            mode: SwitchingKind::Fixed,
            min_dwell: default_min_dwell(),
            schedule: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplatePoint {
    pub id: u32,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotSpec {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UavSpec {
    pub id: u32,
    /// `[x, y, height]`, meters.
    pub position: [f64; 3],
    #[serde(default)]
    pub yaw: f64,
    #[serde(default)]
    pub yaw_rate: f64,
    pub focal: f64,
    #[serde(default)]
    pub principal_point: [f64; 2],
    pub half_extent: [f64; 2],
    /// Defaults to a tenth of the smaller half extent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fov_margin: Option<f64>,
    pub controlled: Vec<u32>,
    #[serde(default)]
    pub coverage: CoverageParams,
}

impl UavSpec {
    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics {
            focal: self.focal,
            principal_point: Vec2::new(self.principal_point[0], self.principal_point[1]),
            image_half_extent: Vec2::new(self.half_extent[0], self.half_extent[1]),
        }
    }

    pub fn pose(&self) -> CameraPose {
        CameraPose::new(self.position[0], self.position[1], self.position[2], self.yaw)
    }

    pub fn margin(&self) -> f64 {
        self.fov_margin
            .unwrap_or(0.1 * self.half_extent[0].min(self.half_extent[1]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub max_time: f64,
    #[serde(default)]
    pub seed: u64,
    /// Standard deviation of pixel noise; zero disables it.
    #[serde(default)]
    pub pixel_noise_std: f64,
    #[serde(default)]
    pub command_delay_steps: usize,
    #[serde(default = "default_log_every")]
    pub log_every: u64,
    #[serde(default = "default_min_height")]
    pub min_height: f64,
    #[serde(default)]
    pub gains: Gains,
    #[serde(default)]
    pub convergence: ConvergenceCriterion,
    #[serde(default)]
    pub switching: SwitchingSpec,
    pub template: Vec<TemplatePoint>,
    pub robots: Vec<RobotSpec>,
    pub uavs: Vec<UavSpec>,
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid(msg.into())
}

fn id_set<I: IntoIterator<Item = u32>>(what: &str, ids: I) -> Result<BTreeSet<u32>, ScenarioError> {
    let mut out = BTreeSet::new();
    for id in ids {
        if !out.insert(id) {
            return Err(invalid(format!("duplicate {what} id {id}")));
        }
    }
    Ok(out)
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text)?;
        s.check_structure()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String, ScenarioError> {
        Ok(toml::to_string(self)?)
    }

    /// Id consistency, positive quantities and a usable template. Topology
    /// conditions are checked separately by [`Scenario::classify`].
    pub fn check_structure(&self) -> Result<(), ScenarioError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid("dt must be positive"));
        }
        if !(self.max_time >= 0.0 && self.max_time.is_finite()) {
            return Err(invalid("max_time must be nonnegative"));
        }
        if self.pixel_noise_std.is_nan() || self.pixel_noise_std < 0.0 {
            return Err(invalid("pixel_noise_std must be nonnegative"));
        }
        let template = id_set("template", self.template.iter().map(|t| t.id))?;
        let robots = id_set("robot", self.robots.iter().map(|r| r.id))?;
        let uavs = id_set("uav", self.uavs.iter().map(|u| u.id))?;
        if robots.is_empty() {
            return Err(invalid("no robots"));
        }
        if uavs.is_empty() {
            return Err(invalid("no uavs"));
        }
        if let Some(id) = robots.difference(&template).next() {
            return Err(invalid(format!("robot {id} has no template point")));
        }
        if let Some(id) = template.difference(&robots).next() {
            return Err(invalid(format!("template point {id} has no robot")));
        }
        for r in &self.robots {
            if !(r.x.is_finite() && r.y.is_finite() && r.heading.is_finite()) {
                return Err(invalid(format!("robot {} has a non-finite pose", r.id)));
            }
        }
        for u in &self.uavs {
            if !u.intrinsics().is_valid() {
                return Err(invalid(format!("uav {} has invalid intrinsics", u.id)));
            }
            if !u.position.iter().all(|c| c.is_finite()) || u.position[2] < MIN_HEIGHT {
                return Err(invalid(format!("uav {} must be at least {MIN_HEIGHT} m above ground", u.id)));
            }
            let controlled = id_set("controlled robot", u.controlled.iter().copied())
                .map_err(|e| invalid(format!("uav {}: {e}", u.id)))?;
            if let Some(id) = controlled.difference(&robots).next() {
                return Err(invalid(format!("uav {} controls unknown robot {id}", u.id)));
            }
        }
        for entry in &self.switching.schedule {
            for a in &entry.assign {
                if !uavs.contains(&a.uav) {
                    return Err(invalid(format!("schedule at t={} names unknown uav {}", entry.time, a.uav)));
                }
                if let Some(id) = a.controlled.iter().find(|id| !robots.contains(id)) {
                    return Err(invalid(format!(
                        "schedule at t={} gives uav {} unknown robot {id}",
                        entry.time, a.uav
                    )));
                }
            }
        }
        if self.switching.mode == SwitchingKind::Scripted && self.switching.schedule.is_empty() {
            return Err(invalid("scripted switching needs a schedule"));
        }
        if !self.template_image().is_non_degenerate() {
            return Err(invalid("template points are degenerate"));
        }
        Ok(())
    }

    pub fn template_image(&self) -> TemplateImage {
        TemplateImage::new(
            self.template
                .iter()
                .map(|t| (RobotId(t.id), Vec2::new(t.x, t.y)))
                .collect(),
        )
    }

    pub fn team(&self) -> BTreeSet<RobotId> {
        self.robots.iter().map(|r| RobotId(r.id)).collect()
    }

    fn robot_states(&self) -> BTreeMap<RobotId, RobotState> {
        self.robots
            .iter()
            .map(|r| (RobotId(r.id), RobotState::new(Vec2::new(r.x, r.y), r.heading)))
            .collect()
    }

    /// Topology at `t = 0`, with observed sets from the full camera images.
    pub fn initial_topology(&self) -> TopologyState {
        let robots = self.robot_states();
        let units = self
            .uavs
            .iter()
            .map(|u| {
                let obs = observe(
                    &u.intrinsics(),
                    &u.pose(),
                    robots.iter().map(|(id, r)| (*id, r.position, r.heading)),
                    0.0,
                );
                (
                    UavId(u.id),
                    UnitSets {
                        observed: obs.iter().map(|o| o.robot_id).collect(),
                        controlled: u.controlled.iter().map(|id| RobotId(*id)).collect(),
                    },
                )
            })
            .collect();
        TopologyState::new(units, 0.0)
    }

    /// Controlled robots that the camera does not see at `t = 0`.
    pub fn unseen_controlled(&self) -> Vec<(UavId, RobotId)> {
        let robots = self.robot_states();
        let mut out = Vec::new();
        for u in &self.uavs {
            let seen: BTreeSet<RobotId> = observe(
                &u.intrinsics(),
                &u.pose(),
                robots.iter().map(|(id, r)| (*id, r.position, r.heading)),
                0.0,
            )
            .iter()
            .map(|o| o.robot_id)
            .collect();
            for id in &u.controlled {
                if !seen.contains(&RobotId(*id)) {
                    out.push((UavId(u.id), RobotId(*id)));
                }
            }
        }
        out
    }

    pub fn classify(&self) -> TopologyClass {
        check_conditions(&self.initial_topology(), &self.team())
    }

    pub fn config(&self) -> SimConfig {
        let policy = SwitchPolicy {
            min_dwell: self.switching.min_dwell,
        };
        let switching = match self.switching.mode {
            SwitchingKind::Fixed => SwitchingMode::Fixed,
            SwitchingKind::Event => SwitchingMode::EventDriven,
            SwitchingKind::Scripted => SwitchingMode::Scripted(
                self.switching
                    .schedule
                    .iter()
                    .map(|e| ScheduledSwitch {
                        time: e.time,
                        controlled: e
                            .assign
                            .iter()
                            .map(|a| (UavId(a.uav), a.controlled.iter().map(|id| RobotId(*id)).collect()))
                            .collect(),
                    })
                    .collect(),
            ),
        };
        SimConfig {
            dt: self.dt,
            max_time: self.max_time,
            gains: self.gains,
            switching,
            policy,
            pixel_noise_std: self.pixel_noise_std,
            seed: self.seed,
            command_delay_steps: self.command_delay_steps,
            convergence: self.convergence,
            log_every: self.log_every,
            min_height: self.min_height,
        }
    }

    /// Initial world after checking that the starting topology is usable.
    pub fn initial_world(&self) -> Result<WorldState, ScenarioError> {
        self.check_structure()?;
        if let Some((uav, robot)) = self.unseen_controlled().first() {
            return Err(invalid(format!("{uav} controls {robot}, which is outside its image at t=0")));
        }
        let topology = self.initial_topology();
        let class = check_conditions(&topology, &self.team());
        if class.class == Class::Invalid {
            let mut reasons: Vec<String> = class
                .conditions
                .iter()
                .enumerate()
                .filter(|(_, c)| !c.satisfied)
                .map(|(i, c)| format!("TC{} violated ({})", i + 1, c.detail))
                .collect();
            if !class.uncontrolled.is_empty() {
                let ids: Vec<String> = class.uncontrolled.iter().map(|r| r.to_string()).collect();
                reasons.push(format!("uncontrolled: {}", ids.join(", ")));
            }
            return Err(invalid(format!("initial topology is invalid: {}", reasons.join("; "))));
        }
        let uavs = self
            .uavs
            .iter()
            .map(|u| {
                (
                    UavId(u.id),
                    UavState {
                        pose: u.pose(),
                        intrinsics: u.intrinsics(),
                        fov_margin: u.margin(),
                        coverage: u.coverage,
                        yaw_rate: u.yaw_rate,
                    },
                )
            })
            .collect();
        Ok(WorldState {
            time: 0.0,
            step: 0,
            robots: self.robot_states(),
            uavs,
            topology,
        })
    }

    pub fn simulation(&self) -> Result<Simulation, ScenarioError> {
        let world = self.initial_world()?;
        Ok(Simulation::new(world, self.template_image(), self.config())?.with_name(self.name.clone()))
    }
}

/// The scenarios shipped in the repository's `scenarios/` directory.
pub mod bundled {
    pub const TRIANGLE: &str = include_str!("../../../scenarios/triangle.toml");
    pub const STAR: &str = include_str!("../../../scenarios/star.toml");
    pub const SWITCHING: &str = include_str!("../../../scenarios/switching.toml");
}
