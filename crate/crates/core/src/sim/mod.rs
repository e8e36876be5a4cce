//! Deterministic fixed-step closed-loop engine.
//!
//! One step runs, in order: every aerial unit observes its robots and computes
//! commands; every robot fuses its inbox into a unicycle control; robots and
//! aerial units integrate with explicit Euler; topology changes are applied at
//! the step boundary; the monitors evaluate the new state.

pub mod log;
pub mod monitor;
pub mod world;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::aerial::{compute_commands, uav_velocity, AerialUnit, DesiredPoints, RobotCommand};
use crate::camera::{observe, Observation, TemplateImage};
use crate::error::SimError;
use crate::geometry::{normalize_angle, Vec2};
use crate::ground::{robot_control, ControlOutput, Gains, GlobalMotion, Inbox};
use crate::ids::{RobotId, UavId};
use crate::topology::{check_conditions, propose_topology, request_switch, Class, SwitchPolicy, TopologyState};

use self::log::{
    CommandRow, EventKind, ImageRow, MonitorRow, RobotRow, RunSummary, TopologyEvent, TrajectoryLog, UavMonitorRow,
    UavRow,
};
use self::monitor::{cost, MonitorRecord};
use self::world::WorldState;

/// A scripted topology change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledSwitch {
    pub time: f64,
    pub controlled: BTreeMap<UavId, BTreeSet<RobotId>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub enum SwitchingMode {
    /// The initial topology never changes.
    #[default]
    Fixed,
    /// Switches requested at fixed times; each is retried every step until
    /// the dwell time allows it.
    Scripted(Vec<ScheduledSwitch>),
    /// Controlled sets follow field-of-view membership, negotiated pairwise
    /// along the edges of the current control graph.
    EventDriven,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvergenceCriterion {
    /// Shape error threshold as a fraction of the formation diameter.
    pub tolerance: f64,
    /// How long the error must stay below threshold, seconds.
    pub window: f64,
    /// Stop the run once converged.
    pub stop: bool,
}

impl Default for ConvergenceCriterion {
    fn default() -> Self {
        Self {
            tolerance: 1e-3,
            window: 1.0,
            stop: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub max_time: f64,
    pub gains: Gains,
    pub switching: SwitchingMode,
    pub policy: SwitchPolicy,
    /// Standard deviation of additive Gaussian pixel noise on image points.
    pub pixel_noise_std: f64,
    pub seed: u64,
    /// Steps between a command being computed and the robot acting on it.
    pub command_delay_steps: usize,
    pub convergence: ConvergenceCriterion,
    /// Record every n-th step in the trajectory log.
    pub log_every: u64,
    /// Aerial units never descend below this height, meters.
    pub min_height: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            max_time: 60.0,
            gains: Gains::default(),
            switching: SwitchingMode::Fixed,
            policy: SwitchPolicy::default(),
            pixel_noise_std: 0.0,
            seed: 0,
            command_delay_steps: 0,
            convergence: ConvergenceCriterion::default(),
            log_every: 10,
            min_height: 1.0,
        }
    }
}

/// Everything computed from one world snapshot before integration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ControlPass {
    /// Full-image observations per unit (no safety margin).
    pub observations: BTreeMap<UavId, Vec<Observation>>,
    pub desired: BTreeMap<UavId, DesiredPoints>,
    pub commands: Vec<RobotCommand>,
    pub motions: BTreeMap<RobotId, GlobalMotion>,
    pub controls: BTreeMap<RobotId, ControlOutput>,
}

/// Runs perception, aerial control and ground fusion on `world` without
/// changing it. `noise` adds Gaussian pixel noise with the given deviation.
pub fn control_pass(
    world: &WorldState,
    template: &TemplateImage,
    gains: &Gains,
    mut noise: Option<(&mut ChaCha8Rng, f64)>,
) -> Result<ControlPass, SimError> {
    let mut pass = ControlPass::default();
    let mut inboxes: BTreeMap<RobotId, Inbox> = BTreeMap::new();

    for (uav, sets) in world.topology.units() {
        let state = &world.uavs[uav];
        let mut obs = observe(&state.intrinsics, &state.pose, world.robot_triples(), 0.0);
        if let Some((rng, std)) = noise.as_mut() {
            if *std > 0.0 {
                let dist = Normal::new(0.0, *std).expect("finite noise deviation");
                for o in &mut obs {
                    o.image_point += Vec2::new(dist.sample(*rng), dist.sample(*rng));
                }
            }
        }
        if !sets.controlled.is_empty() {
            let unit = AerialUnit::new(*uav, sets.observed.clone(), sets.controlled.clone(), template);
            let (desired, commands) = compute_commands(&unit, &obs)?;
            for c in &commands {
                inboxes
                    .entry(c.robot_id)
                    .or_insert_with(|| Inbox::new(c.robot_id))
                    .push(c.clone())?;
            }
            pass.desired.insert(*uav, desired);
            pass.commands.extend(commands);
        }
        pass.observations.insert(*uav, obs);
    }

    for id in world.robots.keys() {
        match inboxes.get(id) {
            Some(inbox) => {
                let (g, out) = robot_control(inbox, gains)?;
                pass.motions.insert(*id, g);
                pass.controls.insert(*id, out);
            }
            None => {
                pass.controls.insert(*id, ControlOutput::default());
            }
        }
    }
    Ok(pass)
}

/// Outcome of a single [`Simulation::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    /// Control pass evaluated on the state at the start of the step.
    pub pass: ControlPass,
    /// Controls actually applied (differs from `pass.controls` under delay).
    pub applied: BTreeMap<RobotId, ControlOutput>,
    /// World-frame aerial velocities `[vx, vy, vz]`.
    pub uav_velocities: BTreeMap<UavId, [f64; 3]>,
    pub events: Vec<TopologyEvent>,
    /// Monitor of the state at the end of the step.
    pub monitor: MonitorRecord,
    pub switched: bool,
}

pub struct Simulation {
    config: SimConfig,
    template: TemplateImage,
    team: BTreeSet<RobotId>,
    world: WorldState,
    rng: ChaCha8Rng,
    delayed: VecDeque<BTreeMap<RobotId, ControlOutput>>,
    next_scheduled: usize,
    below_tolerance_since: Option<f64>,
    converged_at: Option<f64>,
    last_failure: Option<String>,
    events: Vec<TopologyEvent>,
    monitor: MonitorRecord,
    name: String,
}

impl Simulation {
    pub fn new(world: WorldState, template: TemplateImage, config: SimConfig) -> Result<Self, SimError> {
        let team = world.team();
        let class = check_conditions(&world.topology, &team);
        if class.class == Class::Invalid {
            return Err(SimError::TopologyInvalid {
                time: world.time,
                reason: class
                    .conditions
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| !c.satisfied)
                    .map(|(i, c)| format!("TC{} {}", i + 1, c.detail))
                    .collect::<Vec<_>>()
                    .join("; "),
            });
        }
        let mut events = vec![TopologyEvent {
            step: world.step,
            time: world.time,
            kind: EventKind::Initial,
            detail: describe(&world.topology, class.class),
        }];
        if class.class == Class::ClassQ {
            ::log::warn!("initial topology is only locally stable (class Q)");
            events.push(TopologyEvent {
                step: world.step,
                time: world.time,
                kind: EventKind::ClassQWarning,
                detail: describe(&world.topology, class.class),
            });
        }
        let monitor = cost(&world, &template)?;
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            template,
            team,
            world,
            delayed: VecDeque::new(),
            next_scheduled: 0,
            below_tolerance_since: None,
            converged_at: None,
            last_failure: None,
            events,
            monitor,
            name: String::new(),
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn template(&self) -> &TemplateImage {
        &self.template
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    /// Monitor of the current state.
    pub fn monitor(&self) -> &MonitorRecord {
        &self.monitor
    }

    pub fn events(&self) -> &[TopologyEvent] {
        &self.events
    }

    pub fn converged_at(&self) -> Option<f64> {
        self.converged_at
    }

    pub fn max_steps(&self) -> u64 {
        (self.config.max_time / self.config.dt).round() as u64
    }

    pub fn step(&mut self) -> Result<StepReport, SimError> {
        let dt = self.config.dt;
        let noise = (self.config.pixel_noise_std > 0.0).then_some((&mut self.rng, self.config.pixel_noise_std));
        let pass = control_pass(&self.world, &self.template, &self.config.gains, noise)?;

        let applied = if self.config.command_delay_steps == 0 {
            pass.controls.clone()
        } else {
            self.delayed.push_back(pass.controls.clone());
            if self.delayed.len() > self.config.command_delay_steps {
                self.delayed.pop_front().unwrap_or_default()
            } else {
                BTreeMap::new()
            }
        };

        let mut uav_velocities = BTreeMap::new();
        for (uav, sets) in self.world.topology.units() {
            let state = &self.world.uavs[uav];
            let unit = AerialUnit::new(*uav, sets.observed.clone(), sets.controlled.clone(), &self.template);
            let body = uav_velocity(
                &unit,
                &pass.observations[uav],
                &self.world.topology.shared_pairs(*uav),
                &state.frame(),
                &state.coverage,
                self.world.time,
            );
            let horizontal = Vec2::new(body[0], body[1]).rotate(state.pose.yaw);
            uav_velocities.insert(*uav, [horizontal.x, horizontal.y, body[2]]);
        }

        for (id, robot) in self.world.robots.iter_mut() {
            let out = applied.get(id).copied().unwrap_or_default();
            robot.position += Vec2::from_angle(robot.heading) * (out.v * dt);
            robot.heading = normalize_angle(robot.heading + out.omega * dt);
            if !robot.position.is_finite() || !robot.heading.is_finite() {
                return Err(SimError::NonFinite(*id, self.world.time));
            }
        }
        for (uav, state) in self.world.uavs.iter_mut() {
            let v = uav_velocities.get(uav).copied().unwrap_or([0.0; 3]);
            let p = &mut state.pose.position;
            p[0] += v[0] * dt;
            p[1] += v[1] * dt;
            p[2] = (p[2] + v[2] * dt).max(self.config.min_height);
            state.pose.yaw = normalize_angle(state.pose.yaw + state.yaw_rate * dt);
        }
        self.world.step += 1;
        self.world.time = self.world.step as f64 * dt;

        let (events, switched) = self.update_topology()?;
        self.events.extend(events.iter().cloned());

        self.monitor = cost(&self.world, &self.template)?;
        self.track_convergence();

        Ok(StepReport {
            pass,
            applied,
            uav_velocities,
            events,
            monitor: self.monitor.clone(),
            switched,
        })
    }

    fn event(&self, kind: EventKind, detail: String) -> TopologyEvent {
        TopologyEvent {
            step: self.world.step,
            time: self.world.time,
            kind,
            detail,
        }
    }

    fn update_topology(&mut self) -> Result<(Vec<TopologyEvent>, bool), SimError> {
        let now = self.world.time;
        let mut events = Vec::new();
        let proposal = match &self.config.switching {
            SwitchingMode::Fixed => None,
            SwitchingMode::Scripted(schedule) => match schedule.get(self.next_scheduled) {
                Some(s) if s.time <= now + 1e-9 => {
                    let observed = self.observed_sets(0.0);
                    let units = s
                        .controlled
                        .iter()
                        .map(|(u, c)| {
                            (
                                *u,
                                crate::topology::UnitSets {
                                    observed: observed.get(u).cloned().unwrap_or_default(),
                                    controlled: c.clone(),
                                },
                            )
                        })
                        .collect();
                    Some(TopologyState::new(units, now))
                }
                _ => None,
            },
            SwitchingMode::EventDriven => {
                let observed = self.observed_sets(0.0);
                let candidates = self.observed_sets_with_margin();
                let centrality = self.centrality();
                match propose_topology(&self.world.topology, &observed, &candidates, &centrality, &self.team, now) {
                    Ok(p) => {
                        self.last_failure = None;
                        (!p.same_assignment(&self.world.topology)).then_some(p)
                    }
                    Err(e) => {
                        let msg = e.to_string();
                        if self.last_failure.as_deref() != Some(msg.as_str()) {
                            ::log::debug!("t={now:.3}: {msg}");
                            events.push(self.event(EventKind::NegotiationFailed, msg.clone()));
                            self.last_failure = Some(msg);
                        }
                        None
                    }
                }
            }
        };

        let Some(proposal) = proposal else {
            return Ok((events, false));
        };
        let scripted = matches!(self.config.switching, SwitchingMode::Scripted(_));
        let dwell_ok = now - self.world.topology.activation_time >= self.config.policy.min_dwell - 1e-9;
        let class = check_conditions(&proposal, &self.team);
        let accepted = request_switch(&mut self.world.topology, proposal, &self.config.policy, &self.team, now);
        if accepted {
            if scripted {
                self.next_scheduled += 1;
            }
            events.push(self.event(EventKind::Switch, describe(&self.world.topology, class.class)));
        } else if scripted && dwell_ok {
            // a scripted proposal that fails the conditions is dropped
            self.next_scheduled += 1;
            events.push(self.event(
                EventKind::SwitchRejected,
                format!("scheduled topology is class {}:\n{class}", class.class),
            ));
        }
        Ok((events, accepted))
    }

    fn observed_sets(&self, margin: f64) -> BTreeMap<UavId, BTreeSet<RobotId>> {
        self.world
            .uavs
            .iter()
            .map(|(u, s)| {
                let obs = observe(&s.intrinsics, &s.pose, self.world.robot_triples(), margin);
                (*u, obs.iter().map(|o| o.robot_id).collect())
            })
            .collect()
    }

    fn observed_sets_with_margin(&self) -> BTreeMap<UavId, BTreeSet<RobotId>> {
        self.world
            .uavs
            .iter()
            .map(|(u, s)| {
                let obs = observe(&s.intrinsics, &s.pose, self.world.robot_triples(), s.fov_margin);
                (*u, obs.iter().map(|o| o.robot_id).collect())
            })
            .collect()
    }

    fn centrality(&self) -> BTreeMap<(UavId, RobotId), f64> {
        let mut out = BTreeMap::new();
        for (u, s) in &self.world.uavs {
            let frame = s.frame();
            for o in observe(&s.intrinsics, &s.pose, self.world.robot_triples(), 0.0) {
                out.insert((*u, o.robot_id), frame.normalized_radius(o.image_point));
            }
        }
        out
    }

    fn track_convergence(&mut self) {
        let m = &self.monitor;
        let below = m.shape_error < self.config.convergence.tolerance * m.formation_diameter;
        if below {
            let since = *self.below_tolerance_since.get_or_insert(self.world.time);
            if self.converged_at.is_none() && self.world.time - since >= self.config.convergence.window - 1e-9 {
                self.converged_at = Some(since);
                let e = self.event(EventKind::Converged, format!("shape error {:.3e} m", m.shape_error));
                self.events.push(e);
            }
        } else {
            self.below_tolerance_since = None;
            self.converged_at = None;
        }
    }

    pub fn is_converged(&self) -> bool {
        self.converged_at.is_some()
    }

    /// Steps until `max_time`, or until convergence when the criterion says
    /// to stop. The run always ends on the logging grid.
    pub fn run(&mut self) -> Result<TrajectoryLog, SimError> {
        let mut log = TrajectoryLog::default();
        let max_steps = self.max_steps();
        let every = self.config.log_every.max(1);
        loop {
            let on_grid = self.world.step.is_multiple_of(every);
            let done = self.world.step >= max_steps || (self.config.convergence.stop && self.is_converged() && on_grid);
            if done {
                if on_grid {
                    let pass = control_pass(&self.world, &self.template, &self.config.gains, None).unwrap_or_default();
                    let zero = BTreeMap::new();
                    record(&mut log, &self.world, &pass, &pass.controls, &zero, &self.monitor);
                }
                break;
            }
            if on_grid {
                let snapshot = self.world.clone();
                let before = self.monitor.clone();
                let report = self.step()?;
                record(
                    &mut log,
                    &snapshot,
                    &report.pass,
                    &report.applied,
                    &report.uav_velocities,
                    &before,
                );
            } else {
                self.step()?;
            }
        }
        log.events = self.events.clone();
        log.summary = Some(RunSummary {
            scenario: self.name.clone(),
            converged: self.is_converged(),
            converged_at: self.converged_at,
            final_time: self.world.time,
            steps: self.world.step,
            final_shape_error: self.monitor.shape_error,
            final_v: self.monitor.v,
            switches: log.switches(),
        });
        Ok(log)
    }
}

fn describe(t: &TopologyState, class: Class) -> String {
    let sets: Vec<String> = t
        .units()
        .iter()
        .map(|(u, s)| {
            let ids: Vec<String> = s.controlled.iter().map(|r| r.0.to_string()).collect();
            format!("uav {}: [{}]", u.0, ids.join(" "))
        })
        .collect();
    format!("class {class}; {}", sets.join("; "))
}

fn record(
    log: &mut TrajectoryLog,
    world: &WorldState,
    pass: &ControlPass,
    applied: &BTreeMap<RobotId, ControlOutput>,
    uav_velocities: &BTreeMap<UavId, [f64; 3]>,
    monitor: &MonitorRecord,
) {
    let (step, time) = (world.step, world.time);
    for (id, r) in &world.robots {
        let out = applied.get(id).copied().unwrap_or_default();
        log.robots.push(RobotRow {
            step,
            time,
            robot_id: id.0,
            x: r.position.x,
            y: r.position.y,
            heading: r.heading,
            v: out.v,
            omega: out.omega,
        });
    }
    for (id, u) in &world.uavs {
        let v = uav_velocities.get(id).copied().unwrap_or([0.0; 3]);
        log.uavs.push(UavRow {
            step,
            time,
            uav_id: id.0,
            x: u.pose.position[0],
            y: u.pose.position[1],
            z: u.pose.position[2],
            yaw: u.pose.yaw,
            vx: v[0],
            vy: v[1],
            vz: v[2],
        });
    }
    log.monitor.push(MonitorRow {
        step,
        time,
        v: monitor.v,
        shape_error: monitor.shape_error,
        stack_norm: monitor.stack_norm,
        formation_diameter: monitor.formation_diameter,
    });
    for (uav, sets) in world.topology.units() {
        let h = monitor.partial.get(uav);
        log.uav_monitor.push(UavMonitorRow {
            step,
            time,
            uav_id: uav.0,
            v_j: monitor.v_per_uav.get(uav).copied().unwrap_or(0.0),
            partial_scale: h.map_or(f64::NAN, |h| h.s),
            partial_rotation: h.map_or(f64::NAN, |h| h.phi),
            controlled: sets.controlled.len(),
        });
        for o in pass.observations.get(uav).into_iter().flatten() {
            log.images.push(ImageRow {
                step,
                time,
                uav_id: uav.0,
                robot_id: o.robot_id.0,
                u: o.image_point.x,
                v: o.image_point.y,
                controlled: sets.controlled.contains(&o.robot_id),
            });
        }
    }
    for c in &pass.commands {
        let neighbors: Vec<String> = c
            .neighbor_distances
            .iter()
            .map(|(id, d)| format!("{}:{d}", id.0))
            .collect();
        log.commands.push(CommandRow {
            step,
            time,
            uav_id: c.uav_id.0,
            robot_id: c.robot_id.0,
            rho_m: c.rho_m,
            alpha_m: c.alpha_m,
            neighbors: neighbors.join(";"),
        });
    }
}
