//! Trajectory log and its on-disk CSV layout.
//!
//! Every file has a header row and one row per logged step per entity, in the
//! column order of the row structs below:
//!
//! | file                 | row type          |
//! |----------------------|-------------------|
//! | `robots.csv`         | [`RobotRow`]      |
//! | `uavs.csv`           | [`UavRow`]        |
//! | `monitor.csv`        | [`MonitorRow`]    |
//! | `uav_monitor.csv`    | [`UavMonitorRow`] |
//! | `image.csv`          | [`ImageRow`]      |
//! | `commands.csv`       | [`CommandRow`]    |
//! | `events.csv`         | [`TopologyEvent`] |
//! | `summary.json`       | [`RunSummary`]    |

use std::fs;
use std::io;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

pub const ROBOTS_FILE: &str = "robots.csv";
pub const UAVS_FILE: &str = "uavs.csv";
pub const MONITOR_FILE: &str = "monitor.csv";
pub const UAV_MONITOR_FILE: &str = "uav_monitor.csv";
pub const IMAGE_FILE: &str = "image.csv";
pub const COMMANDS_FILE: &str = "commands.csv";
pub const EVENTS_FILE: &str = "events.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotRow {
    pub step: u64,
    pub time: f64,
    pub robot_id: u32,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub v: f64,
    pub omega: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UavRow {
    pub step: u64,
    pub time: f64,
    pub uav_id: u32,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorRow {
    pub step: u64,
    pub time: f64,
    pub v: f64,
    pub shape_error: f64,
    pub stack_norm: f64,
    pub formation_diameter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UavMonitorRow {
    pub step: u64,
    pub time: f64,
    pub uav_id: u32,
    pub v_j: f64,
    /// Ground-frame scale of the controlled subset, m/px.
    pub partial_scale: f64,
    pub partial_rotation: f64,
    pub controlled: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRow {
    pub step: u64,
    pub time: f64,
    pub uav_id: u32,
    pub robot_id: u32,
    pub u: f64,
    pub v: f64,
    pub controlled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandRow {
    pub step: u64,
    pub time: f64,
    pub uav_id: u32,
    pub robot_id: u32,
    pub rho_m: f64,
    pub alpha_m: f64,
    /// `id:distance` pairs separated by `;`.
    pub neighbors: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Initial,
    Switch,
    SwitchRejected,
    NegotiationFailed,
    ClassQWarning,
    Converged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyEvent {
    pub step: u64,
    pub time: f64,
    pub kind: EventKind,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub converged: bool,
    pub converged_at: Option<f64>,
    pub final_time: f64,
    pub steps: u64,
    pub final_shape_error: f64,
    pub final_v: f64,
    pub switches: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryLog {
    pub robots: Vec<RobotRow>,
    pub uavs: Vec<UavRow>,
    pub monitor: Vec<MonitorRow>,
    pub uav_monitor: Vec<UavMonitorRow>,
    pub images: Vec<ImageRow>,
    pub commands: Vec<CommandRow>,
    pub events: Vec<TopologyEvent>,
    pub summary: Option<RunSummary>,
}

fn to_csv<T: Serialize>(rows: &[T], headers: &[&str]) -> io::Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(headers).map_err(io::Error::other)?;
    for r in rows {
        w.serialize(r).map_err(io::Error::other)?;
    }
    w.into_inner().map_err(|e| io::Error::other(e.to_string()))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> io::Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(io::Error::other)?;
    r.deserialize().collect::<Result<Vec<T>, _>>().map_err(io::Error::other)
}

impl TrajectoryLog {
    /// Every CSV file as `(name, bytes)`, in a fixed order.
    pub fn csv_files(&self) -> io::Result<Vec<(&'static str, Vec<u8>)>> {
        Ok(vec![
            (
                ROBOTS_FILE,
                to_csv(&self.robots, &["step", "time", "robot_id", "x", "y", "heading", "v", "omega"])?,
            ),
            (
                UAVS_FILE,
                to_csv(&self.uavs, &["step", "time", "uav_id", "x", "y", "z", "yaw", "vx", "vy", "vz"])?,
            ),
            (
                MONITOR_FILE,
                to_csv(
                    &self.monitor,
                    &["step", "time", "v", "shape_error", "stack_norm", "formation_diameter"],
                )?,
            ),
            (
                UAV_MONITOR_FILE,
                to_csv(
                    &self.uav_monitor,
                    &["step", "time", "uav_id", "v_j", "partial_scale", "partial_rotation", "controlled"],
                )?,
            ),
            (
                IMAGE_FILE,
                to_csv(&self.images, &["step", "time", "uav_id", "robot_id", "u", "v", "controlled"])?,
            ),
            (
                COMMANDS_FILE,
                to_csv(
                    &self.commands,
                    &["step", "time", "uav_id", "robot_id", "rho_m", "alpha_m", "neighbors"],
                )?,
            ),
            (EVENTS_FILE, to_csv(&self.events, &["step", "time", "kind", "detail"])?),
        ])
    }

    pub fn write_dir(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        for (name, bytes) in self.csv_files()? {
            fs::write(dir.join(name), bytes)?;
        }
        if let Some(summary) = &self.summary {
            let json = serde_json::to_string_pretty(summary).map_err(io::Error::other)?;
            fs::write(dir.join(SUMMARY_FILE), json + "\n")?;
        }
        Ok(())
    }

    pub fn switches(&self) -> usize {
        self.events.iter().filter(|e| e.kind == EventKind::Switch).count()
    }
}
