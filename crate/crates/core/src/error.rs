use thiserror::Error;

use crate::ids::{RobotId, UavId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GeometryError {
    #[error("point set is empty")]
    EmptySet,
    #[error("template points all coincide with their centroid")]
    DegenerateTemplate,
    #[error("current points all coincide with their centroid")]
    DegenerateCurrent,
    #[error("template and current point sets list different robots")]
    IdMismatch,
    #[error("similarity fit needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("{0} appears twice in point set")]
    DuplicateId(RobotId),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AerialError {
    #[error("{uav} has no observation of controlled {robot}")]
    MissingObservation { uav: UavId, robot: RobotId },
    #[error("{uav} has no template point for {robot}")]
    MissingTemplatePoint { uav: UavId, robot: RobotId },
    #[error("{robot} is not controlled by {uav}")]
    NotControlled { uav: UavId, robot: RobotId },
    #[error("{uav}: {source}")]
    Geometry {
        uav: UavId,
        #[source]
        source: GeometryError,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GroundError {
    #[error("{robot} received no commands")]
    EmptyInbox { robot: RobotId },
    #[error("{robot}: {first} and {second} report no common neighbor")]
    NoCommonNeighbor {
        robot: RobotId,
        first: UavId,
        second: UavId,
    },
    #[error("{robot}: two commands from {uav}")]
    DuplicateCommand { robot: RobotId, uav: UavId },
    #[error("{robot}: no relative scale for ({first}, {second})")]
    MissingScale {
        robot: RobotId,
        first: UavId,
        second: UavId,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("{first} and {second} share only {count} commonly viewed robots")]
    InsufficientOverlap {
        first: UavId,
        second: UavId,
        count: usize,
    },
    #[error("{robot} is not a candidate of any aerial unit")]
    Uncovered { robot: RobotId },
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("topology at t={time:.3}s is invalid: {reason}")]
    TopologyInvalid { time: f64, reason: String },
    #[error(transparent)]
    Aerial(#[from] AerialError),
    #[error(transparent)]
    Ground(#[from] GroundError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("non-finite state for {0} at t={1:.3}s")]
    NonFinite(RobotId, f64),
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot serialize scenario: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}
