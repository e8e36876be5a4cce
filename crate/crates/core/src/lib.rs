//! Formation-shape control of unicycle ground robots from one or more
//! uncalibrated downward-looking aerial cameras.
//!
//! Each aerial unit fits the best similarity between a template image and the
//! robots it sees, and sends every robot it controls a goal vector in pixels.
//! Robots seen by several units combine the vectors using scale ratios built
//! from inter-robot image distances, so no camera calibration or shared frame
//! is needed. The crate also contains the simulator used to exercise the
//! controller, its monitors and the scenario file format.

pub mod aerial;
pub mod camera;
pub mod error;
pub mod geometry;
pub mod ground;
pub mod ids;
pub mod scenario;
pub mod sim;
pub mod topology;

pub use error::{AerialError, GeometryError, GroundError, ScenarioError, SimError, TopologyError};
pub use geometry::{Similarity2, Vec2};
pub use ids::{RobotId, UavId};
pub use scenario::Scenario;
pub use sim::{SimConfig, Simulation};
