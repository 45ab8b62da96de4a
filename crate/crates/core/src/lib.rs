//! Joint eco-driving, battery thermal management and charging-stop planning
//! for battery electric vehicles.
//!
//! A trip alternates between driving segments, modelled over distance, and
//! charging stops, modelled over normalized time. [`transcription`] turns a
//! [`Scenario`] into a nonlinear program, [`solver`] solves it, and
//! [`validator`] replays the result in the time domain to check it.

pub mod ad;
pub mod dynamics;
pub mod error;
pub mod models;
pub mod pareto;
pub mod plan;
pub mod reference;
pub mod scenario;
pub mod solution;
pub mod solver;
pub mod transcription;
pub mod validator;

pub use error::{Error, Result};
pub use scenario::{load_scenario, Scenario};
pub use solution::TripSolution;
