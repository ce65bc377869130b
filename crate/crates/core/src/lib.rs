//! Planar multibody simulation of robots driven by linear elastic actuators,
//! with an energy-equivalent lumped-mass actuator realization, an analytical
//! reference model, parameter identification and MJCF export.

pub mod engine;
pub mod equivalence;
pub mod error;
pub mod harness;
pub mod ident;
pub mod leg;
pub mod math;
pub mod mjcf;
pub mod model;
pub mod ode;
pub mod oracle;
pub mod schedule;
pub mod skeleton;
pub mod trajectory;

pub use error::{Error, Result};
