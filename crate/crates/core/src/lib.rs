//! Simulation, identification and control of a pneumatic muscle actuator
//! modeled as a single-DOF mass with Bouc-Wen hysteresis.

pub mod error;
pub mod integrator;
pub mod model;
pub mod signals;

pub use error::{Error, Result};
pub use integrator::{simulate, step_rk4, SimClock, Trajectory};
pub use model::{PlantParams, PlantState};
pub use signals::{PressureSignal, ReferenceSignal};
pub mod identification;
pub mod optim;
pub mod metrics;
pub mod control;
pub mod scenario;
pub mod experiments;
