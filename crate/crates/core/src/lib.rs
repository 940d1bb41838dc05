//! Ornstein–Uhlenbeck processes out of equilibrium: closed-form steady-state
//! signatures (area production, entropy production, geometry), simulation,
//! trajectory estimators and tests for broken detailed balance.

pub mod cli;
pub mod error;
pub mod estimate;
pub mod hypotest;
pub mod linalg;
pub mod model;
pub mod simulate;
pub mod twodim;

pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};
pub use model::{OuModel, SteadyState};
pub use simulate::{Init, Scheme, SimConfig, Trajectory};
pub use twodim::StandardParams2D;
