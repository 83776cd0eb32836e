//! Rabies transmission model: simulation, reproduction numbers, optimal
//! control, sensitivity analysis and calibration.

pub mod calibrate;
pub mod cli;
pub mod config;
pub mod control;
pub mod error;
pub mod integrate;
pub mod model;
pub mod optctl;
pub mod repro;
pub mod sensitivity;

pub use control::{ControlPath, StrategyMask};
pub use error::{Error, Result};
pub use integrate::{TimeGrid, Trajectory};
pub use model::{ControlConst, ParamSet, StateVec};
