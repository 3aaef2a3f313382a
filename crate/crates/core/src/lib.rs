//! Simulation and loss-optimal power management for reconfigurable battery
//! packs built from individually switched cell modules.

pub mod battery;
pub mod error;
pub mod io;
pub mod optimizer;
pub mod sim;
pub mod topology;

pub use error::{Error, Result};
