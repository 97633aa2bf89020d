//! Multi-rate closed-loop simulation, race campaigns and result files.

mod campaign;
mod config;
mod output;
mod race;
mod sim;

pub use campaign::*;
pub use config::*;
pub use output::*;
pub use race::*;
pub use sim::*;
