//! Multirotor control stack: an MPPI trajectory generator, a geometric
//! baseline tracking controller, and L1 adaptive augmentation, flown against
//! a rigid-body plant with injectable model uncertainty.

pub mod baseline;
pub mod course;
pub mod error;
pub mod harness;
pub mod l1;
pub mod math;
pub mod mppi;
pub mod plant;

pub use error::{Error, Result};
