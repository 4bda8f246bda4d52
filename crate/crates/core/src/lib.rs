//! Estimation, inference and simulation for balanced two-way crossed
//! mixed-effect models with interaction.

pub mod analysis;
#[cfg(feature = "oracle")]
pub mod cli;
pub mod design;
pub mod error;
pub mod fit;
pub mod inference;
pub mod kron;
pub mod ml;
pub mod numdiff;
#[cfg(feature = "oracle")]
pub mod oracle;
pub mod params;
pub mod reml;
pub mod report;
pub mod sim;
pub mod stats;
#[cfg(feature = "oracle")]
pub mod validate;

pub use error::{Error, Result};
