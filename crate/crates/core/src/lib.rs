//! Librational dynamics and parametric feedback cooling of an optically
//! levitated nanodumbbell.

pub mod analytics;
pub mod checks;
pub mod config;
pub mod constants;
pub mod ensemble;
pub mod error;
pub mod feedback;
pub mod integrator;
pub mod noise;
pub mod output;
pub mod physics;
pub mod scenarios;
pub mod simulation;
pub mod spectral;
pub mod stats;
pub mod thermal;

pub use error::{Error, Result};
