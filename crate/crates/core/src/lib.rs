//! Joint cache placement and radio/compute resource allocation for a
//! multi-location mobile-edge-computing cell.

pub mod baselines;
pub mod config;
pub mod dl;
pub mod energy;
pub mod error;
pub mod harness;
pub mod scenario;
pub mod seed;
pub mod solver;
pub mod special;

pub use energy::{CachingDecision, EnergyBreakdown, ResourceAllocation};
pub use error::{Error, Result};
pub use scenario::{Scenario, ScenarioConfig, ScenarioSampler};
