mod config;
mod methods;

pub use config::{MethodId, MethodParams, UnlearnConfig};
pub use methods::{compose_two_phase, distance_push, ssd_factors, unlearn, PhaseBudget, UnlearnResult};
