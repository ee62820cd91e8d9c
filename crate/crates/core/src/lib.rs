pub mod attack;
pub mod audit;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod nn;
pub mod plot;
pub mod tensor;
pub mod train;
pub mod unlearn;

pub use error::{Error, Result};
