pub mod control;
pub mod error;
pub mod flat;
pub mod models;
pub mod qp;
pub mod rotation;
pub mod sim;

pub use error::{Error, Result};
