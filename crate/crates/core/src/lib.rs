pub mod apps;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod grid;
pub mod gt;
pub mod inference;
pub mod network;
pub mod plot;
pub mod tensor;

pub use error::{Error, Result};
