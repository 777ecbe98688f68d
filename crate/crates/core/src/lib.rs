pub mod data;
pub mod distributions;
pub mod error;
pub mod harness;
pub mod inference;
pub mod layers;
pub mod network;
pub mod numerics;
pub mod optim;

pub use error::{Error, Result};
