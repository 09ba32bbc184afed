pub mod concentration;
pub mod dynamics;
pub mod hypothesis;
pub mod entropy;
pub mod error;
pub mod harness;
pub mod measures;
pub mod numerics;
pub mod observable;
pub mod risk;
pub mod tower;

pub use error::{Error, Result};
