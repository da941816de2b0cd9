pub mod attacks;
pub mod binary;
pub mod conv;
pub mod error;
pub mod factorized;
pub mod harness;
mod linalg;
pub mod nn;
pub mod tensor;

pub use error::{Error, Result};
