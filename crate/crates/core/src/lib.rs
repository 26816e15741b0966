pub mod error;
pub mod grammar;
pub mod model;
pub mod synth;
pub mod train;
pub mod vocab;

pub use error::{Error, Result};
