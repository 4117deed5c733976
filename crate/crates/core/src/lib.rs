pub mod autograd;
pub mod dataio;
pub mod error;
pub mod evaluation;
pub mod extraction;
pub mod geometry;
pub mod model;
pub mod parallel;
pub mod pipeline;
pub mod query_init;
pub mod representation;
pub mod training;

pub use error::{Error, Result};
