pub mod artformer;
pub mod artic;
pub mod cache;
pub mod cli;
pub mod dataset;
mod error;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod prior;
pub mod text;

pub use error::{Error, Result};
