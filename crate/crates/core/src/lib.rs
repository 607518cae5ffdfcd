pub mod autograd;
pub mod blg;
pub mod dataset;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod pipeline;
pub mod raster;
pub mod synthetic;

pub use error::{Error, Result};
