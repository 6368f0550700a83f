pub mod autodiff;
pub mod error;

pub use error::{Error, Result};
pub mod checkpoint;
pub mod data;
pub mod decoder;
pub mod embedding;
pub mod encoder;
pub mod eval;
pub mod model;
pub mod params;
pub mod train;
