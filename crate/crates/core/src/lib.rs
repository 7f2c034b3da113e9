//! Hybrid-image skip connections for UNet depth regression.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod filters;
pub mod gradsuite;
pub mod metrics;
pub mod skips;
pub mod tensor;
pub mod train;
pub mod unet;

pub use error::{Error, Result};
