//! Relationship batch integration: every image in a batch attends to every
//! other image, with a PSNR-based relationship matrix injected as a
//! positional bias.

pub mod backbone;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod evalx;
pub mod layers;
pub mod model;
pub mod numcore;
pub mod rpe;
pub mod rra;
pub mod train;

pub use error::{Error, Result};
