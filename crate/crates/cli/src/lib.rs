//! Command-line front end for CRF patch-prior restoration: degradation,
//! denoising, inpainting, PSNR and the table benchmark.

pub mod bench;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

pub use error::{exit, CliError, Result};
