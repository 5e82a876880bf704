pub mod assignment;
pub mod cli;
pub mod config;
pub mod error;
pub mod evalio;
pub mod geometry;
pub mod gradsuite;
pub mod kalman;
pub mod numerics;
pub mod refsearch;
pub mod session;
pub mod tracker;
pub mod train;

pub use error::{Error, Result};
