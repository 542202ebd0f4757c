//! Std companion to `demotrack-core`: dataset, demonstration, checkpoint,
//! trajectory and report files; the shared parameter store and training
//! schedulers; dataset-level tracking and evaluation; the command-line tool.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod demos;
pub mod error;
pub mod pipeline;
pub mod store;
pub mod train;
pub mod trajectory;

pub use error::{Error, Result};
