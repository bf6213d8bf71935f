//! File formats, datasets, checkpoints, run configuration and the
//! `pointattn` command line on top of [`pointattn_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod driver;
pub mod error;
pub mod formats;

pub use error::{Error, Result};
