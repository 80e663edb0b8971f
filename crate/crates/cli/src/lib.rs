//! Batch front end for the `monovi` solver: TOML configs in, CSV and JSON
//! artifacts out.

pub mod config;
pub mod error;
pub mod expr;
pub mod output;
pub mod run;
