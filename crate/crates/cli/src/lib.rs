//! Command-line driver: configuration, the φ expression language and the
//! command pipelines.

pub mod config;
pub mod expr;
pub mod run;
