//! Seeded experiment runner: configuration, substreams, CSV output.

pub mod checks;
pub mod config;
pub mod experiments;
pub mod output;
pub mod seed;
