//! Command-line pipeline: forward solves, inversion, planning, round trips.

pub mod commands;
pub mod config;
