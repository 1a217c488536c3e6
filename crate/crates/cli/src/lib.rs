//! Command-line entry points and the HTTP query service.

pub mod commands;
pub mod data;
pub mod server;
