//! Synthetic benchmark harness and reference oracles.

pub mod acceptance;
pub mod oracles;
pub mod synthetic;
