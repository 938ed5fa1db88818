//! Real-time gateway and command-line front end for the drone training simulator.

pub mod cli;
pub mod protocol;
pub mod server;
