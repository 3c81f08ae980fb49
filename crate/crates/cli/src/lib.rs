//! Library side of the `hjbflow` binary: configuration, artifact writers,
//! command dispatch and the verification suites.

pub mod config;
pub mod oracles;
pub mod output;
pub mod run;
pub mod verify;
