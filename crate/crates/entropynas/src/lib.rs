//! File formats, configuration and command-line front end for the
//! entropy-guided backbone search in [`entropynas_core`].

pub mod cli;
pub mod config;
pub mod format;
pub mod log;
pub mod manifest;
pub mod parallel;
