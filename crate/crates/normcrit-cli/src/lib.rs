//! Configuration, execution and file output behind the `normcrit` binary.

pub mod config;
pub mod output;
pub mod run;
