//! Pipeline orchestration and reporting behind the `claimdecomp` binary.

pub mod app;
pub mod audit;
pub mod config;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod report;
