pub mod audit;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod dsl;
pub mod measures;
pub mod model;
