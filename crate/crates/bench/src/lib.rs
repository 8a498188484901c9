pub mod cli;
pub mod doa;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod generate;
pub mod io;
pub mod metrics;
