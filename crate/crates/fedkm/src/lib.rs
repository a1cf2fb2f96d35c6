//! File formats, experiment drivers and the command-line front end for
//! federated K-means with exact unlearning. The algorithms live in
//! `fedkm-core`.

pub mod bench;
pub mod config;
pub mod experiment;
pub mod io;
pub mod pipeline;
pub mod requests;
pub mod run;

pub use config::RunConfig;
pub use fedkm_core as core;
pub use run::run;
