//! File formats, remote adapters, the evaluation harness and the command
//! line front end for [`featuremark_core`].

pub mod cli;
pub mod files;
pub mod harness;
pub mod metrics;
pub mod remote;
pub mod wire;

pub use featuremark_core as core;
