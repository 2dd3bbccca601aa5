//! relvos: the IO side of the segmentation engine. Dataset loading, run
//! configuration, snapshots, metric reports, the scalar oracle, the HTTP
//! session service and the `relvos` command line.

pub mod config;
pub mod dataset;
pub mod error;
pub mod oracle;
pub mod report;
pub mod rle;
pub mod server;
pub mod simulate;
pub mod snapshot;

pub use error::{IoError, Result};
pub use relvos_core as core;
