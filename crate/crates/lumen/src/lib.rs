//! Service shell around `lumen-core`: PNG IO, the filesystem run store,
//! dataset ingestion, the LVM gateway, the explanation pipeline, the HTTP
//! API and the `lumen` command line.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod image_io;
pub mod lvm;
pub mod maskio;
pub mod pipeline;
pub mod report;
pub mod server;
pub mod store;
