//! File formats, corpus ingestion, dataset loaders and the pipeline runner
//! behind the `dapt` command-line tool. The algorithms live in `dapt_core`.

pub mod config;
pub mod datasets;
pub mod error;
pub mod formats;
pub mod ingest;
pub mod pipeline;
pub mod synth;

pub use error::{DaptError, Result};
