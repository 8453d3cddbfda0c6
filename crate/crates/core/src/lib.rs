//! Multi-parallel segment alignment for comparable document collections.

pub mod ingest;
pub mod model;
pub mod report;
pub mod text;
pub mod embedding;
pub mod bialign;
pub mod multialign;
pub mod eval;
pub mod export;
pub mod synth;
pub mod pipeline;
pub mod cli;
