//! Stages 1 and 2 of the visualization pipeline: scope filtering, uniform
//! partitioning and per-bin aggregation into a [`FeatureVector`].
//!
//! Every client configured with the same [`PartitionSpec`] produces vectors of
//! the same length with the same index meaning, which is what makes
//! elementwise federation possible.

mod csv_io;
mod partition;
mod record;

pub use csv_io::{read_records, write_records, Ingested, HEADER};
pub use partition::{
    aggregate, AggregateFn, FeatureVector, PartitionKind, PartitionSpec, SpatialAnchor, SumField,
    TimeAnchor, TimeBins,
};
pub use record::{apply_scope, BBox, DataRecord, ScopeFilter};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("empty range: {0}")]
    EmptyRange(String),
    #[error("invalid partition spec: {0}")]
    InvalidSpec(String),
    #[error("index {index} out of range for {len} bins")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("no input vectors")]
    EmptyInput,
    #[error("unexpected CSV header: {0}")]
    BadHeader(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
