//! Datasets, label-skew partitioners and per-shard label statistics.

mod dataset;
pub mod idx;
mod partition;
mod stats;

pub use dataset::{blob_mean, generate_blobs, Dataset, BLOB_OFFSET, BLOB_RADIUS};
pub use idx::load_idx;
pub use partition::{partition, partition_dirichlet, partition_quantity, PartitionPlan, PartitionScheme};
pub use stats::{label_stats, LabelStats, PRIOR_SMOOTHING};
