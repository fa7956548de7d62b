//! Dataset generation, loading, and client partitioning.

mod dataset;
mod idx;
mod partition;
mod synthetic;

pub use dataset::{ClientShard, Dataset};
pub use idx::load_idx;
pub use partition::{
    dirichlet_allocations, partition_dirichlet, partition_pathological,
    pathological_allocations, split_train_test, PartitionScheme, PartitionSpec,
    MIN_CLIENT_SAMPLES,
};
pub use synthetic::gen_synthetic;
