//! Dynamic attributed graph sequences: storage, ingestion, synthesis, sampling.

pub mod io;
pub mod sampling;
pub mod sequence;
pub mod snapshot;
pub mod synthetic;

pub use io::{
    attach_degree_features, load_attribute_triplets, load_edge_csv, read_sequence, sequence_from_bytes,
    sequence_to_bytes, write_sequence, Binning,
};
pub use sampling::{
    epoch_batches, random_walk_positive, sample_minibatch, sample_negatives, sample_positives, NegativeDistribution,
    NegativeSampler,
};
pub use sequence::{DynamicGraphSequence, Snapshot};
pub use snapshot::{AttributeMatrix, SnapshotGraph};
pub use synthetic::{generate_synthetic, SyntheticSpec};
