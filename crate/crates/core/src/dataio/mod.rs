//! Synthetic class streams, dataset files and phase partitioning.

mod dataset;
mod files;
mod stream;

pub use dataset::LabeledDataset;
pub use files::{load_dataset, read_binary, read_csv, save_dataset, write_binary, write_csv};
pub use stream::{generate_gaussian_stream, partition_stream, GaussianClass, GaussianMixtureSpec, Phase, PhaseStream};
