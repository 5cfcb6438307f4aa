//! File formats, experiment orchestration and the `rce` command line built
//! on `rce-core`.

pub mod checkpoint;
pub mod container;
pub mod dataset;
pub mod experiment;
pub mod report;
pub mod seed;
pub mod strip;

pub use checkpoint::Checkpoint;
pub use container::FormatError;
pub use dataset::Dataset;
