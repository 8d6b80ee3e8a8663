//! Dataset loading and model files.

pub mod checkpoint;
pub mod container;
pub mod mnist;
pub mod packed;

pub use checkpoint::{convert_model, Checkpoint, CheckpointMeta};
pub use container::Container;
pub use mnist::{load_mnist_idx, load_mnist_split, Dataset};
pub use packed::{export_packed, load_packed, read_packed, save_packed, PackSummary, PackedMeta};
