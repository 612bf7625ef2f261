//! Embedding datasets: file formats, validation, splits, minibatches and generators.

mod batch;
mod format;
mod manifest;
mod perceptor;
mod split;
mod synthetic;

pub use batch::{sample_minibatch, Batch, BatchMode, Minibatch};
pub use format::{sha256_hex, ModalityMatrix, MBED_MAGIC, MBED_VERSION};
pub use manifest::{
    load_dataset, resolve_manifest_path, validate_dataset, Dataset, DatasetManifest,
    ModalityEntry, Regime, ValidationReport, MANIFEST_FILE,
};
pub use perceptor::{
    info_nce, mask_view, train_toy_perceptor, ToyPerceptor, ToyPerceptorConfig, DEFAULT_MASK_RATIO,
};
pub use split::{make_splits, Split, DEFAULT_HOLDOUT_FRACTION};
pub use synthetic::{generate_synthetic, random_orthogonal, synthesize, SyntheticSpec, SYNTHETIC_SPACE};
