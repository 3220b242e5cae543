//! Synthetic judging tasks with deterministically checkable labels.

mod dataset;
mod example;
mod scene;
mod task;

pub use dataset::{
    build_dataset, generate_dataset, parse_example_line, random_example, sample_batch, ClassCounts,
    DataConfig, Dataset, DatasetManifest, ManifestEntry, SamplingStrategy, TaskSplitSpec,
    DEFAULT_OOD_PER_TASK, MANIFEST_FILE, REFERENCE_COUNTS,
};
pub use example::{encode_example, Example, Split};
pub use scene::{generate_scene, Color, Object, Scene, SceneConfig, Shape, Size};
pub use task::{ground_truth, is_pair_tie, Claim, Label, Quantifier, TaskKind};
