//! On-disk dataset contract: the tensor container format, manifests,
//! answer vocabulary and the synthetic fixture generator.

pub mod container;
pub mod fixture;
pub mod manifest;
pub mod vocab;

pub use container::{ContainerReader, ContainerTensor, ContainerWriter};
pub use fixture::{
    generate_synthetic_fixture, hidden_label_map, synth_samples, FixtureConfig, DATASET_STATS,
};
pub use manifest::{load_manifest, Dataset, DatasetManifest, RecordEntry, SampleTensors, Split};
pub use vocab::{encode_answer_targets, AnswerVocabulary};
