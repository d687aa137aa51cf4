//! Annotation files, speaker-embedding files, vocabularies, corpus statistics,
//! synthetic corpora and training-batch sampling.

mod annotation;
mod batch;
mod embedding;
mod stats;
mod synthetic;
mod vocab;

pub use annotation::{
    format_annotations, parse_annotations, parse_annotations_str, validate_against_store, write_annotations,
    AnnotationTuple, Label, MAX_DESCRIPTORS_PER_TUPLE,
};
pub use batch::{sample_training_batch, BatchItem, BatchSampler};
pub use embedding::{
    load_embeddings, parse_embeddings_str, write_embeddings, EmbeddingLine, EmbeddingStore, Gender, SpeakerRecord,
    Utterance,
};
pub use stats::{dataset_stats, DescriptorFrequency, StatsReport};
pub use synthetic::{
    generate_synthetic, label_from_coefficients, synthetic_vocab, SyntheticCorpus, SyntheticGroundTruth, SyntheticSpec,
};
pub use vocab::{DescriptorId, DescriptorVocab, DEFAULT_DESCRIPTORS, SIMILAR};
