//! Corpus inputs and persisted intermediates.
//!
//! * the JSON corpus manifest ([`CorpusManifest`]),
//! * `EMB1` per-sentence embedding files ([`SentenceEmbeddingSequence`]),
//! * `SIM1` upper-triangle similarity matrices ([`SimilarityMatrix`]),
//! * delimited `(item_id, label)` files and [`Partition`]s.
//!
//! Binary formats are little-endian float32; everything in memory that feeds
//! arithmetic is float64.

mod binary;
mod labels;
mod manifest;

pub use binary::{
    read_embeddings, read_similarity, write_embeddings, write_similarity, SentenceEmbeddingSequence, SimilarityMatrix,
    EMBEDDING_MAGIC, SIMILARITY_MAGIC,
};
pub use labels::{encode_shared, read_labels, write_labels, LabeledItems, Partition};
pub use manifest::{
    load_manifest, AlignmentConfigs, ConfigEntry, CorpusManifest, DocumentEntry, DownstreamInputs, ModelGroup,
    PipelineType, TextVersion,
};
