//! Synthetic articulated-object corpus and its text descriptions.

mod corpus;
pub mod shapes;
pub mod synth;
pub mod templates;

pub use corpus::{
    build_dataset, corpus_object, generate_corpus, object_id, split_ids, Corpus, CorpusObject, Manifest, ManifestEntry,
    Splits, GENERATOR_VERSION, OBJECT_FORMAT,
};
pub use shapes::{PartShape, PlacedShape, FRAME};
pub use synth::{canonical_cmp, generate_object, CapJoint, Category, SynthObject, SynthSpec, GAP};
pub use templates::{describe, parse_counts, vocabulary, JointCounts};
