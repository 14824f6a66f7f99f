//! Data ingestion and preparation.

mod classes;
mod io;
mod pca;
mod sequence;
mod splits;
mod synth;
mod table;
mod taxonomy;

pub use classes::{
    assign_label_vectors, class_label_vector, class_mean_embedding, load_remap, noun_vector, tokenize, ClassSpec,
    RemapTable,
};
pub use io::{load_dataset, load_manifest, read_features, write_dataset, write_features, Dataset, ManifestEntry};
pub use pca::{pca_fit_transform, PcaBasis};
pub use sequence::{pad_or_clip, FeatureSequence};
pub use splits::{make_splits, parse_split_label, test_count, SplitSpec};
pub use synth::{
    class_name, generate_synthetic, noun_token, one_per_verb_split, verb_token, SyntheticData, SyntheticSpec,
    TAXONOMY_ROOT,
};
pub use table::{load_word_vectors, save_word_vectors, EmbeddingTable};
pub use taxonomy::{load_taxonomy, Taxonomy};
