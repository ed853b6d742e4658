//! Graph-to-model-input preprocessing: linearization, BPE, sub-word graph
//! extension, structural path extraction, vocabularies, and dataset records.

mod bpe;
mod dataset;
mod linearize;
mod paths;
mod subword;
mod vocab;

use thiserror::Error;

use crate::penman::PenmanError;

pub use bpe::{join_subwords, train_bpe, BpeModel, SEPARATOR};
pub use dataset::{
    encode_paths, preprocess, read_records, write_records, Artifacts, PreparedExample,
    Preprocessed, PreprocessOptions, Record,
};
pub use linearize::{linearize_concepts, linearize_full};
pub use paths::{
    extract_paths, flip_direction, mask_indirect, reverse_path, PathMatrix, DOWN, NONE_LABEL, UP,
};
pub use subword::{extend_graph_subwords, segment_nodes, ROOT_LABEL};
pub use vocab::{
    build_feature_vocab, build_label_vocab, build_vocab, Vocabulary, BOS, BOS_TOKEN, EOS,
    EOS_TOKEN, FEATURE_UNK, LABEL_NONE, LABEL_PAD, LABEL_UNK, PAD, PAD_TOKEN, UNK, UNK_TOKEN,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("no path between {0:?} and {1:?}")]
    Disconnected(String, String),
    #[error("bpe: {0}")]
    Bpe(String),
    #[error("vocabulary: {0}")]
    Vocab(String),
    #[error("segmentation: {0}")]
    Segmentation(String),
    #[error("{0}")]
    Config(String),
    #[error("record {line}: {msg}")]
    Record { line: usize, msg: String },
    #[error("line {line}: graph has no `# ::snt` reference sentence")]
    MissingSentence { line: usize },
    #[error(transparent)]
    Graph(#[from] PenmanError),
}
