//! Fertility, relative-representation similarity and parameter accounting.

mod fertility;
mod params;
mod similarity;

use std::path::PathBuf;

use crate::tokenizer::{TokenId, TokenizerError};

pub use fertility::{fertility, histogram_csv, load_corpus, FertilityReport};
pub use params::{format_billions, param_report, ParamCountReport};
pub use similarity::{
    is_special_piece, relative_similarity, sample_tokens, select_anchors, Projection, SimilarityScore,
};

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("corpus contains no words")]
    EmptyCorpus,
    #[error("need {requested} {kind} tokens, vocabulary has {available}")]
    InsufficientTokens { kind: &'static str, requested: usize, available: usize },
    #[error("row {id} of {matrix} has zero norm")]
    ZeroNormRow { matrix: &'static str, id: TokenId },
    #[error("token id {id} is out of range for {rows} rows")]
    InvalidId { id: TokenId, rows: usize },
    #[error("matrices index different vocabularies: {a} vs {b} rows")]
    RowCountMismatch { a: usize, b: usize },
    #[error("no anchors given")]
    NoAnchors,
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
