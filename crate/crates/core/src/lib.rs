//! Vocabulary adaptation for pretrained language models.
//!
//! Swaps a model's tokenizer by copying the embeddings of tokens shared with
//! the new vocabulary and initializing the rest with one of several
//! heuristics (Random, FVT, CLP, SAVA). Also measures tokenizer fertility and
//! embedding-space similarity.

pub mod align;
pub mod analysis;
pub mod embedding;
pub mod heuristics;
pub mod synth;
pub mod tokenizer;

pub use align::{
    collect_pairs, fit_closed_form, fit_gradient, fit_with_oracle, AffineMap, AlignError, FitReport, PairSet,
    StandardScaler, TrainConfig,
};
pub use analysis::{
    fertility, param_report, relative_similarity, select_anchors, AnalysisError, FertilityReport, ParamCountReport,
    SimilarityScore,
};
pub use embedding::{load_matrix, save_matrix, stats, EmbeddingError, EmbeddingMatrix, EmbeddingStats};
pub use heuristics::{
    adapt, adapt_untied, adapt_with_partition, assemble, AdaptationReport, HeuristicConfig, HeuristicError, Method,
};
pub use tokenizer::{
    canonicalize, partition, MarkerConvention, MatchMode, TokenId, TokenPartition, TokenizerError, TokenizerFormat,
    TokenizerModel, Vocabulary,
};

/// Any error the library can produce.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Heuristic(#[from] HeuristicError),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

impl Error {
    /// True when the root cause is a filesystem failure rather than bad input.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Tokenizer(e) => matches!(e, TokenizerError::Io { .. }),
            Error::Embedding(e) => matches!(e, EmbeddingError::Io { .. }),
            Error::Heuristic(HeuristicError::Tokenizer(e)) => matches!(e, TokenizerError::Io { .. }),
            Error::Heuristic(HeuristicError::Embedding(e)) | Error::Heuristic(HeuristicError::Align(AlignError::Embedding(e))) => {
                matches!(e, EmbeddingError::Io { .. })
            }
            Error::Heuristic(_) => false,
            Error::Align(AlignError::Embedding(e)) => matches!(e, EmbeddingError::Io { .. }),
            Error::Align(_) => false,
            Error::Analysis(e) => matches!(e, AnalysisError::Io { .. }),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
