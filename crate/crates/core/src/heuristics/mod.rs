//! Target embedding assembly: copy shared rows, initialize novel ones.

mod clp;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::{self, AffineMap, AlignError, FitReport, TrainConfig};
use crate::embedding::{stats, EmbeddingError, EmbeddingMatrix, EmbeddingStats};
use crate::tokenizer::{
    partition, piece_to_bytes, MarkerConvention, MatchMode, NovelToken, TokenId, TokenPartition, TokenizerError,
    TokenizerModel,
};

pub use clp::{g_clp, ClpInitializer};

#[derive(Debug, thiserror::Error)]
pub enum HeuristicError {
    #[error("fallback required: {0}")]
    FallbackRequired(String),
    #[error("all similarity weights are zero for token {0}")]
    DegenerateSimilarity(TokenId),
    #[error("{which} embedding of token {id} has zero norm")]
    ZeroNormEmbedding { which: &'static str, id: TokenId },
    #[error("method {0} needs helper embeddings (--helper-emb)")]
    MissingHelper(Method),
    #[error("{what}: expected {expected}, got {actual}")]
    DimensionMismatch { what: &'static str, expected: usize, actual: usize },
    #[error("partition is inconsistent with the matrices: {0}")]
    PartitionInconsistent(String),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
}

impl HeuristicError {
    /// Errors that route a token to the fallback initializer instead of aborting.
    pub fn is_recoverable(&self) -> bool {
        matches!(
            self,
            HeuristicError::FallbackRequired(_)
                | HeuristicError::DegenerateSimilarity(_)
                | HeuristicError::ZeroNormEmbedding { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Random,
    #[default]
    Fvt,
    Clp,
    Sava,
}

impl Method {
    pub fn needs_helper(self) -> bool {
        matches!(self, Method::Clp | Method::Sava)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Random => "random",
            Method::Fvt => "fvt",
            Method::Clp => "clp",
            Method::Sava => "sava",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NegativePolicy {
    #[default]
    ClampZero,
    ShiftMin,
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RandomMoments {
    #[default]
    PerDimension,
    Scalar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Fallback {
    #[default]
    Random,
    MeanRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct HeuristicConfig {
    pub method: Method,
    pub seed: u64,
    /// 0 keeps every shared token in the support.
    pub clp_top_k: usize,
    pub clp_negative_policy: NegativePolicy,
    pub random_moments: RandomMoments,
    pub fallback: Fallback,
    pub match_mode: MatchMode,
    /// SAVA map training; its seed is replaced by `seed`.
    pub train: TrainConfig,
    pub pair_limit: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Copied,
    Heuristic,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenProvenance {
    pub target_id: TokenId,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationReport {
    pub matrix: String,
    pub copied_count: usize,
    pub initialized_count: usize,
    pub fallback_count: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_token: Vec<TokenProvenance>,
    pub method: HeuristicConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_report: Option<FitReport>,
    pub timing_seconds: f64,
}

/// Produces the row of one novel token.
pub trait Initializer: Sync {
    fn init(&self, token: &NovelToken) -> Result<Vec<f32>, HeuristicError>;
}

impl<F> Initializer for F
where
    F: Fn(&NovelToken) -> Result<Vec<f32>, HeuristicError> + Sync,
{
    fn init(&self, token: &NovelToken) -> Result<Vec<f32>, HeuristicError> {
        self(token)
    }
}

/// Copies shared rows bit-exactly and fills novel rows from `g`.
///
/// Recoverable failures of `g` go to `fallback` when given and are errors
/// otherwise. Novel tokens are initialized in parallel; the result does not
/// depend on the thread count.
pub fn assemble(
    source: &EmbeddingMatrix,
    partition: &TokenPartition,
    g: &dyn Initializer,
    fallback: Option<&dyn Initializer>,
) -> Result<(EmbeddingMatrix, AdaptationReport), HeuristicError> {
    let start = Instant::now();
    let dim = source.dim();
    let rows = partition.target_size;
    if partition.source_size != source.rows() {
        return Err(HeuristicError::DimensionMismatch {
            what: "source rows vs source vocabulary",
            expected: partition.source_size,
            actual: source.rows(),
        });
    }
    partition.check().map_err(HeuristicError::PartitionInconsistent)?;

    let mut data = vec![0f32; rows * dim];
    let mut per_token: Vec<Option<TokenProvenance>> = vec![None; rows];
    for s in &partition.shared {
        let (t, src) = (s.target_id as usize, s.source_id as usize);
        if src >= source.rows() {
            return Err(HeuristicError::PartitionInconsistent(format!("source id {src} out of range")));
        }
        data[t * dim..(t + 1) * dim].copy_from_slice(source.row(src));
        per_token[t] = Some(TokenProvenance { target_id: s.target_id, provenance: Provenance::Copied, reason: None });
    }

    let novel: Vec<(Vec<f32>, TokenProvenance)> = partition
        .novel
        .par_iter()
        .map(|tok| {
            let (row, provenance, reason) = match g.init(tok) {
                Ok(row) => (row, Provenance::Heuristic, None),
                Err(e) if e.is_recoverable() => match fallback {
                    Some(fb) => (fb.init(tok)?, Provenance::Fallback, Some(e.to_string())),
                    None => return Err(e),
                },
                Err(e) => return Err(e),
            };
            if row.len() != dim {
                return Err(HeuristicError::DimensionMismatch { what: "initializer row", expected: dim, actual: row.len() });
            }
            if let Some(col) = row.iter().position(|v| !v.is_finite()) {
                return Err(EmbeddingError::NonFiniteValue { row: tok.target_id as usize, col, value: row[col] }.into());
            }
            Ok((row, TokenProvenance { target_id: tok.target_id, provenance, reason }))
        })
        .collect::<Result<_, _>>()?;

    let (mut initialized, mut fell_back) = (0, 0);
    for (tok, (row, prov)) in partition.novel.iter().zip(novel) {
        let t = tok.target_id as usize;
        data[t * dim..(t + 1) * dim].copy_from_slice(&row);
        match prov.provenance {
            Provenance::Fallback => fell_back += 1,
            _ => initialized += 1,
        }
        per_token[t] = Some(prov);
    }
    let per_token: Vec<TokenProvenance> = per_token.into_iter().map(|p| p.expect("partition covers target")).collect();
    let matrix = EmbeddingMatrix::new(rows, dim, data)?;
    let report = AdaptationReport {
        matrix: source.label.clone(),
        copied_count: partition.shared.len(),
        initialized_count: initialized,
        fallback_count: fell_back,
        per_token,
        method: HeuristicConfig::default(),
        fit_report: None,
        timing_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((matrix, report))
}

/// Sample from `N(mu, sigma^2)` keyed by `(seed, id)`.
///
/// Each target id gets its own ChaCha stream, so the row is independent of
/// which other tokens are drawn and in what order.
pub fn g_random(id: TokenId, stats: &EmbeddingStats, moments: RandomMoments, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id as u64);
    (0..stats.dim)
        .map(|j| {
            let z: f64 = StandardNormal.sample(&mut rng);
            let (mu, var) = match moments {
                RandomMoments::PerDimension => (stats.mean[j], stats.variance[j]),
                RandomMoments::Scalar => (stats.scalar_mean, stats.scalar_variance),
            };
            (mu + var.sqrt() * z) as f32
        })
        .collect()
}

/// Mean of the source rows the source tokenizer assigns to `piece`'s surface
/// text. A word-initial piece is tokenized with its leading space.
pub fn g_fvt(
    piece: &str,
    target_marker: MarkerConvention,
    source_tokenizer: &TokenizerModel,
    source: &EmbeddingMatrix,
) -> Result<Vec<f32>, HeuristicError> {
    let bytes = piece_to_bytes(piece, target_marker);
    if bytes.is_empty() {
        return Err(HeuristicError::FallbackRequired(format!("piece {piece:?} has no surface text")));
    }
    let mut ids = source_tokenizer
        .tokenize_bytes(&bytes)
        .map_err(|e| HeuristicError::FallbackRequired(format!("piece {piece:?}: {e}")))?;
    let unk = source_tokenizer.unk_id();
    ids.retain(|&id| Some(id) != unk);
    if ids.is_empty() {
        return Err(HeuristicError::FallbackRequired(format!("piece {piece:?} maps only to unknown tokens")));
    }
    mean_of_rows(source, &ids)
}

/// Order-independent mean: rows are summed in ascending id order in `f64`.
pub fn mean_of_rows(m: &EmbeddingMatrix, ids: &[TokenId]) -> Result<Vec<f32>, HeuristicError> {
    let mut sorted = ids.to_vec();
    sorted.sort_unstable();
    let mut acc = vec![0f64; m.dim()];
    for &id in &sorted {
        if id as usize >= m.rows() {
            return Err(HeuristicError::DimensionMismatch {
                what: "token id vs matrix rows",
                expected: m.rows(),
                actual: id as usize + 1,
            });
        }
        for (a, &v) in acc.iter_mut().zip(m.row(id as usize)) {
            *a += v as f64;
        }
    }
    let k = sorted.len() as f64;
    Ok(acc.into_iter().map(|a| (a / k) as f32).collect())
}

/// `phi(E_h[id])`.
pub fn g_sava(id: TokenId, helper: &EmbeddingMatrix, phi: &AffineMap) -> Result<Vec<f32>, HeuristicError> {
    if helper.dim() != phi.input_dim {
        return Err(AlignError::DimensionMismatch { expected: phi.input_dim, actual: helper.dim() }.into());
    }
    if id as usize >= helper.rows() {
        return Err(HeuristicError::DimensionMismatch {
            what: "token id vs helper rows",
            expected: helper.rows(),
            actual: id as usize + 1,
        });
    }
    Ok(phi.apply_f32(helper.row(id as usize))?)
}

fn fallback_initializer<'a>(
    cfg: &'a HeuristicConfig,
    source_stats: &'a EmbeddingStats,
) -> Box<dyn Initializer + 'a> {
    match cfg.fallback {
        Fallback::Random => Box::new(move |t: &NovelToken| Ok(g_random(t.target_id, source_stats, cfg.random_moments, cfg.seed))),
        Fallback::MeanRow => {
            let mean: Vec<f32> = source_stats.mean.iter().map(|&v| v as f32).collect();
            Box::new(move |_: &NovelToken| Ok(mean.clone()))
        }
    }
}

/// Adapts one matrix against an already computed partition.
pub fn adapt_with_partition(
    source: &EmbeddingMatrix,
    source_tokenizer: &TokenizerModel,
    target_tokenizer: &TokenizerModel,
    helper: Option<&EmbeddingMatrix>,
    partition: &TokenPartition,
    cfg: &HeuristicConfig,
) -> Result<(EmbeddingMatrix, AdaptationReport), HeuristicError> {
    let start = Instant::now();
    if source.rows() != source_tokenizer.vocab().len() {
        return Err(HeuristicError::DimensionMismatch {
            what: "source rows vs source vocabulary",
            expected: source_tokenizer.vocab().len(),
            actual: source.rows(),
        });
    }
    let helper = match (cfg.method.needs_helper(), helper) {
        (true, None) => return Err(HeuristicError::MissingHelper(cfg.method)),
        (true, Some(h)) => {
            if h.rows() != target_tokenizer.vocab().len() {
                return Err(HeuristicError::DimensionMismatch {
                    what: "helper rows vs target vocabulary",
                    expected: target_tokenizer.vocab().len(),
                    actual: h.rows(),
                });
            }
            Some(h)
        }
        (false, h) => h,
    };
    let source_stats = stats(source)?;
    let fallback = fallback_initializer(cfg, &source_stats);
    let target_marker = target_tokenizer.marker();
    let target_vocab = target_tokenizer.vocab();

    let mut fit_report = None;
    let (matrix, mut report) = match cfg.method {
        Method::Random => {
            let g = |t: &NovelToken| Ok(g_random(t.target_id, &source_stats, cfg.random_moments, cfg.seed));
            assemble(source, partition, &g, Some(fallback.as_ref()))?
        }
        Method::Fvt => {
            let g = |t: &NovelToken| {
                let piece = target_vocab.token(t.target_id).ok_or(TokenizerError::UnknownId(t.target_id))?;
                g_fvt(piece, target_marker, source_tokenizer, source)
            };
            assemble(source, partition, &g, Some(fallback.as_ref()))?
        }
        Method::Clp => {
            let clp = ClpInitializer::new(source, helper.expect("checked"), partition, cfg)?;
            assemble(source, partition, &clp, Some(fallback.as_ref()))?
        }
        Method::Sava => {
            let helper = helper.expect("checked");
            let train = TrainConfig { seed: cfg.seed, ..cfg.train.clone() };
            let pairs = align::collect_pairs(helper, source, partition, cfg.pair_limit, cfg.seed)?;
            let (phi, fit) = align::fit_gradient(&pairs, &train)?;
            fit_report = Some(fit);
            let g = |t: &NovelToken| g_sava(t.target_id, helper, &phi);
            assemble(source, partition, &g, Some(fallback.as_ref()))?
        }
    };
    report.method = cfg.clone();
    report.fit_report = fit_report;
    report.timing_seconds = start.elapsed().as_secs_f64();
    Ok((matrix, report))
}

/// Partition the vocabularies (by the tokenizers' own markers) and adapt.
pub fn adapt(
    source: &EmbeddingMatrix,
    source_tokenizer: &TokenizerModel,
    target_tokenizer: &TokenizerModel,
    helper: Option<&EmbeddingMatrix>,
    cfg: &HeuristicConfig,
) -> Result<(EmbeddingMatrix, AdaptationReport), HeuristicError> {
    let part = partition_for(source_tokenizer, target_tokenizer, cfg.match_mode);
    adapt_with_partition(source, source_tokenizer, target_tokenizer, helper, &part, cfg)
}

pub fn partition_for(source: &TokenizerModel, target: &TokenizerModel, mode: MatchMode) -> TokenPartition {
    partition(source.vocab(), target.vocab(), source.marker(), target.marker(), mode)
}

/// Output of adapting an untied model: input embeddings and head.
#[derive(Debug, Clone)]
pub struct UntiedAdaptation {
    pub embeddings: EmbeddingMatrix,
    pub head: EmbeddingMatrix,
    pub embeddings_report: AdaptationReport,
    pub head_report: AdaptationReport,
}

/// Adapts the input embeddings and the output head independently with the
/// same partition. For SAVA each matrix gets its own map; the head map is
/// trained from `helper_head` when given, else from `helper`.
#[allow(clippy::too_many_arguments)]
pub fn adapt_untied(
    embeddings: &EmbeddingMatrix,
    head: &EmbeddingMatrix,
    source_tokenizer: &TokenizerModel,
    target_tokenizer: &TokenizerModel,
    helper: Option<&EmbeddingMatrix>,
    helper_head: Option<&EmbeddingMatrix>,
    cfg: &HeuristicConfig,
) -> Result<UntiedAdaptation, HeuristicError> {
    if head.rows() != embeddings.rows() {
        return Err(HeuristicError::DimensionMismatch {
            what: "head rows vs embedding rows",
            expected: embeddings.rows(),
            actual: head.rows(),
        });
    }
    let part = partition_for(source_tokenizer, target_tokenizer, cfg.match_mode);
    let (e, er) = adapt_with_partition(embeddings, source_tokenizer, target_tokenizer, helper, &part, cfg)?;
    let (h, hr) =
        adapt_with_partition(head, source_tokenizer, target_tokenizer, helper_head.or(helper), &part, cfg)?;
    Ok(UntiedAdaptation { embeddings: e, head: h, embeddings_report: er, head_report: hr })
}
