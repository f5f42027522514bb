use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::embedding::EmbeddingMatrix;
use crate::tokenizer::{MarkerConvention, TokenId, Vocabulary};

/// How a token is projected onto the anchors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Projection {
    #[default]
    Cosine,
    Dot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityScore {
    /// `100 * mean cosine` between relative representations.
    pub score: f64,
    pub anchor_count: usize,
    pub anchor_ids: Vec<TokenId>,
    pub token_count: usize,
    pub projection: Projection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// `<s>`, `<unk>`, `<0x0A>`, `<|endoftext|>` and the like.
pub fn is_special_piece(piece: &str) -> bool {
    piece.len() > 2 && piece.starts_with('<') && piece.ends_with('>')
}

/// Seeded draw without replacement of `n_prefix` word-initial and
/// `n_nonprefix` word-internal tokens. Special pieces are never anchors.
/// Returned ids are sorted.
pub fn select_anchors(
    vocab: &Vocabulary,
    marker: MarkerConvention,
    n_prefix: usize,
    n_nonprefix: usize,
    seed: u64,
) -> Result<Vec<TokenId>, AnalysisError> {
    let (mut prefix, mut inner) = (Vec::new(), Vec::new());
    for (id, piece) in vocab.iter() {
        if is_special_piece(piece) {
            continue;
        }
        if marker.is_prefix_piece(piece) {
            prefix.push(id);
        } else {
            inner.push(id);
        }
    }
    if prefix.len() < n_prefix {
        return Err(AnalysisError::InsufficientTokens { kind: "prefix", requested: n_prefix, available: prefix.len() });
    }
    if inner.len() < n_nonprefix {
        return Err(AnalysisError::InsufficientTokens {
            kind: "non-prefix",
            requested: n_nonprefix,
            available: inner.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<TokenId> = sample(&mut rng, prefix.len(), n_prefix).into_iter().map(|i| prefix[i]).collect();
    out.extend(sample(&mut rng, inner.len(), n_nonprefix).into_iter().map(|i| inner[i]));
    out.sort_unstable();
    Ok(out)
}

/// Seeded sorted subset of `n` row ids out of `rows` (all rows when `n >= rows`).
pub fn sample_tokens(rows: usize, n: usize, seed: u64) -> Vec<TokenId> {
    if n >= rows {
        return (0..rows as TokenId).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<TokenId> = sample(&mut rng, rows, n).into_iter().map(|i| i as TokenId).collect();
    ids.sort_unstable();
    ids
}

fn unit_row(m: &EmbeddingMatrix, id: TokenId, name: &'static str, normalize: bool) -> Result<Vec<f64>, AnalysisError> {
    let mut v: Vec<f64> = m.row(id as usize).iter().map(|&x| x as f64).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(AnalysisError::ZeroNormRow { matrix: name, id });
    }
    if normalize {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    Ok(v)
}

fn relative(
    m: &EmbeddingMatrix,
    anchors: &[Vec<f64>],
    id: TokenId,
    name: &'static str,
    projection: Projection,
) -> Result<Vec<f64>, AnalysisError> {
    let t = unit_row(m, id, name, projection == Projection::Cosine)?;
    Ok(anchors.iter().map(|a| a.iter().zip(&t).map(|(x, y)| x * y).sum()).collect())
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (na > 0.0 && nb > 0.0).then(|| dot / (na * nb))
}

/// Compensated (Neumaier) sum.
fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        c += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + c
}

/// Mean cosine between the anchor-relative representations of each sampled
/// token in `a` and in `b`, scaled to 0..100.
pub fn relative_similarity(
    a: &EmbeddingMatrix,
    b: &EmbeddingMatrix,
    anchors: &[TokenId],
    tokens: Option<&[TokenId]>,
    projection: Projection,
) -> Result<SimilarityScore, AnalysisError> {
    if a.rows() != b.rows() {
        return Err(AnalysisError::RowCountMismatch { a: a.rows(), b: b.rows() });
    }
    if anchors.is_empty() {
        return Err(AnalysisError::NoAnchors);
    }
    let rows = a.rows();
    let all: Vec<TokenId>;
    let tokens = match tokens {
        Some(t) => t,
        None => {
            all = (0..rows as TokenId).collect();
            &all
        }
    };
    for &id in anchors.iter().chain(tokens) {
        if id as usize >= rows {
            return Err(AnalysisError::InvalidId { id, rows });
        }
    }
    let normalize = projection == Projection::Cosine;
    let anchors_a = anchors.iter().map(|&k| unit_row(a, k, "a", normalize)).collect::<Result<Vec<_>, _>>()?;
    let anchors_b = anchors.iter().map(|&k| unit_row(b, k, "b", normalize)).collect::<Result<Vec<_>, _>>()?;

    let sims: Vec<f64> = tokens
        .par_iter()
        .map(|&t| {
            let ra = relative(a, &anchors_a, t, "a", projection)?;
            let rb = relative(b, &anchors_b, t, "b", projection)?;
            cosine(&ra, &rb).ok_or(AnalysisError::ZeroNormRow { matrix: "relative representation", id: t })
        })
        .collect::<Result<_, _>>()?;
    let mean = if sims.is_empty() { 0.0 } else { neumaier_sum(sims.iter().copied()) / sims.len() as f64 };
    Ok(SimilarityScore {
        score: 100.0 * mean,
        anchor_count: anchors.len(),
        anchor_ids: anchors.to_vec(),
        token_count: sims.len(),
        projection,
        seed: None,
    })
}
