use super::{HeuristicConfig, HeuristicError, Initializer, NegativePolicy};
use crate::align::l2_normalize;
use crate::embedding::EmbeddingMatrix;
use crate::tokenizer::{NovelToken, TokenId, TokenPartition};

/// Similarity-weighted combination of shared source rows.
///
/// Shared helper rows are normalized once up front. A shared token whose
/// helper row is zero never enters the support.
pub struct ClpInitializer<'a> {
    helper: &'a EmbeddingMatrix,
    source: &'a EmbeddingMatrix,
    /// `(shared index, unit helper row)` for every usable shared token.
    anchors: Vec<(usize, Vec<f64>)>,
    source_ids: Vec<usize>,
    top_k: usize,
    policy: NegativePolicy,
}

impl<'a> ClpInitializer<'a> {
    pub fn new(
        source: &'a EmbeddingMatrix,
        helper: &'a EmbeddingMatrix,
        partition: &TokenPartition,
        cfg: &HeuristicConfig,
    ) -> Result<Self, HeuristicError> {
        if partition.shared.is_empty() {
            return Err(HeuristicError::PartitionInconsistent("CLP needs at least one shared token".into()));
        }
        let mut anchors = Vec::with_capacity(partition.shared.len());
        let mut source_ids = Vec::with_capacity(partition.shared.len());
        for (j, s) in partition.shared.iter().enumerate() {
            let (t, src) = (s.target_id as usize, s.source_id as usize);
            if t >= helper.rows() || src >= source.rows() {
                return Err(HeuristicError::PartitionInconsistent(format!(
                    "shared token {:?} is out of range for the matrices",
                    s.token
                )));
            }
            source_ids.push(src);
            let mut h: Vec<f64> = helper.row(t).iter().map(|&v| v as f64).collect();
            if h.iter().all(|&v| v == 0.0) {
                continue;
            }
            l2_normalize(&mut h);
            anchors.push((j, h));
        }
        Ok(Self { helper, source, anchors, source_ids, top_k: cfg.clp_top_k, policy: cfg.clp_negative_policy })
    }

    /// Normalized weights `(shared index, weight)` for target token `id`,
    /// sorted by shared index. Weights are non-negative and sum to 1.
    pub fn weights(&self, id: TokenId) -> Result<Vec<(usize, f64)>, HeuristicError> {
        let t = id as usize;
        if t >= self.helper.rows() {
            return Err(HeuristicError::PartitionInconsistent(format!("target id {t} beyond helper rows")));
        }
        let mut h: Vec<f64> = self.helper.row(t).iter().map(|&v| v as f64).collect();
        if h.iter().all(|&v| v == 0.0) {
            return Err(HeuristicError::ZeroNormEmbedding { which: "helper", id });
        }
        l2_normalize(&mut h);
        let cos: Vec<f64> = self
            .anchors
            .iter()
            .map(|(_, a)| a.iter().zip(&h).map(|(x, y)| x * y).sum::<f64>())
            .collect();
        let raw: Vec<f64> = match self.policy {
            NegativePolicy::ClampZero => cos.iter().map(|c| c.max(0.0)).collect(),
            NegativePolicy::Absolute => cos.iter().map(|c| c.abs()).collect(),
            NegativePolicy::ShiftMin => {
                let min = cos.iter().copied().fold(f64::INFINITY, f64::min);
                cos.iter().map(|c| c - min).collect()
            }
        };
        let mut support: Vec<(usize, f64)> =
            self.anchors.iter().zip(raw).map(|((j, _), w)| (*j, w)).filter(|(_, w)| *w > 0.0).collect();
        if self.top_k > 0 && support.len() > self.top_k {
            support.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            support.truncate(self.top_k);
            support.sort_by_key(|(j, _)| *j);
        }
        let total: f64 = support.iter().map(|(_, w)| w).sum();
        if total.is_nan() || total <= 0.0 {
            return Err(HeuristicError::DegenerateSimilarity(id));
        }
        support.iter_mut().for_each(|(_, w)| *w /= total);
        Ok(support)
    }

    pub fn row(&self, id: TokenId) -> Result<Vec<f32>, HeuristicError> {
        let weights = self.weights(id)?;
        let mut acc = vec![0f64; self.source.dim()];
        for (j, w) in weights {
            for (a, &v) in acc.iter_mut().zip(self.source.row(self.source_ids[j])) {
                *a += w * v as f64;
            }
        }
        Ok(acc.into_iter().map(|v| v as f32).collect())
    }
}

impl Initializer for ClpInitializer<'_> {
    fn init(&self, token: &NovelToken) -> Result<Vec<f32>, HeuristicError> {
        self.row(token.target_id)
    }
}

/// One-shot CLP row; builds the shared-token index on every call.
pub fn g_clp(
    id: TokenId,
    source: &EmbeddingMatrix,
    helper: &EmbeddingMatrix,
    partition: &TokenPartition,
    cfg: &HeuristicConfig,
) -> Result<Vec<f32>, HeuristicError> {
    ClpInitializer::new(source, helper, partition, cfg)?.row(id)
}
