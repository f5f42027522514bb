use serde::{Deserialize, Serialize};

/// Parameter totals before and after a vocabulary swap.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCountReport {
    pub vocab_before: u64,
    pub vocab_after: u64,
    pub dim: u64,
    pub tied: bool,
    pub non_embedding_params: u64,
    pub total_before: u64,
    pub total_after: u64,
    /// `total_before - total_after`; negative when the vocabulary grows.
    pub delta: i64,
}

/// Embedding tables count once when tied, twice (embeddings and head) otherwise.
pub fn param_report(vocab_before: u64, vocab_after: u64, dim: u64, tied: bool, non_embedding_params: u64) -> ParamCountReport {
    let copies = if tied { 1 } else { 2 };
    let total_before = non_embedding_params + vocab_before * dim * copies;
    let total_after = non_embedding_params + vocab_after * dim * copies;
    let delta = (vocab_before as i64 - vocab_after as i64) * dim as i64 * copies as i64;
    ParamCountReport {
        vocab_before,
        vocab_after,
        dim,
        tied,
        non_embedding_params,
        total_before,
        total_after,
        delta,
    }
}

/// `8030261248 -> "8.03B"`.
pub fn format_billions(n: u64) -> String {
    format!("{:.2}B", n as f64 / 1e9)
}
