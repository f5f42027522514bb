use serde::{Deserialize, Serialize};

use super::{EmbeddingError, EmbeddingMatrix};

/// Population moments of an embedding table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingStats {
    pub rows: usize,
    pub dim: usize,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub scalar_mean: f64,
    pub scalar_variance: f64,
}

impl EmbeddingStats {
    pub fn std(&self) -> Vec<f64> {
        self.variance.iter().map(|v| v.sqrt()).collect()
    }
}

/// Per-dimension and scalar mean/variance, dividing by `rows`.
///
/// Accumulates with Welford's update in `f64`, one pass over the rows.
pub fn stats(m: &EmbeddingMatrix) -> Result<EmbeddingStats, EmbeddingError> {
    if m.rows() == 0 {
        return Err(EmbeddingError::EmptyMatrix);
    }
    let dim = m.dim();
    let mut mean = vec![0.0f64; dim];
    let mut m2 = vec![0.0f64; dim];
    for (k, row) in m.iter_rows().enumerate() {
        let n = (k + 1) as f64;
        for ((mu, s), &x) in mean.iter_mut().zip(m2.iter_mut()).zip(row) {
            let x = x as f64;
            let delta = x - *mu;
            *mu += delta / n;
            *s += delta * (x - *mu);
        }
    }
    let rows = m.rows() as f64;
    let variance: Vec<f64> = m2.iter().map(|s| (s / rows).max(0.0)).collect();

    let (scalar_mean, scalar_variance) = if dim == 0 {
        (0.0, 0.0)
    } else {
        // Law of total variance: within-dimension spread plus spread of the means.
        let d = dim as f64;
        let grand = mean.iter().sum::<f64>() / d;
        let within = variance.iter().sum::<f64>() / d;
        let between = mean.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>() / d;
        (grand, (within + between).max(0.0))
    };

    Ok(EmbeddingStats { rows: m.rows(), dim, mean, variance, scalar_mean, scalar_variance })
}
