use serde::{Deserialize, Serialize};

/// Per-dimension standardization `(x - mean) / std`.
///
/// Dimensions whose spread is numerically zero get `std = 1` and are listed
/// in `flagged`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    #[serde(default)]
    pub flagged: Vec<usize>,
}

impl StandardScaler {
    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], std: vec![1.0; dim], flagged: Vec::new() }
    }

    /// Fits on `rows` samples stored row-major with width `dim` (population std).
    pub fn fit(data: &[f64], dim: usize) -> Self {
        let rows = data.len().checked_div(dim).unwrap_or(0);
        let mut mean = vec![0.0; dim];
        for row in data.chunks_exact(dim.max(1)).take(rows) {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows.max(1) as f64);
        let mut var = vec![0.0; dim];
        for row in data.chunks_exact(dim.max(1)).take(rows) {
            for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let mut flagged = Vec::new();
        let std = var
            .iter()
            .zip(&mean)
            .enumerate()
            .map(|(j, (v, m))| {
                let s = (v / rows.max(1) as f64).sqrt();
                if s <= 1e-10 * (1.0 + m.abs()) {
                    flagged.push(j);
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Self { mean, std, flagged }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        for (((o, x), m), s) in out.iter_mut().zip(x).zip(&self.mean).zip(&self.std) {
            *o = (x - m) / s;
        }
    }

    pub fn inverse_into(&self, z: &[f64], out: &mut [f64]) {
        for (((o, z), m), s) in out.iter_mut().zip(z).zip(&self.mean).zip(&self.std) {
            *o = z * s + m;
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.forward_into(x, &mut out);
        out
    }

    pub fn inverse(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; z.len()];
        self.inverse_into(z, &mut out);
        out
    }
}

/// Scales `v` to unit Euclidean norm in place; the zero vector is left alone.
pub fn l2_normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fits_population_moments() {
        let s = StandardScaler::fit(&[1.0, 10.0, 3.0, 10.0], 2);
        assert_eq!(s.mean, vec![2.0, 10.0]);
        assert_eq!(s.std, vec![1.0, 1.0]);
        assert_eq!(s.flagged, vec![1]);
        assert_eq!(s.forward(&[3.0, 12.0]), vec![1.0, 2.0]);
    }

    #[test]
    fn zero_vector_survives_normalization() {
        let mut v = vec![0.0; 3];
        l2_normalize(&mut v);
        assert_eq!(v, vec![0.0; 3]);
        let mut v = vec![3.0, 4.0];
        l2_normalize(&mut v);
        assert_eq!(v, vec![0.6, 0.8]);
    }
}
