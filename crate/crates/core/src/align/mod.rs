//! Affine alignment between a helper embedding space and a source one.
//!
//! The fitted map is `y = inv_out(W * prep(x) + b)` where `prep` standardizes
//! the helper vector and (optionally) scales it to unit length, and `inv_out`
//! undoes the standardization fitted on the source vectors. Training minimizes
//! the mean squared error in the standardized output space with full-batch
//! Adam; a ridge-regularized normal-equation solve on the same representation
//! serves as the reference minimizer.

mod adam;
mod io;
mod scaler;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingError, EmbeddingMatrix};
use crate::tokenizer::{TokenId, TokenPartition};

pub use adam::Adam;
pub use io::{load_map, save_map, sidecar_path, MapSidecar};
pub use scaler::{l2_normalize, StandardScaler};

#[derive(Debug, thiserror::Error)]
pub enum AlignError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("partition has no shared tokens to train on")]
    EmptyIntersection,
    #[error("need at least 2 training pairs, got {0}")]
    TooFewPairs(usize),
    #[error("loss became non-finite at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("normal equations are singular (ridge lambda {lambda})")]
    SingularSystem { lambda: f64 },
    #[error("partition references {what} id {id} but the matrix has {rows} rows")]
    PartitionInconsistent { what: &'static str, id: usize, rows: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed map file: {0}")]
    MalformedMap(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

/// Full-batch Adam settings. Defaults follow the published SAVA recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Only used by the closed-form reference solve.
    pub ridge_lambda: f64,
    pub l2_normalize_inputs: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            ridge_lambda: 1e-6,
            l2_normalize_inputs: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), AlignError> {
        if self.steps == 0 {
            return Err(AlignError::InvalidConfig("steps must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(AlignError::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.ridge_lambda.is_nan() || self.ridge_lambda < 0.0 {
            return Err(AlignError::InvalidConfig("ridge lambda must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct FitReport {
    pub initial_mse: f64,
    pub final_mse: f64,
    pub pair_count: usize,
    pub steps: usize,
    pub oracle_mse: Option<f64>,
    pub frobenius_gap_to_oracle: Option<f64>,
}

/// Paired helper (`x`, width `m`) and source (`y`, width `n`) vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    input_dim: usize,
    output_dim: usize,
    inputs: Vec<f64>,
    targets: Vec<f64>,
    /// Target-vocabulary id of each pair, when collected from a partition.
    pub token_ids: Vec<TokenId>,
}

impl PairSet {
    pub fn new(input_dim: usize, output_dim: usize, inputs: Vec<f64>, targets: Vec<f64>) -> Result<Self, AlignError> {
        let len = inputs.len().checked_div(input_dim).unwrap_or(0);
        if inputs.len() != len * input_dim {
            return Err(AlignError::DimensionMismatch { expected: len * input_dim, actual: inputs.len() });
        }
        if targets.len() != len * output_dim {
            return Err(AlignError::DimensionMismatch { expected: len * output_dim, actual: targets.len() });
        }
        Ok(Self { input_dim, output_dim, inputs, targets, token_ids: Vec::new() })
    }

    pub fn from_rows(inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<Self, AlignError> {
        let m = inputs.first().map_or(0, Vec::len);
        let n = targets.first().map_or(0, Vec::len);
        if inputs.len() != targets.len() {
            return Err(AlignError::DimensionMismatch { expected: inputs.len(), actual: targets.len() });
        }
        for r in inputs {
            if r.len() != m {
                return Err(AlignError::DimensionMismatch { expected: m, actual: r.len() });
            }
        }
        for r in targets {
            if r.len() != n {
                return Err(AlignError::DimensionMismatch { expected: n, actual: r.len() });
            }
        }
        Self::new(m, n, inputs.concat(), targets.concat())
    }

    pub fn len(&self) -> usize {
        self.inputs.len().checked_div(self.input_dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn input(&self, k: usize) -> &[f64] {
        &self.inputs[k * self.input_dim..(k + 1) * self.input_dim]
    }

    pub fn target(&self, k: usize) -> &[f64] {
        &self.targets[k * self.output_dim..(k + 1) * self.output_dim]
    }
}

/// One `(helper row, source row)` pair per shared token, in partition order.
///
/// `limit` keeps a seeded uniform subset (still in partition order); a limit
/// at or above the shared count keeps everything.
pub fn collect_pairs(
    helper: &EmbeddingMatrix,
    source: &EmbeddingMatrix,
    partition: &TokenPartition,
    limit: Option<usize>,
    seed: u64,
) -> Result<PairSet, AlignError> {
    if partition.shared.is_empty() {
        return Err(AlignError::EmptyIntersection);
    }
    let mut chosen: Vec<usize> = (0..partition.shared.len()).collect();
    if let Some(k) = limit {
        if k < chosen.len() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            chosen = sample(&mut rng, partition.shared.len(), k).into_vec();
            chosen.sort_unstable();
        }
    }
    let (m, n) = (helper.dim(), source.dim());
    let mut inputs = Vec::with_capacity(chosen.len() * m);
    let mut targets = Vec::with_capacity(chosen.len() * n);
    let mut token_ids = Vec::with_capacity(chosen.len());
    for i in chosen {
        let s = &partition.shared[i];
        let (t, src) = (s.target_id as usize, s.source_id as usize);
        if t >= helper.rows() {
            return Err(AlignError::PartitionInconsistent { what: "target", id: t, rows: helper.rows() });
        }
        if src >= source.rows() {
            return Err(AlignError::PartitionInconsistent { what: "source", id: src, rows: source.rows() });
        }
        inputs.extend(helper.row(t).iter().map(|&v| v as f64));
        targets.extend(source.row(src).iter().map(|&v| v as f64));
        token_ids.push(s.target_id);
    }
    let mut pairs = PairSet::new(m, n, inputs, targets)?;
    pairs.token_ids = token_ids;
    Ok(pairs)
}

/// `x -> inv_out(W * prep(x) + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub input_dim: usize,
    pub output_dim: usize,
    /// Row-major `output_dim x input_dim`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub input_scaler: StandardScaler,
    pub output_scaler: StandardScaler,
    pub l2_normalize_inputs: bool,
}

impl AffineMap {
    /// `W = I`, `b = 0`, identity scalers, no normalization.
    pub fn identity(dim: usize) -> Self {
        let mut weight = vec![0.0; dim * dim];
        for i in 0..dim {
            weight[i * dim + i] = 1.0;
        }
        Self {
            input_dim: dim,
            output_dim: dim,
            weight,
            bias: vec![0.0; dim],
            input_scaler: StandardScaler::identity(dim),
            output_scaler: StandardScaler::identity(dim),
            l2_normalize_inputs: false,
        }
    }

    pub fn weight_row(&self, i: usize) -> &[f64] {
        &self.weight[i * self.input_dim..(i + 1) * self.input_dim]
    }

    /// Standardized (and optionally unit-length) input representation.
    pub fn prepare_input(&self, x: &[f64]) -> Result<Vec<f64>, AlignError> {
        if x.len() != self.input_dim {
            return Err(AlignError::DimensionMismatch { expected: self.input_dim, actual: x.len() });
        }
        let mut z = self.input_scaler.forward(x);
        if self.l2_normalize_inputs {
            l2_normalize(&mut z);
        }
        Ok(z)
    }

    fn affine(&self, z: &[f64]) -> Vec<f64> {
        (0..self.output_dim).map(|i| dot(self.weight_row(i), z) + self.bias[i]).collect()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>, AlignError> {
        let z = self.prepare_input(x)?;
        Ok(self.output_scaler.inverse(&self.affine(&z)))
    }

    pub fn apply_f32(&self, x: &[f32]) -> Result<Vec<f32>, AlignError> {
        let x: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        Ok(self.apply(&x)?.into_iter().map(|v| v as f32).collect())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Training data in the standardized representation shared by both solvers.
struct Prepared {
    rows: usize,
    m: usize,
    n: usize,
    /// `rows x m`, prepared inputs.
    z: Vec<f64>,
    /// `n x rows`, standardized targets stored column-wise.
    t_cols: Vec<f64>,
    input_scaler: StandardScaler,
    output_scaler: StandardScaler,
    l2: bool,
}

impl Prepared {
    fn new(pairs: &PairSet, l2: bool) -> Result<Self, AlignError> {
        let rows = pairs.len();
        if rows < 2 {
            return Err(AlignError::TooFewPairs(rows));
        }
        let (m, n) = (pairs.input_dim, pairs.output_dim);
        let input_scaler = StandardScaler::fit(&pairs.inputs, m);
        let output_scaler = StandardScaler::fit(&pairs.targets, n);
        let mut z = vec![0.0; rows * m];
        for (k, out) in z.chunks_exact_mut(m.max(1)).take(rows).enumerate() {
            input_scaler.forward_into(pairs.input(k), out);
            if l2 {
                l2_normalize(out);
            }
        }
        let mut t_cols = vec![0.0; n * rows];
        let mut buf = vec![0.0; n];
        for k in 0..rows {
            output_scaler.forward_into(pairs.target(k), &mut buf);
            for (i, v) in buf.iter().enumerate() {
                t_cols[i * rows + k] = *v;
            }
        }
        Ok(Self { rows, m, n, z, t_cols, input_scaler, output_scaler, l2 })
    }

    fn z_row(&self, k: usize) -> &[f64] {
        &self.z[k * self.m..(k + 1) * self.m]
    }

    fn target_col(&self, i: usize) -> &[f64] {
        &self.t_cols[i * self.rows..(i + 1) * self.rows]
    }

    /// Sum of squared residuals of output `i` for parameters `[w_i..., b_i]`.
    fn row_sse(&self, i: usize, params: &[f64]) -> f64 {
        let (w, b) = params.split_at(self.m);
        let t = self.target_col(i);
        (0..self.rows).map(|k| (dot(w, self.z_row(k)) + b[0] - t[k]).powi(2)).sum()
    }

    fn into_map(self, weight: Vec<f64>, bias: Vec<f64>) -> AffineMap {
        AffineMap {
            input_dim: self.m,
            output_dim: self.n,
            weight,
            bias,
            input_scaler: self.input_scaler,
            output_scaler: self.output_scaler,
            l2_normalize_inputs: self.l2,
        }
    }
}

fn check_pairs(pairs: &PairSet) -> Result<(), AlignError> {
    if pairs.len() < 2 {
        return Err(AlignError::TooFewPairs(pairs.len()));
    }
    if pairs.input_dim == 0 || pairs.output_dim == 0 {
        return Err(AlignError::DimensionMismatch { expected: 1, actual: 0 });
    }
    Ok(())
}

/// Trains `W`, `b` with full-batch Adam on the mean squared error.
///
/// The loss is separable across output dimensions and Adam is elementwise,
/// so each output row is optimized independently (and in parallel) with
/// bit-identical results to a joint update.
pub fn fit_gradient(pairs: &PairSet, cfg: &TrainConfig) -> Result<(AffineMap, FitReport), AlignError> {
    cfg.validate()?;
    check_pairs(pairs)?;
    let prep = Prepared::new(pairs, cfg.l2_normalize_inputs)?;
    let (m, n, rows) = (prep.m, prep.n, prep.rows);

    // Kaiming-style uniform init, drawn sequentially so it does not depend on threads.
    let bound = 1.0 / (m as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init: Vec<f64> = (0..n * m).map(|_| rng.random_range(-bound..bound)).collect();

    let norm = 2.0 / (rows * n) as f64;
    let results: Vec<(Vec<f64>, f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut params = init[i * m..(i + 1) * m].to_vec();
            params.push(0.0);
            let initial = prep.row_sse(i, &params);
            let mut opt = Adam::new(m + 1, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);
            let mut grad = vec![0.0; m + 1];
            let t = prep.target_col(i);
            for _ in 0..cfg.steps {
                grad.iter_mut().for_each(|g| *g = 0.0);
                let (w, b) = params.split_at(m);
                for (k, tk) in t.iter().enumerate() {
                    let z = prep.z_row(k);
                    let r = dot(w, z) + b[0] - tk;
                    for (g, zj) in grad[..m].iter_mut().zip(z) {
                        *g += r * zj;
                    }
                    grad[m] += r;
                }
                grad.iter_mut().for_each(|g| *g *= norm);
                opt.step(&mut params, &grad);
            }
            let last = prep.row_sse(i, &params);
            (params, initial, last)
        })
        .collect();

    let mut weight = Vec::with_capacity(n * m);
    let mut bias = Vec::with_capacity(n);
    let (mut initial, mut last) = (0.0, 0.0);
    for (params, a, b) in results {
        weight.extend_from_slice(&params[..m]);
        bias.push(params[m]);
        initial += a;
        last += b;
    }
    let denom = (rows * n) as f64;
    let (initial_mse, final_mse) = (initial / denom, last / denom);
    if !final_mse.is_finite() || weight.iter().chain(&bias).any(|v| !v.is_finite()) {
        return Err(AlignError::NonFiniteLoss { step: cfg.steps });
    }
    if final_mse > initial_mse {
        log::warn!("training loss increased: {initial_mse:.6e} -> {final_mse:.6e}");
    }
    let report = FitReport {
        initial_mse,
        final_mse,
        pair_count: rows,
        steps: cfg.steps,
        oracle_mse: None,
        frobenius_gap_to_oracle: None,
    };
    Ok((prep.into_map(weight, bias), report))
}

/// Exact minimizer of the ridge-regularized squared error on the same
/// standardized representation as [`fit_gradient`]. The bias is not
/// penalized.
pub fn fit_closed_form(pairs: &PairSet, ridge_lambda: f64, l2_normalize_inputs: bool) -> Result<AffineMap, AlignError> {
    check_pairs(pairs)?;
    if ridge_lambda.is_nan() || ridge_lambda < 0.0 {
        return Err(AlignError::InvalidConfig("ridge lambda must be non-negative".into()));
    }
    let prep = Prepared::new(pairs, l2_normalize_inputs)?;
    let (m, n, rows) = (prep.m, prep.n, prep.rows);
    let p = m + 1;

    // Gram matrix of [z, 1].
    let gram_rows: Vec<Vec<f64>> = (0..p)
        .into_par_iter()
        .map(|a| {
            let mut row = vec![0.0; p];
            for k in 0..rows {
                let z = prep.z_row(k);
                let za = if a < m { z[a] } else { 1.0 };
                for (b, slot) in row.iter_mut().enumerate() {
                    let zb = if b < m { z[b] } else { 1.0 };
                    *slot += za * zb;
                }
            }
            if a < m {
                row[a] += ridge_lambda;
            }
            row
        })
        .collect();
    let mut gram = gram_rows.concat();
    cholesky_in_place(&mut gram, p).ok_or(AlignError::SingularSystem { lambda: ridge_lambda })?;

    let solutions: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let t = prep.target_col(i);
            let mut rhs = vec![0.0; p];
            for (k, tk) in t.iter().enumerate() {
                let z = prep.z_row(k);
                for (r, za) in rhs[..m].iter_mut().zip(z) {
                    *r += za * tk;
                }
                rhs[m] += tk;
            }
            cholesky_solve(&gram, p, &mut rhs);
            rhs
        })
        .collect();
    let mut weight = Vec::with_capacity(n * m);
    let mut bias = Vec::with_capacity(n);
    for s in solutions {
        weight.extend_from_slice(&s[..m]);
        bias.push(s[m]);
    }
    if weight.iter().chain(&bias).any(|v| !v.is_finite()) {
        return Err(AlignError::SingularSystem { lambda: ridge_lambda });
    }
    Ok(prep.into_map(weight, bias))
}

/// Lower-triangular Cholesky factor written over the lower triangle of `a`.
/// Returns `None` when a pivot is not safely positive.
fn cholesky_in_place(a: &mut [f64], p: usize) -> Option<()> {
    let scale = (0..p).map(|i| a[i * p + i].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    for j in 0..p {
        let mut d = a[j * p + j];
        for k in 0..j {
            d -= a[j * p + k] * a[j * p + k];
        }
        if d.is_nan() || d <= 1e-13 * scale {
            return None;
        }
        let d = d.sqrt();
        a[j * p + j] = d;
        for i in j + 1..p {
            let mut s = a[i * p + j];
            for k in 0..j {
                s -= a[i * p + k] * a[j * p + k];
            }
            a[i * p + j] = s / d;
        }
    }
    Some(())
}

fn cholesky_solve(l: &[f64], p: usize, b: &mut [f64]) {
    for i in 0..p {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * p + k] * b[k];
        }
        b[i] = s / l[i * p + i];
    }
    for i in (0..p).rev() {
        let mut s = b[i];
        for k in i + 1..p {
            s -= l[k * p + i] * b[k];
        }
        b[i] = s / l[i * p + i];
    }
}

/// Training-objective MSE of `map` on `pairs`, in the standardized output space
/// of the map's own scalers.
pub fn scaled_mse(map: &AffineMap, pairs: &PairSet) -> Result<f64, AlignError> {
    if pairs.input_dim != map.input_dim {
        return Err(AlignError::DimensionMismatch { expected: map.input_dim, actual: pairs.input_dim });
    }
    if pairs.output_dim != map.output_dim {
        return Err(AlignError::DimensionMismatch { expected: map.output_dim, actual: pairs.output_dim });
    }
    let sse: Vec<f64> = (0..pairs.len())
        .into_par_iter()
        .map(|k| {
            let z = map.prepare_input(pairs.input(k)).expect("dims checked");
            let pred = map.affine(&z);
            let target = map.output_scaler.forward(pairs.target(k));
            pred.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
        })
        .collect();
    Ok(sse.iter().sum::<f64>() / (pairs.len() * pairs.output_dim) as f64)
}

/// `||A(X) - B(X)||_F / ||B(X)||_F` over the end-to-end outputs on `pairs`' inputs.
pub fn relative_output_gap(a: &AffineMap, b: &AffineMap, pairs: &PairSet) -> Result<f64, AlignError> {
    let (mut diff, mut base) = (0.0, 0.0);
    for k in 0..pairs.len() {
        let x = pairs.input(k);
        let ya = a.apply(x)?;
        let yb = b.apply(x)?;
        for (p, q) in ya.iter().zip(&yb) {
            diff += (p - q).powi(2);
            base += q * q;
        }
    }
    Ok(if base > 0.0 { (diff / base).sqrt() } else { diff.sqrt() })
}

/// Gradient fit plus the closed-form reference, with the comparison filled in.
pub fn fit_with_oracle(pairs: &PairSet, cfg: &TrainConfig) -> Result<(AffineMap, FitReport), AlignError> {
    let (map, mut report) = fit_gradient(pairs, cfg)?;
    let oracle = fit_closed_form(pairs, cfg.ridge_lambda, cfg.l2_normalize_inputs)?;
    report.oracle_mse = Some(scaled_mse(&oracle, pairs)?);
    report.frobenius_gap_to_oracle = Some(relative_output_gap(&map, &oracle, pairs)?);
    Ok((map, report))
}
