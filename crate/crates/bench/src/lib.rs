//! Fixtures shared by the benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vocabforge::synth::{normal_matrix, random_bpe, random_text};
use vocabforge::{EmbeddingMatrix, MarkerConvention, PairSet, TokenizerModel};

pub const LETTERS: &str = "abcdefghilmnoprstuvz";

pub fn tokenizer(merges: usize) -> TokenizerModel {
    random_bpe(LETTERS, MarkerConvention::MetaSpace, merges, 1)
}

pub fn corpus(docs: usize, len: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    (0..docs).map(|_| random_text(LETTERS, len, &mut rng)).collect()
}

/// Noiseless linear pairs, `rows` of them, `dim -> dim`.
pub fn pairs(rows: usize, dim: usize) -> PairSet {
    let x = normal_matrix(rows, dim, 3);
    let a = normal_matrix(dim, dim, 4);
    let mut inputs = Vec::with_capacity(rows * dim);
    let mut targets = Vec::with_capacity(rows * dim);
    for r in 0..rows {
        let xr = x.row(r);
        inputs.extend(xr.iter().map(|&v| v as f64));
        targets.extend((0..dim).map(|i| a.row(i).iter().zip(xr).map(|(w, v)| (*w * *v) as f64).sum::<f64>()));
    }
    PairSet::new(dim, dim, inputs, targets).expect("consistent shapes")
}

pub fn matrices(rows: usize, dim: usize) -> (EmbeddingMatrix, EmbeddingMatrix) {
    (normal_matrix(rows, dim, 5), normal_matrix(rows, dim, 6))
}
