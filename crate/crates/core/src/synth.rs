//! Seeded synthetic fixtures for tests and benchmarks.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::embedding::EmbeddingMatrix;
use crate::tokenizer::{
    byte_to_char, partition, MarkerConvention, MatchMode, TokenId, TokenPartition, TokenizerModel, Vocabulary,
    META_SPACE,
};

/// `rows x dim` matrix of standard normal entries.
pub fn normal_matrix(rows: usize, dim: usize, seed: u64) -> EmbeddingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    EmbeddingMatrix::new(rows, dim, data).expect("finite")
}

/// Alphabet of a random tokenizer: its single-character pieces.
pub fn base_alphabet(marker: MarkerConvention, letters: &str) -> Vec<String> {
    match marker {
        MarkerConvention::ByteMarker => (0..=255u8).map(|b| byte_to_char(b).to_string()).collect(),
        MarkerConvention::MetaSpace => {
            std::iter::once(META_SPACE).chain(letters.chars()).map(|c| c.to_string()).collect()
        }
        MarkerConvention::None => std::iter::once(' ').chain(letters.chars()).map(|c| c.to_string()).collect(),
    }
}

/// BPE model over `letters` (all bytes when byte-level) with `n_merges`
/// random merges. A merge never puts a word-boundary marker after the
/// first position.
pub fn random_bpe(letters: &str, marker: MarkerConvention, n_merges: usize, seed: u64) -> TokenizerModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tokens = base_alphabet(marker, letters);
    let mut known: std::collections::HashSet<String> = tokens.iter().cloned().collect();
    let pool: Vec<String> = match marker {
        MarkerConvention::ByteMarker => {
            let mut p: Vec<String> = letters.bytes().map(|b| byte_to_char(b).to_string()).collect();
            p.push(byte_to_char(b' ').to_string());
            p
        }
        _ => tokens.clone(),
    };
    let mut candidates = pool;
    let mut merges = Vec::new();
    let mark = marker.marker();
    let mut attempts = 0;
    while merges.len() < n_merges && attempts < n_merges * 50 {
        attempts += 1;
        let a = candidates.choose(&mut rng).expect("non-empty").clone();
        let b = candidates.choose(&mut rng).expect("non-empty").clone();
        if mark.is_some_and(|m| b.starts_with(m)) {
            continue;
        }
        let joined = format!("{a}{b}");
        if known.contains(&joined) {
            continue;
        }
        known.insert(joined.clone());
        tokens.push(joined.clone());
        if rng.random_bool(0.7) {
            candidates.push(joined);
        }
        merges.push((a, b));
    }
    let vocab = Vocabulary::from_tokens(tokens).expect("distinct tokens");
    TokenizerModel::new(vocab, &merges, marker).expect("merges are closed over the vocabulary")
}

/// Random text over `letters` and single spaces, never starting with a space.
pub fn random_text(letters: &str, len: usize, rng: &mut impl Rng) -> String {
    let chars: Vec<char> = letters.chars().collect();
    let mut s = String::with_capacity(len);
    for i in 0..len {
        if i > 0 && rng.random_bool(0.15) && !s.ends_with(' ') {
            s.push(' ');
        } else {
            s.push(chars[rng.random_range(0..chars.len())]);
        }
    }
    s
}

/// Source space that is an exact affine image of a helper space on the
/// shared tokens: `E_s[shared] = A E_h[shared] + c`.
pub struct AffineFixture {
    pub source: EmbeddingMatrix,
    pub helper: EmbeddingMatrix,
    pub source_tokenizer: TokenizerModel,
    pub target_tokenizer: TokenizerModel,
    pub partition: TokenPartition,
    /// Row-major `n x m`.
    pub a: Vec<f64>,
    pub c: Vec<f64>,
}

impl AffineFixture {
    /// `m`: helper dim, `n`: source dim. The source vocabulary also holds
    /// `extra` tokens absent from the target.
    pub fn new(m: usize, n: usize, shared: usize, novel: usize, extra: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut target_tokens: Vec<String> =
            (0..shared).map(|i| format!("s{i}")).chain((0..novel).map(|i| format!("n{i}"))).collect();
        target_tokens.shuffle(&mut rng);
        let mut source_tokens: Vec<String> =
            (0..shared).map(|i| format!("s{i}")).chain((0..extra).map(|i| format!("x{i}"))).collect();
        source_tokens.shuffle(&mut rng);

        let scale = 1.0 / (m as f64).sqrt();
        let a: Vec<f64> = (0..n * m).map(|_| { let z: f64 = StandardNormal.sample(&mut rng); scale * z }).collect();
        let c: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let helper = normal_matrix(target_tokens.len(), m, rng.random());

        let source_vocab = Vocabulary::from_tokens(source_tokens.iter().cloned()).expect("distinct");
        let target_vocab = Vocabulary::from_tokens(target_tokens.iter().cloned()).expect("distinct");
        let partition =
            partition(&source_vocab, &target_vocab, MarkerConvention::None, MarkerConvention::None, MatchMode::Exact);

        let mut data: Vec<f32> = (0..source_tokens.len() * n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut fixture_rows = |src: usize, h: &[f32]| {
            let y = apply_affine(&a, &c, h);
            for (slot, v) in data[src * n..(src + 1) * n].iter_mut().zip(y) {
                *slot = v as f32;
            }
        };
        for s in &partition.shared {
            fixture_rows(s.source_id as usize, helper.row(s.target_id as usize));
        }
        let source = EmbeddingMatrix::new(source_tokens.len(), n, data).expect("finite");
        let none: [(&str, &str); 0] = [];
        Self {
            source,
            helper,
            source_tokenizer: TokenizerModel::new(source_vocab, &none, MarkerConvention::None).expect("valid"),
            target_tokenizer: TokenizerModel::new(target_vocab, &none, MarkerConvention::None).expect("valid"),
            partition,
            a,
            c,
        }
    }

    /// `A E_h[id] + c`.
    pub fn expected(&self, id: TokenId) -> Vec<f64> {
        apply_affine(&self.a, &self.c, self.helper.row(id as usize))
    }
}

fn apply_affine(a: &[f64], c: &[f64], x: &[f32]) -> Vec<f64> {
    let m = x.len();
    c.iter()
        .enumerate()
        .map(|(i, ci)| ci + a[i * m..(i + 1) * m].iter().zip(x).map(|(w, v)| w * *v as f64).sum::<f64>())
        .collect()
}
