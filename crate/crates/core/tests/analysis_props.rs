use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vocabforge::analysis::{
    fertility, param_report, relative_similarity, select_anchors, AnalysisError, Projection,
};
use vocabforge::embedding::EmbeddingMatrix;
use vocabforge::synth::{normal_matrix, random_bpe, random_text};
use vocabforge::tokenizer::{MarkerConvention, Vocabulary};

/// Straight-line reimplementation: plain loops, f64, no shared helpers.
fn brute_similarity(a: &EmbeddingMatrix, b: &EmbeddingMatrix, anchors: &[u32]) -> f64 {
    fn cos(x: &[f64], y: &[f64]) -> f64 {
        let mut d = 0.0;
        let mut nx = 0.0;
        let mut ny = 0.0;
        for i in 0..x.len() {
            d += x[i] * y[i];
            nx += x[i] * x[i];
            ny += y[i] * y[i];
        }
        d / (nx.sqrt() * ny.sqrt())
    }
    fn row(m: &EmbeddingMatrix, i: usize) -> Vec<f64> {
        m.row(i).iter().map(|&v| v as f64).collect()
    }
    let mut total = 0.0;
    for t in 0..a.rows() {
        let ra: Vec<f64> = anchors.iter().map(|&k| cos(&row(a, t), &row(a, k as usize))).collect();
        let rb: Vec<f64> = anchors.iter().map(|&k| cos(&row(b, t), &row(b, k as usize))).collect();
        total += cos(&ra, &rb);
    }
    100.0 * total / a.rows() as f64
}

fn permuted_rows(m: &EmbeddingMatrix, seed: u64) -> EmbeddingMatrix {
    let mut order: Vec<usize> = (0..m.rows()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    EmbeddingMatrix::from_rows(&order.iter().map(|&i| m.row(i).to_vec()).collect::<Vec<_>>()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fertility_ignores_document_order_and_sharding(model_seed in 0u64..500, text_seed: u64) {
        let model = random_bpe("abcdeilnost", MarkerConvention::MetaSpace, 50, model_seed);
        let mut rng = ChaCha8Rng::seed_from_u64(text_seed);
        let mut docs: Vec<String> = (0..20).map(|_| random_text("abcdeilnost", 50, &mut rng)).collect();
        let whole = fertility(&model, &docs, false).unwrap();
        docs.shuffle(&mut rng);
        let shuffled = fertility(&model, &docs, false).unwrap();
        prop_assert_eq!(whole.token_count, shuffled.token_count);
        prop_assert_eq!(whole.word_count, shuffled.word_count);
        let (left, right) = docs.split_at(7);
        let (l, r) = (fertility(&model, left, false).unwrap(), fertility(&model, right, false).unwrap());
        prop_assert_eq!(l.token_count + r.token_count, whole.token_count);
        prop_assert_eq!(l.word_count + r.word_count, whole.word_count);
        prop_assert_eq!(whole.fertility, whole.token_count as f64 / whole.word_count as f64);
        prop_assert!(whole.fertility >= 1.0);
    }

    #[test]
    fn similarity_is_symmetric_and_rescale_invariant(seed: u64, scale in 0.01f32..100.0) {
        let a = normal_matrix(40, 6, seed);
        let b = normal_matrix(40, 6, seed ^ 1);
        let anchors = [1, 5, 9, 20];
        let ab = relative_similarity(&a, &b, &anchors, None, Projection::Cosine).unwrap().score;
        let ba = relative_similarity(&b, &a, &anchors, None, Projection::Cosine).unwrap().score;
        prop_assert!((ab - ba).abs() < 1e-9);
        // Per-row positive rescaling of `a`.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scaled: Vec<Vec<f32>> = (0..40)
            .map(|i| {
                let s = scale * rand::Rng::random_range(&mut rng, 0.5f32..2.0);
                a.row(i).iter().map(|v| v * s).collect()
            })
            .collect();
        let a2 = EmbeddingMatrix::from_rows(&scaled).unwrap();
        let a2b = relative_similarity(&a2, &b, &anchors, None, Projection::Cosine).unwrap().score;
        prop_assert!((ab - a2b).abs() < 1e-4);
    }

    #[test]
    fn shuffled_rows_match_brute_force(seed: u64) {
        let a = normal_matrix(64, 8, seed);
        let b = permuted_rows(&a, seed ^ 3);
        let anchors: Vec<u32> = (0..16).map(|k| k * 4).collect();
        let fast = relative_similarity(&a, &b, &anchors, None, Projection::Cosine).unwrap().score;
        prop_assert!((fast - brute_similarity(&a, &b, &anchors)).abs() < 1e-6);
        prop_assert!(fast < 90.0, "{}", fast);
    }

    #[test]
    fn param_delta_is_exact(before in 1u64..300_000, after in 1u64..300_000, dim in 1u64..16_384, tied: bool, base in 0u64..10_000_000_000) {
        let r = param_report(before, after, dim, tied, base);
        let k = if tied { 1 } else { 2 };
        prop_assert_eq!(r.delta as i128, (before as i128 - after as i128) * dim as i128 * k);
        prop_assert_eq!(r.total_before as i128 - r.total_after as i128, r.delta as i128);
    }

    #[test]
    fn anchors_are_a_function_of_their_inputs(seed: u64) {
        let tokens: Vec<String> = (0..50).map(|i| if i % 3 == 0 { format!("▁w{i}") } else { format!("p{i}") }).collect();
        let v = Vocabulary::from_tokens(tokens).unwrap();
        let a = select_anchors(&v, MarkerConvention::MetaSpace, 5, 7, seed).unwrap();
        prop_assert_eq!(&a, &select_anchors(&v, MarkerConvention::MetaSpace, 5, 7, seed).unwrap());
        prop_assert_eq!(a.len(), 12);
        let prefix = a.iter().filter(|&&id| v.token(id).unwrap().starts_with('▁')).count();
        prop_assert_eq!(prefix, 5);
    }
}

#[test]
fn self_similarity_and_uniform_scaling() {
    let a = normal_matrix(64, 8, 1);
    let anchors: Vec<u32> = (0..8).collect();
    let s = relative_similarity(&a, &a, &anchors, None, Projection::Cosine).unwrap();
    assert!((s.score - 100.0).abs() < 1e-4);
    let b = EmbeddingMatrix::new(64, 8, a.data().iter().map(|v| 3.0 * v).collect()).unwrap();
    let s = relative_similarity(&a, &b, &anchors, None, Projection::Cosine).unwrap();
    assert!((s.score - 100.0).abs() < 1e-4);
    let d = relative_similarity(&a, &a, &anchors, None, Projection::Dot).unwrap();
    assert!((d.score - 100.0).abs() < 1e-4);
}

#[test]
fn default_anchor_count_is_256() {
    let tokens: Vec<String> = (0..1000).map(|i| if i % 2 == 0 { format!("▁t{i}") } else { format!("t{i}") }).collect();
    let v = Vocabulary::from_tokens(tokens).unwrap();
    assert_eq!(select_anchors(&v, MarkerConvention::MetaSpace, 128, 128, 0).unwrap().len(), 256);
    let one = Vocabulary::from_tokens(["▁a", "b", "c"]).unwrap();
    assert!(matches!(
        select_anchors(&one, MarkerConvention::MetaSpace, 2, 1, 0),
        Err(AnalysisError::InsufficientTokens { .. })
    ));
}

#[test]
fn llama_to_32k_vocabulary_delta() {
    let r = param_report(128_256, 32_768, 4096, false, 7_500_000_000);
    assert_eq!(r.delta, 782_237_696);
}
