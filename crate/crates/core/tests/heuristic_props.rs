use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vocabforge::embedding::{stats, EmbeddingMatrix, EmbeddingStats};
use vocabforge::heuristics::{
    adapt, adapt_untied, assemble, g_fvt, g_random, mean_of_rows, partition_for, ClpInitializer, HeuristicConfig, HeuristicError,
    Method, NegativePolicy, Provenance, RandomMoments,
};
use vocabforge::synth::{normal_matrix, random_bpe, AffineFixture};
use vocabforge::tokenizer::{piece_to_bytes, MarkerConvention, NovelToken, Vocabulary};
use vocabforge::{fit_closed_form, collect_pairs, TokenizerModel, TrainConfig};

struct Instance {
    source_tok: TokenizerModel,
    target_tok: TokenizerModel,
    source: EmbeddingMatrix,
    helper: EmbeddingMatrix,
}

fn instance(seed: u64) -> Instance {
    let markers = [MarkerConvention::MetaSpace, MarkerConvention::ByteMarker];
    let source_tok = random_bpe("abcdef", markers[(seed % 2) as usize], 25, seed);
    let target_tok = random_bpe("abcdef", markers[(seed / 2 % 2) as usize], 25, seed.wrapping_add(7));
    let source = normal_matrix(source_tok.vocab().len(), 4, seed ^ 0xA5);
    let helper = normal_matrix(target_tok.vocab().len(), 3, seed ^ 0x5A);
    Instance { source_tok, target_tok, source, helper }
}

fn methods() -> impl Strategy<Value = Method> {
    prop_oneof![Just(Method::Random), Just(Method::Fvt), Just(Method::Clp), Just(Method::Sava)]
}

fn quick_cfg(method: Method, seed: u64) -> HeuristicConfig {
    HeuristicConfig { method, seed, train: TrainConfig { steps: 20, ..TrainConfig::default() }, ..HeuristicConfig::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn shared_rows_are_copied_bit_exactly(seed in 0u64..10_000, method in methods()) {
        let inst = instance(seed);
        let cfg = quick_cfg(method, seed);
        let (out, report) = adapt(&inst.source, &inst.source_tok, &inst.target_tok, Some(&inst.helper), &cfg).unwrap();
        let part = partition_for(&inst.source_tok, &inst.target_tok, cfg.match_mode);
        for s in &part.shared {
            let a: Vec<u32> = out.row(s.target_id as usize).iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = inst.source.row(s.source_id as usize).iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
        prop_assert_eq!(out.rows(), inst.target_tok.vocab().len());
        prop_assert_eq!(out.dim(), inst.source.dim());
        prop_assert!(out.data().iter().all(|v| v.is_finite()));
        prop_assert_eq!(report.copied_count, part.shared.len());
        prop_assert_eq!(report.copied_count + report.initialized_count + report.fallback_count, out.rows());
    }

    #[test]
    fn fvt_matches_brute_force_mean(seed in 0u64..10_000) {
        let inst = instance(seed);
        let part = partition_for(&inst.source_tok, &inst.target_tok, Default::default());
        let marker = inst.target_tok.marker();
        for n in &part.novel {
            let bytes = piece_to_bytes(&n.token, marker);
            let Ok(ids) = inst.source_tok.tokenize_bytes(&bytes) else {
                let err = g_fvt(&n.token, marker, &inst.source_tok, &inst.source).unwrap_err();
                prop_assert!(matches!(err, HeuristicError::FallbackRequired(_)));
                continue;
            };
            let row = g_fvt(&n.token, marker, &inst.source_tok, &inst.source).unwrap();
            if ids.len() == 1 {
                prop_assert_eq!(row.as_slice(), inst.source.row(ids[0] as usize));
            }
            for (j, v) in row.iter().enumerate() {
                let mean = ids.iter().map(|&i| inst.source.row(i as usize)[j] as f64).sum::<f64>() / ids.len() as f64;
                prop_assert!((*v as f64 - mean).abs() <= 1e-7 * mean.abs().max(1.0), "{} vs {}", v, mean);
            }
        }
    }

    #[test]
    fn fvt_mean_ignores_subtoken_order(seed: u64, len in 1usize..12) {
        let m = normal_matrix(20, 5, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ids: Vec<u32> = (0..len).map(|_| rand::Rng::random_range(&mut rng, 0..20)).collect();
        let a = mean_of_rows(&m, &ids).unwrap();
        ids.shuffle(&mut rng);
        let b = mean_of_rows(&m, &ids).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn clp_weights_normalize_and_stay_in_hull(seed in 0u64..10_000, top_k in 0usize..6, policy_idx in 0usize..3) {
        let inst = instance(seed);
        let policy = [NegativePolicy::ClampZero, NegativePolicy::ShiftMin, NegativePolicy::Absolute][policy_idx];
        let cfg = HeuristicConfig { method: Method::Clp, clp_top_k: top_k, clp_negative_policy: policy, ..HeuristicConfig::default() };
        let part = partition_for(&inst.source_tok, &inst.target_tok, cfg.match_mode);
        let clp = ClpInitializer::new(&inst.source, &inst.helper, &part, &cfg).unwrap();
        let dim = inst.source.dim();
        let (mut lo, mut hi) = (vec![f64::INFINITY; dim], vec![f64::NEG_INFINITY; dim]);
        for s in &part.shared {
            for (j, v) in inst.source.row(s.source_id as usize).iter().enumerate() {
                lo[j] = lo[j].min(*v as f64);
                hi[j] = hi[j].max(*v as f64);
            }
        }
        for n in &part.novel {
            let Ok(w) = clp.weights(n.target_id) else { continue };
            let sum: f64 = w.iter().map(|(_, w)| w).sum();
            prop_assert!((sum - 1.0).abs() < 1e-6);
            prop_assert!(w.iter().all(|(_, w)| *w >= 0.0));
            if top_k > 0 {
                prop_assert!(w.len() <= top_k);
            }
            if policy == NegativePolicy::ClampZero {
                let row = clp.row(n.target_id).unwrap();
                for j in 0..dim {
                    let v = row[j] as f64;
                    prop_assert!(v >= lo[j] - 1e-6 && v <= hi[j] + 1e-6, "coordinate {} = {} outside [{}, {}]", j, v, lo[j], hi[j]);
                }
            }
        }
    }

    #[test]
    fn random_rows_depend_only_on_seed_and_id(seed: u64, ids in proptest::collection::vec(0u32..5000, 1..40)) {
        let m = normal_matrix(30, 6, seed);
        let s = stats(&m).unwrap();
        let forward: Vec<Vec<f32>> = ids.iter().map(|&i| g_random(i, &s, RandomMoments::PerDimension, seed)).collect();
        let mut order: Vec<usize> = (0..ids.len()).collect();
        order.reverse();
        for k in order {
            prop_assert_eq!(&g_random(ids[k], &s, RandomMoments::PerDimension, seed), &forward[k]);
        }
    }

    #[test]
    fn assembly_is_thread_count_independent(seed in 0u64..10_000, method in methods()) {
        let inst = instance(seed);
        let cfg = quick_cfg(method, seed);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
                adapt(&inst.source, &inst.source_tok, &inst.target_tok, Some(&inst.helper), &cfg).unwrap().0
            })
        };
        prop_assert_eq!(run(1), run(3));
    }
}

#[test]
fn random_moments_recovered_from_ten_thousand_draws() {
    let s = EmbeddingStats {
        rows: 1,
        dim: 1,
        mean: vec![0.0],
        variance: vec![1.0],
        scalar_mean: 0.0,
        scalar_variance: 1.0,
    };
    for moments in [RandomMoments::PerDimension, RandomMoments::Scalar] {
        let draws: Vec<f64> = (0..10_000u32).map(|i| g_random(i, &s, moments, 3)[0] as f64).collect();
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.05, "{mean}");
        assert!((var - 1.0).abs() < 0.05, "{var}");
    }
}

#[test]
fn fvt_five_subtokens() {
    let source_tok = TokenizerModel::new(
        Vocabulary::from_tokens(["a", "b", "c", "d", "e"]).unwrap(),
        &[] as &[(&str, &str)],
        MarkerConvention::None,
    )
    .unwrap();
    let m = normal_matrix(5, 16, 99);
    let row = g_fvt("ecbda", MarkerConvention::None, &source_tok, &m).unwrap();
    for (j, v) in row.iter().enumerate() {
        let mean = (0..5).map(|i| m.row(i)[j] as f64).sum::<f64>() / 5.0;
        assert!((*v as f64 - mean).abs() < 1e-7, "{v} vs {mean}");
    }
}

#[test]
fn clp_midpoint_of_two_equally_similar_tokens() {
    // Novel helper row at 45 degrees between shared tokens 0 and 1, orthogonal to 2.
    let sv = Vocabulary::from_tokens(["p", "q", "r"]).unwrap();
    let tv = Vocabulary::from_tokens(["p", "q", "r", "new"]).unwrap();
    let part = vocabforge::partition(&sv, &tv, MarkerConvention::None, MarkerConvention::None, Default::default());
    let helper = EmbeddingMatrix::from_rows(&[
        [1.0f32, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.7, 0.7, 0.0],
    ])
    .unwrap();
    let source = normal_matrix(3, 6, 5);
    let clp = ClpInitializer::new(&source, &helper, &part, &HeuristicConfig::default()).unwrap();
    let row = clp.row(3).unwrap();
    for (j, v) in row.iter().enumerate() {
        let mid = 0.5 * (source.row(0)[j] as f64 + source.row(1)[j] as f64);
        assert!((*v as f64 - mid).abs() < 1e-6);
    }
    let g = |t: &NovelToken| clp.row(t.target_id);
    let (out, report) = assemble(&source, &part, &g, None).unwrap();
    assert_eq!(out.row(3), row.as_slice());
    assert_eq!(report.per_token[3].provenance, Provenance::Heuristic);
}

#[test]
fn sava_recovers_doubling_on_novel_tokens() {
    let f = AffineFixture::new(8, 8, 512, 128, 0, 17);
    // Overwrite the shared source rows with exactly 2 * helper.
    let mut data = f.source.data().to_vec();
    for s in &f.partition.shared {
        for (j, v) in f.helper.row(s.target_id as usize).iter().enumerate() {
            data[s.source_id as usize * 8 + j] = 2.0 * v;
        }
    }
    let source = EmbeddingMatrix::new(f.source.rows(), 8, data).unwrap();
    let cfg = HeuristicConfig {
        method: Method::Sava,
        train: TrainConfig { steps: 5000, l2_normalize_inputs: false, ..TrainConfig::default() },
        ..HeuristicConfig::default()
    };
    let (out, report) = adapt(&source, &f.source_tokenizer, &f.target_tokenizer, Some(&f.helper), &cfg).unwrap();
    assert_eq!(report.initialized_count, 128);
    let pairs = collect_pairs(&f.helper, &source, &f.partition, None, 0).unwrap();
    let oracle = fit_closed_form(&pairs, 1e-6, false).unwrap();
    let mut worst: f64 = 0.0;
    for n in &f.partition.novel {
        let h = f.helper.row(n.target_id as usize);
        let expected = oracle.apply_f32(h).unwrap();
        for ((got, want), hv) in out.row(n.target_id as usize).iter().zip(&expected).zip(h) {
            assert!((want - 2.0 * hv).abs() < 1e-4, "closed form is off: {want} vs {}", 2.0 * hv);
            worst = worst.max((got - 2.0 * hv).abs() as f64);
        }
    }
    assert!(worst < 1e-3, "max error {worst}");
}

#[test]
fn untied_head_is_adapted_with_the_same_partition() {
    let inst = instance(3);
    let head = normal_matrix(inst.source.rows(), inst.source.dim(), 77);
    let cfg = quick_cfg(Method::Sava, 1);
    let out = adapt_untied(&inst.source, &head, &inst.source_tok, &inst.target_tok, Some(&inst.helper), None, &cfg).unwrap();
    let part = partition_for(&inst.source_tok, &inst.target_tok, cfg.match_mode);
    for s in &part.shared {
        assert_eq!(out.head.row(s.target_id as usize), head.row(s.source_id as usize));
        assert_eq!(out.embeddings.row(s.target_id as usize), inst.source.row(s.source_id as usize));
    }
    assert_eq!(out.head_report.copied_count, out.embeddings_report.copied_count);
    assert_ne!(out.head_report.fit_report, out.embeddings_report.fit_report);
}
