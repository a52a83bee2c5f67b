use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sae_l0::metrics::{cosine_similarity_matrix, nth_decoder_projections, variance_explained};
use sae_l0::sae::{build_ground_truth_sae, init_params, SaeParams};
use sae_l0::toy_data::{generate_feature_dictionary, sample_batch, ToyModelSpec};

fn random_sae(seed: u64) -> SaeParams<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = init_params::<f64>(12, 8, 3.0, &mut rng).unwrap();
    p.b_dec = ndarray::Array1::from_shape_fn(12, |i| (i as f64 * 0.37).sin());
    p
}

fn random_inputs(seed: u64, rows: usize) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, 12), |_| rand::Rng::random_range(&mut rng, -2.0..2.0))
}

proptest! {
    #[test]
    fn score_is_non_increasing_in_n(seed in any::<u64>(), rows in 1usize..40) {
        let p = random_sae(seed);
        let x = random_inputs(seed ^ 1, rows);
        let ns: Vec<usize> = (1..8).collect();
        let r = nth_decoder_projections(&p, x.view(), &ns).unwrap();
        for w in r.scores.windows(2) {
            prop_assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn score_scales_with_inputs_and_bias(seed in any::<u64>(), c in 0.1f64..10.0) {
        let p = random_sae(seed);
        let x = random_inputs(seed ^ 2, 16);
        let mut scaled = p.clone();
        scaled.b_dec *= c;
        let ns = [1usize, 3, 5, 7];
        let base = nth_decoder_projections(&p, x.view(), &ns).unwrap();
        let big = nth_decoder_projections(&scaled, (&x * c).view(), &ns).unwrap();
        for (a, b) in base.scores.iter().zip(&big.scores) {
            prop_assert!((b - c * a).abs() <= 1e-9 * (1.0 + (c * a).abs()));
        }
    }
}

#[test]
fn ground_truth_sae_explains_everything_with_enough_budget() {
    let dict = generate_feature_dictionary(&ToyModelSpec::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let batch = sample_batch(&dict, 4096, &mut rng).unwrap();
    let max_fires = batch
        .firings
        .rows()
        .into_iter()
        .map(|r| r.iter().filter(|&&m| m > 0.0).count())
        .max()
        .unwrap();
    let gt = build_ground_truth_sae(&dict, max_fires as f64);
    let ve = variance_explained(&gt, batch.activations.view()).unwrap();
    assert!(ve >= 0.999, "variance explained {ve}");
}

#[test]
fn ground_truth_decoder_aligns_perfectly() {
    let dict = generate_feature_dictionary(&ToyModelSpec::default()).unwrap();
    let gt = build_ground_truth_sae(&dict, 10.0);
    let a = cosine_similarity_matrix(&gt.w_dec, &dict.features).unwrap();
    for ((j, i), &c) in a.cosine.indexed_iter() {
        let target = if i == j { 1.0 } else { 0.0 };
        assert!((c - target).abs() <= 1e-6);
    }
    assert_eq!(a.features_matched(0.999), 50);
}

/// Averaged over seeds, the score from one batch of 2b rows and the mean of
/// two b-row scores agree to within 10%.
#[test]
fn score_is_stable_across_batch_sizes() {
    let dict = generate_feature_dictionary(&ToyModelSpec::default()).unwrap();
    let gt = build_ground_truth_sae(&dict, 10.0);
    // A perturbed decoder so the score is not identically zero.
    let mut p = gt.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    p.w_dec.mapv_inplace(|v| v + rand::Rng::random_range(&mut rng, -0.05..0.05));
    let b = 4096;
    let (mut whole, mut halves) = (0.0, 0.0);
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let x = sample_batch(&dict, 2 * b, &mut rng).unwrap().activations;
        let n = [12usize];
        whole += nth_decoder_projections(&p, x.view(), &n).unwrap().scores[0];
        let top = x.slice(ndarray::s![..b, ..]);
        let bottom = x.slice(ndarray::s![b.., ..]);
        halves += 0.5
            * (nth_decoder_projections(&p, top, &n).unwrap().scores[0]
                + nth_decoder_projections(&p, bottom, &n).unwrap().scores[0]);
    }
    assert!(whole.abs() > 0.0);
    assert!(((whole - halves) / whole).abs() < 0.1, "{whole} vs {halves}");
}
