use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sae_l0::toy_data::{
    empirical_l0, expected_l0, firing_rates, generate_feature_dictionary, sample_batch, ToyModelSpec,
};

#[test]
fn copula_marginals_within_four_sigma() {
    let dict = generate_feature_dictionary(&ToyModelSpec::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = 100_000;
    let rates = firing_rates(&sample_batch(&dict, n, &mut rng).unwrap());
    for (i, (&r, &p)) in rates.iter().zip(dict.probs.iter()).enumerate() {
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((r - p).abs() <= 4.0 * sigma, "feature {i}: rate {r} vs {p}");
    }
}

#[test]
fn first_feature_fires_at_its_marginal() {
    let dict = generate_feature_dictionary(&ToyModelSpec::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let rates = firing_rates(&sample_batch(&dict, 100_000, &mut rng).unwrap());
    assert!((rates[0] - 0.345).abs() <= 0.005, "rate {}", rates[0]);
}

#[test]
fn empirical_l0_converges_to_sum_of_marginals() {
    let dict = generate_feature_dictionary(&ToyModelSpec::default()).unwrap();
    let expected = expected_l0(&dict);
    assert!((expected - 9.875).abs() < 1e-6);
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let l0 = empirical_l0(&dict, 1_000_000, &mut rng).unwrap();
    assert!((l0 - expected).abs() <= 0.05, "empirical {l0} vs {expected}");
}

#[test]
fn activations_are_firings_times_features() {
    let dict = generate_feature_dictionary(&ToyModelSpec::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let b = sample_batch(&dict, 500, &mut rng).unwrap();
    let rebuilt = b.firings.dot(&dict.features);
    for (a, r) in b.activations.iter().zip(rebuilt.iter()) {
        assert!((a - r).abs() <= 1e-5);
    }
}

/// Covariance of the two firing indicators across rows.
fn firing_covariance(firings: &Array2<f32>, i: usize, j: usize) -> f64 {
    let n = firings.nrows() as f64;
    let fi = firings.column(i).mapv(|v| (v > 0.0) as u8 as f64);
    let fj = firings.column(j).mapv(|v| (v > 0.0) as u8 as f64);
    (&fi * &fj).sum() / n - fi.sum() / n * (fj.sum() / n)
}

#[test]
fn strongest_correlations_show_up_in_firings() {
    let spec = ToyModelSpec {
        correlation_strength: 0.6,
        ..Default::default()
    };
    let dict = generate_feature_dictionary(&spec).unwrap();
    let n = dict.n_features();
    let mut pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    pairs.sort_by(|a, b| {
        dict.correlation[[b.0, b.1]]
            .abs()
            .total_cmp(&dict.correlation[[a.0, a.1]].abs())
    });
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let batch = sample_batch(&dict, 100_000, &mut rng).unwrap();
    for &(i, j) in &pairs[..2] {
        let c = dict.correlation[[i, j]];
        let cov = firing_covariance(&batch.firings, i, j);
        assert_eq!(cov.signum(), c.signum(), "pair ({i},{j}): corr {c}, cov {cov}");
    }
}

#[test]
fn dictionaries_and_batches_are_deterministic() {
    let spec = ToyModelSpec {
        seed: 99,
        ..Default::default()
    };
    let a = generate_feature_dictionary(&spec).unwrap();
    let b = generate_feature_dictionary(&spec).unwrap();
    assert_eq!(a.features, b.features);
    assert_eq!(a.correlation, b.correlation);
    let x = sample_batch(&a, 64, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let y = sample_batch(&b, 64, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(x.activations, y.activations);
    assert_eq!(x.firings, y.firings);
}

#[test]
fn features_stay_orthonormal_across_seeds() {
    for seed in 0..5 {
        let dict = generate_feature_dictionary(&ToyModelSpec {
            seed,
            ..Default::default()
        })
        .unwrap();
        let gram = dict.features.mapv(f64::from).dot(&dict.features.mapv(f64::from).t());
        for ((i, j), &g) in gram.indexed_iter() {
            let target = if i == j { 1.0 } else { 0.0 };
            assert!((g - target).abs() <= 1e-6, "seed {seed} gram[{i},{j}] = {g}");
        }
    }
}
