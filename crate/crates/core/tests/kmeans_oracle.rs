//! k-means against exhaustive search over every 2-partition.

mod common;

use common::{kmeans_oracle_trials, sse_matches};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tunelab::kmeans::{kmeans_fit, KMeansConfig};

#[test]
fn matches_brute_force_on_small_instances() {
    for (trial, (fit, oracle)) in kmeans_oracle_trials(2024, 200).into_iter().enumerate() {
        assert!(sse_matches(fit, oracle), "trial {trial}: kmeans {fit} vs optimum {oracle}");
    }
}

#[test]
fn sse_never_increases_across_iterations() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..30 {
        let pts: Vec<Vec<f64>> = (0..60)
            .map(|_| (0..3).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let cfg = KMeansConfig {
            k: 1 + trial % 9,
            n_init: 1,
            ..KMeansConfig::default()
        };
        let fit = kmeans_fit(&pts, &cfg, trial as u64).unwrap();
        for w in fit.sse_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "trial {trial}: {:?}", fit.sse_history);
        }
    }
}

#[test]
fn centroids_are_member_means_and_no_cluster_is_empty() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pts: Vec<Vec<f64>> = (0..200)
        .map(|_| (0..4).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();
    let cfg = KMeansConfig {
        k: 16,
        ..KMeansConfig::default()
    };
    let fit = kmeans_fit(&pts, &cfg, 3).unwrap();
    for (j, c) in fit.centroids.iter().enumerate() {
        let members: Vec<&Vec<f64>> = pts
            .iter()
            .zip(&fit.assignments)
            .filter(|(_, &a)| a == j)
            .map(|(p, _)| p)
            .collect();
        assert!(!members.is_empty());
        for d in 0..4 {
            let mean = members.iter().map(|m| m[d]).sum::<f64>() / members.len() as f64;
            assert!((c[d] - mean).abs() < 1e-9);
        }
    }
}

#[test]
fn fixed_seed_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pts: Vec<Vec<f64>> = (0..100)
        .map(|_| (0..2).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();
    let cfg = KMeansConfig {
        k: 5,
        ..KMeansConfig::default()
    };
    assert_eq!(kmeans_fit(&pts, &cfg, 4).unwrap(), kmeans_fit(&pts, &cfg, 4).unwrap());
}
