#![allow(clippy::needless_range_loop)]

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rede_core::init::{
    compute_stats, compute_stats_with, init_baseline_gaussian, init_dependency_tables, read_matrix,
    sample_dependency_embeddings, write_matrix, DependencyInit, Spread, StatsOptions, BASELINE_SIGMA,
};
use rede_core::testkit::random_small_model;
use rede_core::{Mechanism, ParamGroup};

// plain-loop estimators, independent of the library's ndarray arithmetic
fn mean_of(m: &Array2<f64>) -> Vec<f64> {
    let (n, d) = m.dim();
    (0..d)
        .map(|j| (0..n).map(|i| m[(i, j)]).sum::<f64>() / n as f64)
        .collect()
}

fn cov_of(m: &Array2<f64>) -> Vec<Vec<f64>> {
    let (n, d) = m.dim();
    let mu = mean_of(m);
    (0..d)
        .map(|a| {
            (0..d)
                .map(|b| (0..n).map(|i| (m[(i, a)] - mu[a]) * (m[(i, b)] - mu[b])).sum::<f64>() / (n - 1) as f64)
                .collect()
        })
        .collect()
}

fn frobenius(a: &[Vec<f64>]) -> f64 {
    a.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
}

/// Rows `mu + A z` with a random dense mixing matrix.
fn correlated_source(rows: usize, d: usize, rng: &mut impl Rng) -> Array2<f64> {
    let mix = Array2::from_shape_simple_fn((d, d), || rng.random::<f64>() - 0.5);
    let shift = Array1::from_shape_simple_fn(d, || rng.random::<f64>() * 4.0 - 2.0);
    let z = Array2::from_shape_simple_fn((rows, d), || StandardNormal.sample(rng));
    z.dot(&mix.t()) + &shift
}

#[test]
fn stats_match_plain_estimators() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let src = correlated_source(300, 6, &mut rng);
    let stats = compute_stats(&src).unwrap();
    for (a, b) in stats.mean.iter().zip(mean_of(&src)) {
        assert!((a - b).abs() < 1e-12);
    }
    let cov = cov_of(&src);
    for i in 0..6 {
        for j in 0..6 {
            assert!((stats.covariance[(i, j)] - cov[i][j]).abs() < 1e-12);
        }
    }
    let llt = stats.cholesky.dot(&stats.cholesky.t());
    for i in 0..6 {
        for j in 0..6 {
            let expect = cov[i][j] + if i == j { stats.jitter } else { 0.0 };
            assert!((llt[(i, j)] - expect).abs() < 1e-10);
        }
        for j in i + 1..6 {
            assert_eq!(stats.cholesky[(i, j)], 0.0);
        }
    }
}

#[test]
fn sampler_recovers_mean_and_covariance() {
    let d = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let stats = compute_stats(&correlated_source(2000, d, &mut rng)).unwrap();
    let draws = sample_dependency_embeddings(&stats, 50_000, 9);
    let mu = mean_of(&draws);
    for j in 0..d {
        let se = (stats.covariance[(j, j)] / 50_000.0).sqrt();
        assert!((mu[j] - stats.mean[j]).abs() <= 5.0 * se, "coordinate {j}");
    }
    let cov = cov_of(&draws);
    let target: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| stats.covariance[(i, j)]).collect())
        .collect();
    let diff: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| cov[i][j] - target[i][j]).collect())
        .collect();
    assert!(frobenius(&diff) / frobenius(&target) <= 0.05);
}

#[test]
fn sampled_rows_have_source_norms() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let src = Array2::from_shape_simple_fn((1000, 32), || rng.random::<f64>() * 2.0 - 0.7);
    let stats = compute_stats(&src).unwrap();
    let draws = sample_dependency_embeddings(&stats, 1000, 4);
    let mean_norm = |m: &Array2<f64>| m.rows().into_iter().map(|r| r.dot(&r).sqrt()).sum::<f64>() / m.nrows() as f64;
    let (a, b) = (mean_norm(&draws), mean_norm(&src));
    assert!((a - b).abs() <= 0.1 * b, "{a} vs {b}");
}

#[test]
fn sampling_is_seeded() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let stats = compute_stats(&correlated_source(50, 4, &mut rng)).unwrap();
    assert_eq!(
        sample_dependency_embeddings(&stats, 10, 1),
        sample_dependency_embeddings(&stats, 10, 1)
    );
    assert_ne!(
        sample_dependency_embeddings(&stats, 10, 1),
        sample_dependency_embeddings(&stats, 10, 2)
    );
}

#[test]
fn rank_deficient_source_gets_jitter() {
    // 3 rows in 5 dimensions: covariance has rank 2
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let src = Array2::from_shape_simple_fn((3, 5), || rng.random::<f64>());
    let stats = compute_stats(&src).unwrap();
    assert!(stats.jitter > 0.0 && stats.jitter <= 1e-4);
    assert!(sample_dependency_embeddings(&stats, 4, 0).iter().all(|v| v.is_finite()));
}

#[test]
fn degenerate_inputs() {
    assert!(compute_stats(&Array2::zeros((1, 4))).unwrap_err().is_user_error());
    let mut bad = Array2::zeros((3, 2));
    bad[(1, 1)] = f64::NAN;
    assert!(compute_stats(&bad).is_err());
    // identical rows: zero covariance, every draw is the mean
    let same = Array2::from_shape_fn((4, 3), |(_, j)| j as f64);
    let exact = compute_stats_with(
        &same,
        StatsOptions {
            jitter: 0.0,
            diagonal: false,
        },
    )
    .unwrap();
    let draws = sample_dependency_embeddings(&exact, 5, 0);
    assert!(draws.rows().into_iter().all(|r| r.to_vec() == vec![0.0, 1.0, 2.0]));
}

#[test]
fn diagonal_option_drops_correlations() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let stats = compute_stats_with(
        &correlated_source(200, 4, &mut rng),
        StatsOptions {
            jitter: 0.0,
            diagonal: true,
        },
    )
    .unwrap();
    for i in 0..4 {
        for j in 0..4 {
            if i != j {
                assert_eq!(stats.covariance[(i, j)], 0.0);
                assert_eq!(stats.cholesky[(i, j)], 0.0);
            }
        }
    }
}

#[test]
fn baseline_gaussian_spread() {
    let sd = init_baseline_gaussian(200, 100, BASELINE_SIGMA, Spread::StdDev, 1);
    let var = init_baseline_gaussian(200, 100, BASELINE_SIGMA, Spread::Variance, 1);
    let std_of = |m: &Array2<f64>| (m.iter().map(|v| v * v).sum::<f64>() / m.len() as f64).sqrt();
    assert!((std_of(&sd) - 0.1).abs() < 0.005);
    assert!((std_of(&var) - 0.1f64.sqrt()).abs() < 0.01);
}

#[test]
fn dependency_tables_follow_token_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut model = random_small_model(Mechanism::Rede, 2, 8, &mut rng);
    model.config.d_r = 8;
    let mut fresh = rede_core::EncoderModel::zeros(&model.config).unwrap();
    fresh.token_embedding.assign(&model.token_embedding);
    let before: Vec<_> = fresh
        .tensors()
        .into_iter()
        .filter(|(_, g, _)| *g == ParamGroup::Base)
        .map(|(n, _, t)| (n, t.clone()))
        .collect();
    init_dependency_tables(&mut fresh, DependencyInit::Stats { diagonal: false }, 3).unwrap();
    let after: Vec<_> = fresh
        .tensors()
        .into_iter()
        .filter(|(_, g, _)| *g == ParamGroup::Base)
        .map(|(n, _, t)| (n, t.clone()))
        .collect();
    assert_eq!(before, after);
    let stats = compute_stats(&model.token_embedding).unwrap();
    let expected = sample_dependency_embeddings(&stats, fresh.config.bucket_count(), 3);
    assert_eq!(fresh.dep_tables[0], expected);

    // stats init needs table width equal to the embedding width
    let mut narrow = random_small_model(Mechanism::Rede, 1, 8, &mut rng);
    assert!(init_dependency_tables(&mut narrow, DependencyInit::default(), 0).is_err());
}

#[test]
fn npy_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.npy");
    let m = Array2::from_shape_fn((3, 4), |(i, j)| i as f64 * 0.5 - j as f64);
    write_matrix(&path, &m).unwrap();
    assert_eq!(read_matrix(&path).unwrap(), m);
    std::fs::write(&path, b"junk").unwrap();
    assert!(read_matrix(&path).is_err());
}
