//! Initialization of dependency embeddings from word-embedding statistics.
//!
//! Rows are drawn from `N(mu, C)` where `mu` and `C` are the mean and sample
//! covariance of a word-embedding table, so the dependency embeddings start
//! at the same magnitude as the token embeddings they are compared against.

use std::path::Path;

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::encoder::EncoderModel;
use crate::error::{Error, Result};

pub const DEFAULT_JITTER: f64 = 1e-6;
pub const MAX_JITTER: f64 = 1e-4;
pub const BASELINE_SIGMA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatsOptions {
    /// Ridge added to the diagonal before factorizing; escalated ×10 up to
    /// [`MAX_JITTER`] if the factorization fails.
    pub jitter: f64,
    /// Keep only per-coordinate variances.
    pub diagonal: bool,
}

impl Default for StatsOptions {
    fn default() -> Self {
        StatsOptions {
            jitter: DEFAULT_JITTER,
            diagonal: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingStats {
    pub mean: Array1<f64>,
    pub covariance: Array2<f64>,
    /// Lower-triangular `L` with `L Lᵀ = C + jitter·I`.
    pub cholesky: Array2<f64>,
    pub jitter: f64,
}

impl EmbeddingStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self).map_err(std::io::Error::other)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let stats: EmbeddingStats =
            serde_json::from_slice(&bytes).map_err(|e| crate::conversation::json_error(&bytes, &e))?;
        let d = stats.dim();
        if stats.covariance.dim() != (d, d) || stats.cholesky.dim() != (d, d) {
            return Err(Error::shape(format!(
                "stats file has inconsistent dimensions (mean {d})"
            )));
        }
        Ok(stats)
    }
}

pub fn compute_stats(embeddings: &Array2<f64>) -> Result<EmbeddingStats> {
    compute_stats_with(embeddings, StatsOptions::default())
}

/// Column mean, sample covariance (divisor `V - 1`) and its Cholesky factor.
pub fn compute_stats_with(embeddings: &Array2<f64>, opts: StatsOptions) -> Result<EmbeddingStats> {
    let (v, d) = embeddings.dim();
    if v < 2 {
        return Err(Error::validation(format!("need at least 2 embedding rows, got {v}")));
    }
    if d == 0 {
        return Err(Error::validation("embeddings have zero width"));
    }
    if let Some(pos) = embeddings.iter().position(|x| !x.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite embedding entry at row {}, column {}",
            pos / d,
            pos % d
        )));
    }
    let mean = embeddings.mean_axis(Axis(0)).expect("non-empty");
    let centered = embeddings - &mean;
    let mut covariance = centered.t().dot(&centered) / (v - 1) as f64;
    if opts.diagonal {
        let diag = covariance.diag().to_owned();
        covariance = Array2::from_diag(&diag);
    }
    let (cholesky, jitter) = factorize(&covariance, opts)?;
    Ok(EmbeddingStats {
        mean,
        covariance,
        cholesky,
        jitter,
    })
}

fn factorize(cov: &Array2<f64>, opts: StatsOptions) -> Result<(Array2<f64>, f64)> {
    let d = cov.nrows();
    if opts.diagonal {
        let l = Array2::from_diag(&cov.diag().mapv(|c| (c + opts.jitter).max(0.0).sqrt()));
        return Ok((l, opts.jitter));
    }
    if opts.jitter == 0.0 && cov.iter().all(|&c| c == 0.0) {
        // L = 0 is the exact factor of a zero covariance
        return Ok((Array2::zeros((d, d)), 0.0));
    }
    let mut jitter = opts.jitter;
    loop {
        let m = DMatrix::from_fn(d, d, |i, j| cov[[i, j]] + if i == j { jitter } else { 0.0 });
        if let Some(ch) = m.cholesky() {
            let l = ch.l();
            return Ok((Array2::from_shape_fn((d, d), |(i, j)| l[(i, j)]), jitter));
        }
        if jitter >= MAX_JITTER {
            return Err(Error::Numerical(format!(
                "covariance is not positive definite even with jitter {jitter:e}"
            )));
        }
        jitter = if jitter == 0.0 {
            DEFAULT_JITTER
        } else {
            (jitter * 10.0).min(MAX_JITTER)
        };
        log::debug!("cholesky failed; retrying with jitter {jitter:e}");
    }
}

/// `count` independent rows `mu + L z`, `z ~ N(0, I)`.
pub fn sample_dependency_embeddings(stats: &EmbeddingStats, count: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = stats.dim();
    let z = Array2::from_shape_simple_fn((count, d), || StandardNormal.sample(&mut rng));
    z.dot(&stats.cholesky.t()) + &stats.mean
}

/// How the `sigma` of the baseline `N(0, sigma)` initializer is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spread {
    #[default]
    StdDev,
    Variance,
}

/// I.i.d. zero-mean Gaussian entries.
pub fn init_baseline_gaussian(count: usize, d: usize, sigma: f64, spread: Spread, seed: u64) -> Array2<f64> {
    let std = match spread {
        Spread::StdDev => sigma,
        Spread::Variance => sigma.sqrt(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(0.0, std).expect("finite sigma");
    Array2::from_shape_simple_fn((count, d), || dist.sample(&mut rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DependencyInit {
    /// Sample from the model's own token-embedding statistics.
    Stats {
        diagonal: bool,
    },
    Gaussian {
        sigma: f64,
        spread: Spread,
    },
}

impl Default for DependencyInit {
    fn default() -> Self {
        DependencyInit::Stats { diagonal: false }
    }
}

/// Re-initializes every dependency table of `model` in place.
pub fn init_dependency_tables(model: &mut EncoderModel, init: DependencyInit, seed: u64) -> Result<()> {
    let stats = match init {
        DependencyInit::Stats { diagonal } => {
            if model.config.d_r != model.config.d_model {
                return Err(Error::validation(format!(
                    "statistics initialization needs d_r ({}) equal to d_model ({})",
                    model.config.d_r, model.config.d_model
                )));
            }
            let opts = StatsOptions {
                diagonal,
                ..StatsOptions::default()
            };
            Some(compute_stats_with(&model.token_embedding, opts)?)
        }
        DependencyInit::Gaussian { .. } => None,
    };
    for (i, table) in model.dep_tables.iter_mut().enumerate() {
        let (rows, d) = table.dim();
        let table_seed = seed.wrapping_add(i as u64);
        *table = match (&stats, init) {
            (Some(stats), _) => sample_dependency_embeddings(stats, rows, table_seed),
            (None, DependencyInit::Gaussian { sigma, spread }) => {
                init_baseline_gaussian(rows, d, sigma, spread, table_seed)
            }
            (None, DependencyInit::Stats { .. }) => unreachable!(),
        };
    }
    Ok(())
}

/// Reads a 2-D float32 (or float64) `.npy` matrix.
pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    use ndarray_npy::ReadNpyExt;
    let bytes = std::fs::read(path)?;
    if let Ok(m) = Array2::<f32>::read_npy(bytes.as_slice()) {
        return Ok(m.mapv(f64::from));
    }
    Array2::<f64>::read_npy(bytes.as_slice())
        .map_err(|e| Error::validation(format!("{}: not a 2-D float32 .npy matrix: {e}", path.display())))
}

/// Writes a 2-D matrix as little-endian float32 `.npy`.
pub fn write_matrix(path: &Path, m: &Array2<f64>) -> Result<()> {
    use ndarray_npy::WriteNpyExt;
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    m.mapv(|v| v as f32)
        .write_npy(file)
        .map_err(|e| Error::Io(std::io::Error::other(e)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn two_row_example() {
        let s = compute_stats(&array![[0.0, 0.0], [2.0, 0.0]]).unwrap();
        assert_eq!(s.mean, array![1.0, 0.0]);
        assert_eq!(s.covariance, array![[2.0, 0.0], [0.0, 0.0]]);
        let l = &s.cholesky;
        let rebuilt = l.dot(&l.t());
        assert!((rebuilt[[0, 0]] - (2.0 + s.jitter)).abs() < 1e-12);
        assert!((rebuilt[[1, 1]] - s.jitter).abs() < 1e-12);
        assert!(s.jitter >= DEFAULT_JITTER);
    }

    #[test]
    fn identical_rows_degenerate() {
        let rows = Array2::from_shape_fn((5, 3), |(_, j)| j as f64);
        let s = compute_stats(&rows).unwrap();
        assert!(s.covariance.iter().all(|&c| c == 0.0));
        let sample = sample_dependency_embeddings(&s, 10, 3);
        for row in sample.rows() {
            for (x, m) in row.iter().zip(&s.mean) {
                // noise on the order of sqrt(jitter)
                assert!((x - m).abs() < 10.0 * s.jitter.sqrt());
            }
        }

        let exact = compute_stats_with(
            &rows,
            StatsOptions {
                jitter: 0.0,
                diagonal: false,
            },
        )
        .unwrap();
        let sample = sample_dependency_embeddings(&exact, 10, 3);
        for row in sample.rows() {
            assert_eq!(row, exact.mean);
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(compute_stats(&array![[1.0, 2.0]]).is_err());
        assert!(matches!(
            compute_stats(&array![[1.0, f64::NAN], [0.0, 0.0]]),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn indefinite_covariance_fails_after_escalation() {
        let cov = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(factorize(&cov, StatsOptions::default()).is_err());
    }

    #[test]
    fn diagonal_mode_drops_correlations() {
        let rows = array![[0.0, 0.0], [1.0, 1.0], [2.0, 2.5]];
        let s = compute_stats_with(
            &rows,
            StatsOptions {
                jitter: 0.0,
                diagonal: true,
            },
        )
        .unwrap();
        assert_eq!(s.covariance[[0, 1]], 0.0);
        assert!((s.cholesky[[0, 0]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn seeded_sampling_is_deterministic() {
        let s = compute_stats(&array![[0.0, 1.0], [2.0, 0.0], [1.0, 1.5]]).unwrap();
        assert_eq!(
            sample_dependency_embeddings(&s, 4, 9),
            sample_dependency_embeddings(&s, 4, 9)
        );
        assert_ne!(
            sample_dependency_embeddings(&s, 4, 9),
            sample_dependency_embeddings(&s, 4, 10)
        );
        assert_eq!(
            init_baseline_gaussian(3, 2, 0.1, Spread::StdDev, 1),
            init_baseline_gaussian(3, 2, 0.1, Spread::StdDev, 1)
        );
    }

    #[test]
    fn baseline_gaussian_moments() {
        // oracle: mean within 5 standard errors, std within 1% at 10^6 draws
        for (spread, expected_std) in [(Spread::StdDev, 0.1), (Spread::Variance, 0.1f64.sqrt())] {
            let m = init_baseline_gaussian(1000, 1000, 0.1, spread, 42);
            let n = m.len() as f64;
            let mean = m.sum() / n;
            let std = (m.mapv(|v| (v - mean).powi(2)).sum() / (n - 1.0)).sqrt();
            assert!(mean.abs() < 5.0 * expected_std / n.sqrt(), "mean {mean}");
            assert!((std / expected_std - 1.0).abs() < 0.01, "std {std}");
        }
    }

    #[test]
    fn npy_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.npy");
        let m = array![[1.5, -2.0], [0.25, 3.0]];
        write_matrix(&path, &m).unwrap();
        assert_eq!(read_matrix(&path).unwrap(), m);
    }
}
