//! Position-dependent Gaussian weights over the questions of a segment.
//!
//! Chunk `i` (1-based) of an `n_s`-chunk segment gets a Gaussian centred at
//! `μ_i = (i−1)(m−1)/(n_s−1)` over question positions `0..m−1`. The kernel is
//! sampled at the integer positions and min-max normalized per row, so the
//! nearest question gets weight 1 and neighbours keep some context. The row
//! then mixes the segment's question embeddings into an anchor for the chunk.

use ndarray::{Array2, ArrayView2};
use num_rational::Ratio;

use crate::error::{Error, Result};

pub const DEFAULT_SIGMA: f64 = 0.5;
pub const DEFAULT_SIGMA_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SigmaMode {
    /// The same σ for every chunk.
    FixedSigma { sigma: f64 },
    /// `σ_i = α · min(i−1, n_s−i)`: peaky at the segment ends, broad inside.
    VaryingAlpha { alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GaussianConfig {
    #[serde(flatten)]
    pub mode: SigmaMode,
    #[serde(default = "default_floor")]
    pub sigma_floor: f64,
}

fn default_floor() -> f64 {
    DEFAULT_SIGMA_FLOOR
}

impl Default for GaussianConfig {
    fn default() -> Self {
        Self::fixed(DEFAULT_SIGMA)
    }
}

impl GaussianConfig {
    pub fn fixed(sigma: f64) -> Self {
        Self {
            mode: SigmaMode::FixedSigma { sigma },
            sigma_floor: DEFAULT_SIGMA_FLOOR,
        }
    }

    pub fn varying(alpha: f64) -> Self {
        Self {
            mode: SigmaMode::VaryingAlpha { alpha },
            sigma_floor: DEFAULT_SIGMA_FLOOR,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        match self.mode {
            SigmaMode::FixedSigma { sigma } if !ok(sigma) => {
                Err(Error::Argument(format!("sigma must be positive, got {sigma}")))
            }
            SigmaMode::VaryingAlpha { alpha } if !ok(alpha) => {
                Err(Error::Argument(format!("alpha must be positive, got {alpha}")))
            }
            _ if !ok(self.sigma_floor) => Err(Error::Argument(format!(
                "sigma floor must be positive, got {}",
                self.sigma_floor
            ))),
            _ => Ok(()),
        }
    }
}

/// Row-normalized weights `A` (`n_s × m`) with the per-row means and widths.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianWeightMatrix {
    weights: Array2<f64>,
    means: Vec<Ratio<i64>>,
    sigmas: Vec<f64>,
}

impl GaussianWeightMatrix {
    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn n_chunks(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_questions(&self) -> usize {
        self.weights.ncols()
    }

    /// Exact mean of row `i` (0-based).
    pub fn mean_exact(&self, i: usize) -> Ratio<i64> {
        self.means[i]
    }

    pub fn means(&self) -> Vec<f64> {
        self.means.iter().map(ratio_to_f64).collect()
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }
}

fn ratio_to_f64(r: &Ratio<i64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Builds the weight matrix for an `n_s`-chunk segment holding `m` questions.
pub fn gaussian_weight_matrix(n_s: usize, m: usize, cfg: &GaussianConfig) -> Result<GaussianWeightMatrix> {
    if n_s == 0 || m == 0 {
        return Err(Error::Argument(format!("need n_s ≥ 1 and m ≥ 1, got n_s={n_s}, m={m}")));
    }
    cfg.validate()?;
    let (n, q) = (n_s as i64, m as i64);

    let mut weights = Array2::zeros((n_s, m));
    let mut means = Vec::with_capacity(n_s);
    let mut sigmas = Vec::with_capacity(n_s);
    for (i, mut row) in weights.rows_mut().into_iter().enumerate() {
        let i = i as i64;
        let mean = if n == 1 {
            Ratio::new(q - 1, 2)
        } else {
            Ratio::new(i * (q - 1), n - 1)
        };
        let sigma = match cfg.mode {
            SigmaMode::FixedSigma { sigma } => sigma,
            SigmaMode::VaryingAlpha { alpha } => alpha * i.min(n - 1 - i) as f64,
        }
        .max(cfg.sigma_floor);

        // Log-kernel shifted by its maximum: min-max normalization is
        // invariant to the scale this removes, and the peak never underflows.
        let logs: Vec<f64> = (0..q)
            .map(|j| {
                let d = ratio_to_f64(&(Ratio::from_integer(j) - mean));
                -d * d / (2.0 * sigma * sigma)
            })
            .collect();
        let peak = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let vals: Vec<f64> = logs.iter().map(|l| (l - peak).exp()).collect();
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi == lo {
            row.fill(1.0);
        } else {
            for (w, v) in row.iter_mut().zip(&vals) {
                *w = (v - lo) / (hi - lo);
            }
        }
        means.push(mean);
        sigmas.push(sigma);
    }
    Ok(GaussianWeightMatrix {
        weights,
        means,
        sigmas,
    })
}

/// Anchor embeddings `Ĉ = A · Q_seg` for a segment's `m × d` question matrix.
pub fn anchor_embeddings(weights: &GaussianWeightMatrix, questions: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if questions.nrows() != weights.n_questions() {
        return Err(Error::Argument(format!(
            "weight matrix covers {} questions, got {} embeddings",
            weights.n_questions(),
            questions.nrows()
        )));
    }
    Ok(weights.weights.dot(&questions))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, s, Array1};
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn five_by_three_fixed_half() {
        let g = gaussian_weight_matrix(5, 3, &GaussianConfig::fixed(0.5)).unwrap();
        assert_eq!(g.means(), vec![0.0, 0.5, 1.0, 1.5, 2.0]);
        // independent scalar evaluation of row 1: exp(-(x-0)^2 / 0.5) at x = 0, 1, 2
        let raw = [1.0f64, (-2.0f64).exp(), (-8.0f64).exp()];
        let expect: Vec<f64> = raw.iter().map(|v| (v - raw[2]) / (raw[0] - raw[2])).collect();
        let row0 = g.weights().row(0).to_vec();
        assert!(close(&row0, &expect, 1e-12), "{row0:?}");
        assert!((row0[1] - 0.1351).abs() < 1e-4);
        assert_eq!(g.weights().row(2).to_vec(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn two_by_two_is_identity() {
        for sigma in [0.1, 0.5, 3.0] {
            let g = gaussian_weight_matrix(2, 2, &GaussianConfig::fixed(sigma)).unwrap();
            assert_eq!(g.weights(), &array![[1.0, 0.0], [0.0, 1.0]]);
        }
    }

    #[test]
    fn symmetric_middle_row_falls_back_to_ones() {
        let g = gaussian_weight_matrix(3, 2, &GaussianConfig::fixed(0.5)).unwrap();
        assert_eq!(g.means()[1], 0.5);
        assert_eq!(g.weights().row(1).to_vec(), vec![1.0, 1.0]);
    }

    #[test]
    fn varying_alpha_clamps_peripheral_sigma() {
        let g = gaussian_weight_matrix(5, 3, &GaussianConfig::varying(0.5)).unwrap();
        assert_eq!(g.sigmas(), &[1e-3, 0.5, 1.0, 0.5, 1e-3]);
        assert_eq!(g.weights().row(0).to_vec(), vec![1.0, 0.0, 0.0]);
        assert_eq!(g.weights().row(4).to_vec(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn single_chunk_uses_midpoint() {
        let g = gaussian_weight_matrix(1, 5, &GaussianConfig::fixed(0.5)).unwrap();
        assert_eq!(g.means(), vec![2.0]);
        assert_eq!(g.weights()[[0, 2]], 1.0);
        let g = gaussian_weight_matrix(1, 4, &GaussianConfig::varying(0.3)).unwrap();
        assert_eq!(g.weights().row(0).to_vec(), vec![0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn invalid_arguments() {
        assert!(gaussian_weight_matrix(0, 3, &GaussianConfig::default()).is_err());
        assert!(gaussian_weight_matrix(3, 0, &GaussianConfig::default()).is_err());
        assert!(gaussian_weight_matrix(3, 3, &GaussianConfig::fixed(0.0)).is_err());
        assert!(gaussian_weight_matrix(3, 3, &GaussianConfig::varying(-1.0)).is_err());
    }

    #[test]
    fn anchors_one_hot_and_linear() {
        let g = gaussian_weight_matrix(2, 2, &GaussianConfig::fixed(0.5)).unwrap();
        let q = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        let a = anchor_embeddings(&g, q.view()).unwrap();
        assert_eq!(a, q);

        let g = GaussianWeightMatrix {
            weights: array![[1.0, 0.5]],
            means: vec![Ratio::from_integer(0)],
            sigmas: vec![1.0],
        };
        let q = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        assert_eq!(anchor_embeddings(&g, q.view()).unwrap(), array![[1.0, 0.5, 0.0]]);
        assert!(anchor_embeddings(&g, q.slice(s![..1, ..])).is_err());
    }

    #[test]
    fn anchors_match_double_loop() {
        use rand::Rng;
        let mut rng = crate::rng::substream(3, "anchor-test");
        let a = Array2::from_shape_fn((4, 3), |_| rng.random_range(0.0..1.0));
        let q = Array2::from_shape_fn((3, 5), |_| rng.random_range(-1.0..1.0));
        let g = GaussianWeightMatrix {
            weights: a.clone(),
            means: vec![Ratio::from_integer(0); 4],
            sigmas: vec![1.0; 4],
        };
        let got = anchor_embeddings(&g, q.view()).unwrap();
        for i in 0..4 {
            for k in 0..5 {
                let mut acc = 0.0;
                for j in 0..3 {
                    acc += a[[i, j]] * q[[j, k]];
                }
                assert!((got[[i, k]] - acc).abs() <= 1e-9);
            }
        }
    }

    fn config_strategy() -> impl Strategy<Value = GaussianConfig> {
        prop_oneof![
            (0.05f64..4.0).prop_map(GaussianConfig::fixed),
            (0.05f64..1.5).prop_map(GaussianConfig::varying),
        ]
    }

    proptest! {
        #[test]
        fn rows_are_local_unimodal_and_bounded(n_s in 1usize..40, m in 1usize..10, cfg in config_strategy()) {
            let g = gaussian_weight_matrix(n_s, m, &cfg).unwrap();
            let means = g.means();
            for (i, row) in g.weights().rows().into_iter().enumerate() {
                let row: Vec<f64> = row.to_vec();
                prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
                prop_assert!(row.contains(&1.0));
                let peak = row.iter().position(|&v| v == 1.0).unwrap();
                let lo = means[i].floor().clamp(0.0, (m - 1) as f64) as usize;
                let hi = means[i].ceil().clamp(0.0, (m - 1) as f64) as usize;
                let degenerate = row.iter().all(|&v| v == 1.0);
                if !degenerate {
                    for (j, &v) in row.iter().enumerate() {
                        if v == 1.0 {
                            prop_assert!(j == lo || j == hi, "row {} mean {} peak {}", i, means[i], j);
                        }
                    }
                    if m >= 2 {
                        prop_assert!(row.contains(&0.0));
                    }
                }
                for j in 1..=peak {
                    prop_assert!(row[j] >= row[j - 1]);
                }
                for j in peak + 1..m {
                    prop_assert!(row[j] <= row[j - 1]);
                }
            }
            if n_s >= 2 {
                prop_assert_eq!(g.weights()[[0, 0]], 1.0);
                prop_assert_eq!(g.weights()[[n_s - 1, m - 1]], 1.0);
                for i in 0..n_s - 1 {
                    prop_assert_eq!(
                        g.mean_exact(i + 1) - g.mean_exact(i),
                        Ratio::new(m as i64 - 1, n_s as i64 - 1)
                    );
                }
            }
        }

        #[test]
        fn fixed_sigma_rotation_symmetry(n_s in 1usize..30, m in 1usize..9, sigma in 0.1f64..3.0) {
            let g = gaussian_weight_matrix(n_s, m, &GaussianConfig::fixed(sigma)).unwrap();
            let w = g.weights();
            let rotated = w.slice(s![..;-1, ..;-1]);
            for (a, b) in w.iter().zip(rotated.iter()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn scale_invariant_against_unshifted_kernel(n_s in 2usize..20, m in 2usize..8, sigma in 0.3f64..3.0, scale in 0.01f64..100.0) {
            let g = gaussian_weight_matrix(n_s, m, &GaussianConfig::fixed(sigma)).unwrap();
            for (i, row) in g.weights().rows().into_iter().enumerate() {
                let mu = g.means()[i];
                let raw: Array1<f64> = (0..m)
                    .map(|j| scale * (-(j as f64 - mu).powi(2) / (2.0 * sigma * sigma)).exp())
                    .collect();
                let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if hi - lo < 1e-6 * hi {
                    continue;
                }
                for (a, r) in row.iter().zip(raw.iter()) {
                    prop_assert!((a - (r - lo) / (hi - lo)).abs() <= 1e-9);
                }
            }
        }
    }
}
