//! Slow, straight-line reference implementations used to check the fast paths.

use ndarray::Array2;

use crate::gaussian::{GaussianConfig, SigmaMode};
use crate::head::HeadTensors;
use crate::trainer::loss::LossItem;

/// Gaussian weights evaluated one cell at a time.
///
/// Each cell is `exp(−((x−μ)² − (x*−μ)²) / 2σ²)` relative to the row's
/// closest position `x*`, followed by min-max normalization across the row.
pub fn brute_force_density_matrix(n_chunks: usize, n_questions: usize, cfg: &GaussianConfig) -> Array2<f64> {
    let mut out = Array2::zeros((n_chunks, n_questions));
    for i in 0..n_chunks {
        let mu = if n_chunks == 1 {
            (n_questions as f64 - 1.0) / 2.0
        } else {
            i as f64 * (n_questions as f64 - 1.0) / (n_chunks as f64 - 1.0)
        };
        let sigma = match cfg.mode {
            SigmaMode::FixedSigma { sigma } => sigma,
            SigmaMode::VaryingAlpha { alpha } => {
                let edge = i.min(n_chunks - 1 - i) as f64;
                (alpha * edge).max(cfg.sigma_floor)
            }
        };
        let mut nearest = f64::INFINITY;
        for x in 0..n_questions {
            let d = (x as f64 - mu) * (x as f64 - mu);
            if d < nearest {
                nearest = d;
            }
        }
        let mut row = Vec::with_capacity(n_questions);
        for x in 0..n_questions {
            let d = (x as f64 - mu) * (x as f64 - mu);
            row.push((-(d - nearest) / (2.0 * sigma * sigma)).exp());
        }
        let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = row.iter().cloned().fold(f64::INFINITY, f64::min);
        for x in 0..n_questions {
            out[[i, x]] = if hi - lo > 0.0 { (row[x] - lo) / (hi - lo) } else { 1.0 };
        }
    }
    out
}

/// Central finite differences of `f` with respect to every head parameter.
pub fn finite_difference_gradients(f: impl Fn(&HeadTensors) -> f64, at: &HeadTensors, eps: f64) -> HeadTensors {
    let mut grads = at.zeros_like();
    let mut probe = at.clone();
    for part in 0..4 {
        let n = at.slices()[part].len();
        for j in 0..n {
            let orig = at.slices()[part][j];
            probe.slices_mut()[part][j] = orig + eps;
            let up = f(&probe);
            probe.slices_mut()[part][j] = orig - eps;
            let down = f(&probe);
            probe.slices_mut()[part][j] = orig;
            grads.slices_mut()[part][j] = (up - down) / (2.0 * eps);
        }
    }
    grads
}

/// Speech-text and speech-speech losses from plain scalar loops.
pub fn scalar_contrastive_losses(embeddings: &[Array2<f64>], items: &[LossItem], targets: &[f64]) -> (f64, f64) {
    let dot = |a: &[f64], b: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..a.len() {
            s += a[i] * b[i];
        }
        s
    };
    let cross_entropy = |logits: &[f64]| -> f64 {
        let mut hi = logits[0];
        for &z in logits {
            if z > hi {
                hi = z;
            }
        }
        let mut z_sum = 0.0;
        for &z in logits {
            z_sum += (z - hi).exp();
        }
        let mut loss = 0.0;
        for k in 0..logits.len() {
            loss -= targets[k] * (logits[k] - hi - z_sum.ln());
        }
        loss
    };
    let (mut st, mut ss) = (0.0, 0.0);
    for it in items {
        let ci: Vec<f64> = embeddings[it.chunk.slot].row(it.chunk.chunk).to_vec();
        let anchor: Vec<f64> = it.anchor.to_vec();
        let negs: Vec<Vec<f64>> = it
            .negatives
            .iter()
            .map(|n| embeddings[n.slot].row(n.chunk).to_vec())
            .collect();
        let mut text_logits = vec![dot(&ci, &anchor)];
        let mut self_logits = vec![dot(&ci, &ci)];
        for n in &negs {
            text_logits.push(dot(n, &anchor));
            self_logits.push(dot(n, &ci));
        }
        st += cross_entropy(&text_logits);
        ss += cross_entropy(&self_logits);
    }
    (st / items.len() as f64, ss / items.len() as f64)
}

/// Shannon entropy of a target distribution, with `0 · ln 0 = 0`.
pub fn entropy(targets: &[f64]) -> f64 {
    let mut h = 0.0;
    for &t in targets {
        if t > 0.0 {
            h -= t * t.ln();
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::gaussian_weight_matrix;
    use proptest::prelude::*;

    #[test]
    fn linear_probe_has_constant_gradient() {
        let cfg = crate::head::HeadConfig::new(3, 2);
        let mut t = HeadTensors::zeros(&cfg);
        t.proj_bias[1] = 5.0;
        let g = finite_difference_gradients(|t: &HeadTensors| 3.0 * t.proj_bias[1] - t.conv_bias[0], &t, 1e-4);
        assert!((g.proj_bias[1] - 3.0).abs() < 1e-9);
        assert!((g.conv_bias[0] + 1.0).abs() < 1e-9);
        assert_eq!(g.proj_weight.iter().filter(|&&v| v != 0.0).count(), 0);
    }

    #[test]
    fn hand_computed_rows() {
        let g = brute_force_density_matrix(5, 3, &GaussianConfig::varying(0.5));
        assert_eq!(g.row(0).to_vec(), vec![1.0, 0.0, 0.0]);
        let g = brute_force_density_matrix(1, 5, &GaussianConfig::fixed(0.5));
        assert_eq!(g[[0, 2]], 1.0);
    }

    proptest! {
        #[test]
        fn fast_path_matches_oracle(n in 1usize..40, m in 1usize..25, s in 0.05f64..5.0, varying in any::<bool>()) {
            let cfg = if varying { GaussianConfig::varying(s) } else { GaussianConfig::fixed(s) };
            let fast = gaussian_weight_matrix(n, m, &cfg).unwrap();
            let slow = brute_force_density_matrix(n, m, &cfg);
            for (a, b) in fast.weights().iter().zip(slow.iter()) {
                prop_assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
            }
        }
    }
}
