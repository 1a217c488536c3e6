//! Label-smoothed contrastive losses over chunk embeddings.
//!
//! For chunk `i` with anchor `a` the logits are `[C_iᵀa, C_{j1}ᵀa, …, C_{jK}ᵀa]`
//! over the chunk itself and its `K` sampled negatives, without temperature.
//! The speech-text loss uses the Gaussian anchor `Ĉ_i`; the speech-speech
//! loss uses `C_i` itself. Both average a smoothed cross-entropy over all
//! chunks of the batch.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};

/// Position of a chunk embedding: row `chunk` of encoded segment `slot`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkSlot {
    pub slot: usize,
    pub chunk: usize,
}

/// One positive chunk with its Gaussian anchor and sampled negatives.
#[derive(Debug, Clone)]
pub struct LossItem {
    pub chunk: ChunkSlot,
    pub anchor: Array1<f64>,
    pub negatives: Vec<ChunkSlot>,
}

/// `[p⁺, (1−p⁺)/K, …]` of length `K + 1`.
pub fn smoothed_targets(k: usize, positive_mass: f64) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::Argument("need at least one negative".into()));
    }
    if !(positive_mass > 0.0 && positive_mass <= 1.0) {
        return Err(Error::Argument(format!("positive mass must be in (0, 1], got {positive_mass}")));
    }
    let rest = (1.0 - positive_mass) / k as f64;
    Ok(std::iter::once(positive_mass).chain(std::iter::repeat_n(rest, k)).collect())
}

/// Cross-entropy `−Σ t_k log softmax(z)_k` and its gradient `softmax(z) − t`
/// (for targets summing to one).
pub fn smoothed_cross_entropy(logits: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::Numeric(format!("non-finite logits {logits:?}")));
    }
    let peak = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - peak).exp()).collect();
    let z: f64 = exps.iter().sum();
    let log_z = z.ln() + peak;
    let loss = targets.iter().zip(logits).map(|(t, l)| t * (log_z - l)).sum();
    let tsum: f64 = targets.iter().sum();
    let grad = exps.iter().zip(targets).map(|(e, t)| tsum * e / z - t).collect();
    Ok((loss, grad))
}

fn row(embeddings: &[Array2<f64>], s: ChunkSlot) -> ArrayView1<'_, f64> {
    embeddings[s.slot].row(s.chunk)
}

fn check(items: &[LossItem], targets: &[f64]) -> Result<()> {
    if items.is_empty() {
        return Err(Error::Argument("no chunks in batch".into()));
    }
    if let Some(it) = items.iter().find(|it| it.negatives.len() + 1 != targets.len()) {
        return Err(Error::Argument(format!(
            "chunk has {} negatives, targets expect {}",
            it.negatives.len(),
            targets.len() - 1
        )));
    }
    Ok(())
}

/// Values and gradients of both losses.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub speech_text: f64,
    pub speech_speech: f64,
    /// `d(L_st + L_ss) / d embeddings`, one matrix per slot.
    pub grads: Vec<Array2<f64>>,
}

impl LossOutput {
    pub fn total(&self) -> f64 {
        self.speech_text + self.speech_speech
    }
}

/// Computes `L_st`, `L_ss` and the gradient of their sum.
pub fn contrastive_losses(embeddings: &[Array2<f64>], items: &[LossItem], targets: &[f64]) -> Result<LossOutput> {
    check(items, targets)?;
    let scale = 1.0 / items.len() as f64;
    let mut grads: Vec<Array2<f64>> = embeddings.iter().map(|e| Array2::zeros(e.raw_dim())).collect();
    let (mut st, mut ss) = (0.0, 0.0);
    let mut logits = Vec::with_capacity(targets.len());

    for it in items {
        let ci = row(embeddings, it.chunk).to_owned();

        // speech → text: anchor is the (constant) Gaussian mixture of questions
        logits.clear();
        logits.push(ci.dot(&it.anchor));
        logits.extend(it.negatives.iter().map(|&n| row(embeddings, n).dot(&it.anchor)));
        let (l, g) = smoothed_cross_entropy(&logits, targets)?;
        st += l * scale;
        grads[it.chunk.slot].row_mut(it.chunk.chunk).scaled_add(g[0] * scale, &it.anchor);
        for (&n, gk) in it.negatives.iter().zip(&g[1..]) {
            grads[n.slot].row_mut(n.chunk).scaled_add(gk * scale, &it.anchor);
        }

        // speech → speech: anchor is the chunk embedding itself
        logits.clear();
        logits.push(ci.dot(&ci));
        logits.extend(it.negatives.iter().map(|&n| row(embeddings, n).dot(&ci)));
        let (l, g) = smoothed_cross_entropy(&logits, targets)?;
        ss += l * scale;
        let mut gi = &ci * (2.0 * g[0] * scale);
        for (&n, gk) in it.negatives.iter().zip(&g[1..]) {
            gi.scaled_add(gk * scale, &row(embeddings, n));
            grads[n.slot].row_mut(n.chunk).scaled_add(gk * scale, &ci);
        }
        grads[it.chunk.slot].row_mut(it.chunk.chunk).scaled_add(1.0, &gi);
    }
    Ok(LossOutput {
        speech_text: st,
        speech_speech: ss,
        grads,
    })
}

/// Speech-text loss `L_st`.
pub fn loss_st(embeddings: &[Array2<f64>], items: &[LossItem], targets: &[f64]) -> Result<f64> {
    Ok(contrastive_losses(embeddings, items, targets)?.speech_text)
}

/// Speech-speech loss `L_ss`.
pub fn loss_ss(embeddings: &[Array2<f64>], items: &[LossItem], targets: &[f64]) -> Result<f64> {
    Ok(contrastive_losses(embeddings, items, targets)?.speech_speech)
}
