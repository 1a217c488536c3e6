//! On-the-fly synthetic speech features with a known generating model.
//!
//! Every frame of a chunk is `M·q_owner + speaker_offset + noise`, where `q`
//! is the latent (unit) vector of the question spoken in the chunk, `M` is a
//! hidden `d′ × d` map and `noise` is i.i.d. Gaussian per entry. Frames are
//! generated from a stream keyed by (interview, chunk index), so repeated
//! calls are bit-identical.

use std::collections::HashMap;

use ndarray::{Array1, Array2};
use rand_distr::{Distribution, StandardNormal};

use super::{ChunkFeatures, SpeechFeatureProvider};
use crate::corpus::Chunk;
use crate::error::{Error, Result};
use crate::rng::substream_keyed;

#[derive(Debug, Clone)]
pub struct ChunkSource {
    /// Latent vector of the owning question.
    pub latent: Array1<f64>,
    pub frames: usize,
}

#[derive(Debug, Clone)]
pub struct SyntheticSpeechProvider {
    pub map: Array2<f64>,
    pub speaker_offsets: HashMap<String, Array1<f64>>,
    pub sources: HashMap<(String, usize), ChunkSource>,
    pub noise_scale: f64,
    pub min_duration_s: f64,
    pub seed: u64,
}

impl SyntheticSpeechProvider {
    /// Noise-free per-frame mean of a chunk.
    pub fn clean_mean(&self, chunk: &Chunk) -> Result<Array1<f64>> {
        let src = self.source(chunk)?;
        let mut mean = self.map.dot(&src.latent);
        if let Some(off) = self.speaker_offsets.get(&chunk.interview_id) {
            mean += off;
        }
        Ok(mean)
    }

    fn source(&self, chunk: &Chunk) -> Result<&ChunkSource> {
        self.sources
            .get(&(chunk.interview_id.clone(), chunk.index))
            .ok_or_else(|| {
                Error::Provider(format!(
                    "synthetic provider knows nothing about {}/{}",
                    chunk.interview_id, chunk.index
                ))
            })
    }
}

impl SpeechFeatureProvider for SyntheticSpeechProvider {
    fn dim(&self) -> usize {
        self.map.nrows()
    }

    fn features(&self, chunk: &Chunk) -> Result<ChunkFeatures> {
        if chunk.duration() < self.min_duration_s {
            return Err(Error::ChunkTooShort {
                duration_s: chunk.duration(),
                min_s: self.min_duration_s,
            });
        }
        let src = self.source(chunk)?;
        let mean = self.clean_mean(chunk)?;
        let mut rng = substream_keyed(self.seed, "speech-frames", &chunk.interview_id, chunk.index as u64);
        let mut m = Array2::zeros((src.frames, mean.len()));
        for mut row in m.rows_mut() {
            for (v, &mu) in row.iter_mut().zip(mean.iter()) {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = mu + self.noise_scale * z;
            }
        }
        ChunkFeatures::new(m)
    }
}
