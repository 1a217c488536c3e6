//! Frozen front-ends consumed through provider traits: chunkers, speech
//! feature extractors, sentence embedders and transcript sources.
//!
//! Pretrained encoders are not part of this crate. It ships cache-backed and
//! synthetic providers; anything else plugs in through the traits below.

pub mod cache;
pub mod chunker;
pub mod synthetic;

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::corpus::Chunk;
use crate::error::{Error, Result};

pub use cache::{read_cache, write_cache, DType, EmbeddingCache};
pub use chunker::{chunk_audio, Audio, Chunker, EnergyVadChunker, PassThroughChunker, Waveform};

/// Raw per-frame speech features of one chunk, `T × d′`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkFeatures(Array2<f64>);

impl ChunkFeatures {
    pub fn new(matrix: Array2<f64>) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(Error::Validation(format!(
                "chunk features must be non-empty, got {:?}",
                matrix.dim()
            )));
        }
        if let Some(pos) = matrix.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite feature at flat position {pos}"
            )));
        }
        Ok(Self(matrix))
    }

    pub fn frames(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> Array2<f64> {
        self.0
    }
}

/// A sentence vector in the shared space.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceEmbedding(pub Array1<f64>);

impl SentenceEmbedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

pub trait SpeechFeatureProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn features(&self, chunk: &Chunk) -> Result<ChunkFeatures>;
}

pub trait SentenceEmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<SentenceEmbedding>;
}

pub trait TranscriptProvider: Send + Sync {
    fn transcript(&self, chunk: &Chunk) -> Result<String>;
}

/// Fetches and validates the features of one chunk.
pub fn speech_features(chunk: &Chunk, provider: &dyn SpeechFeatureProvider) -> Result<ChunkFeatures> {
    let f = provider.features(chunk)?;
    if f.dim() != provider.dim() {
        return Err(Error::Validation(format!(
            "provider declared dim {} but returned {}",
            provider.dim(),
            f.dim()
        )));
    }
    ChunkFeatures::new(f.into_matrix())
}

pub fn sentence_embedding(text: &str, provider: &dyn SentenceEmbeddingProvider) -> Result<SentenceEmbedding> {
    if text.trim().is_empty() {
        return Err(Error::Argument("cannot embed empty text".into()));
    }
    let e = provider.embed(text)?;
    if e.dim() != provider.dim() {
        return Err(Error::Validation(format!(
            "provider declared dim {} but returned {}",
            provider.dim(),
            e.dim()
        )));
    }
    if e.0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("non-finite embedding for {text:?}")));
    }
    Ok(e)
}

pub fn transcript(chunk: &Chunk, provider: &dyn TranscriptProvider) -> Result<String> {
    provider.transcript(chunk)
}

/// Cache key of one feature frame.
pub fn frame_key(interview_id: &str, chunk: usize, frame: usize) -> String {
    format!("{interview_id}/{chunk}/{frame}")
}

/// Serves chunk features from an [`EmbeddingCache`] of frames keyed by
/// [`frame_key`].
#[derive(Debug, Clone)]
pub struct CachedSpeechFeatures {
    dim: usize,
    chunks: HashMap<(String, usize), Array2<f64>>,
}

impl CachedSpeechFeatures {
    pub fn from_cache(cache: &EmbeddingCache) -> Result<Self> {
        let mut frames: HashMap<(String, usize), Vec<(usize, &[f64])>> = HashMap::new();
        for (key, row) in &cache.entries {
            let mut parts = key.rsplitn(3, '/');
            let (frame, chunk, interview) = match (parts.next(), parts.next(), parts.next()) {
                (Some(f), Some(c), Some(i)) => (f, c, i),
                _ => return Err(Error::Corrupt(format!("malformed frame key {key:?}"))),
            };
            let parse = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::Corrupt(format!("malformed frame key {key:?}")))
            };
            frames
                .entry((interview.to_owned(), parse(chunk)?))
                .or_default()
                .push((parse(frame)?, row.as_slice()));
        }
        let mut chunks = HashMap::with_capacity(frames.len());
        for (k, mut rows) in frames {
            rows.sort_by_key(|(f, _)| *f);
            if rows.iter().enumerate().any(|(i, (f, _))| i != *f) {
                return Err(Error::Corrupt(format!("{}/{}: frame indices have gaps", k.0, k.1)));
            }
            let mut m = Array2::zeros((rows.len(), cache.dim));
            for (i, (_, r)) in rows.iter().enumerate() {
                m.row_mut(i).assign(&ndarray::ArrayView1::from(*r));
            }
            chunks.insert(k, m);
        }
        Ok(Self {
            dim: cache.dim,
            chunks,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_cache(&read_cache(path)?)
    }

    pub fn contains(&self, interview_id: &str, chunk: usize) -> bool {
        self.chunks.contains_key(&(interview_id.to_owned(), chunk))
    }
}

impl SpeechFeatureProvider for CachedSpeechFeatures {
    fn dim(&self) -> usize {
        self.dim
    }

    fn features(&self, chunk: &Chunk) -> Result<ChunkFeatures> {
        self.chunks
            .get(&(chunk.interview_id.clone(), chunk.index))
            .cloned()
            .map(ChunkFeatures)
            .ok_or_else(|| {
                Error::Provider(format!(
                    "no cached features for {}/{}",
                    chunk.interview_id, chunk.index
                ))
            })
    }
}

/// Sentence embeddings looked up by exact text.
#[derive(Debug, Clone)]
pub struct FixtureSentenceEmbedder {
    dim: usize,
    table: HashMap<String, Array1<f64>>,
    unit_normalize: bool,
}

impl FixtureSentenceEmbedder {
    pub fn from_cache(cache: &EmbeddingCache) -> Self {
        let table = cache
            .entries
            .iter()
            .map(|(k, r)| (k.clone(), Array1::from(r.clone())))
            .collect();
        Self {
            dim: cache.dim,
            table,
            unit_normalize: false,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::from_cache(&read_cache(path)?))
    }

    /// Rescale every returned vector to unit length.
    pub fn with_unit_normalize(mut self, on: bool) -> Self {
        self.unit_normalize = on;
        self
    }
}

impl SentenceEmbeddingProvider for FixtureSentenceEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<SentenceEmbedding> {
        let v = self
            .table
            .get(text)
            .ok_or_else(|| Error::Provider(format!("no embedding for text {text:?}")))?;
        if self.unit_normalize {
            let norm = v.dot(v).sqrt();
            if norm > 0.0 {
                return Ok(SentenceEmbedding(v / norm));
            }
        }
        Ok(SentenceEmbedding(v.clone()))
    }
}

/// Per-chunk transcripts stored as `{interview_id: [text per chunk]}`.
#[derive(Debug, Clone, Default)]
pub struct MapTranscripts(pub HashMap<String, Vec<String>>);

impl MapTranscripts {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let map = serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        Ok(Self(map))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let sorted: std::collections::BTreeMap<_, _> = self.0.iter().collect();
        let text = serde_json::to_string_pretty(&sorted).expect("transcripts serialize");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

impl TranscriptProvider for MapTranscripts {
    fn transcript(&self, chunk: &Chunk) -> Result<String> {
        self.0
            .get(&chunk.interview_id)
            .and_then(|t| t.get(chunk.index))
            .cloned()
            .ok_or_else(|| {
                Error::NotFound(format!(
                    "no transcript for {}/{}",
                    chunk.interview_id, chunk.index
                ))
            })
    }
}
