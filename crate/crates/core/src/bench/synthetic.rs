//! Seeded synthetic interviews with a known question-to-chunk alignment.
//!
//! Every interview walks through the whole questionnaire in order. Each
//! question is spoken over a few consecutive chunks whose frames are
//! `M·q + speaker_offset + noise` (see [`SyntheticSpeechProvider`]). Train
//! interviews are annotated with segments of `m` consecutive questions;
//! dev/test interviews carry the exact span of every question.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{
    ground_truth_segment, load_interview_manifest, load_questionnaire, write_interview_manifest,
    write_questionnaire, Annotations, Chunk, InterviewRecord, Question, QuestionSpan, Questionnaire,
    SegmentAnnotation, Split,
};
use crate::error::{Error, Result};
use crate::providers::synthetic::{ChunkSource, SyntheticSpeechProvider};
use crate::providers::{
    frame_key, read_cache, speech_features, CachedSpeechFeatures, DType, EmbeddingCache,
    FixtureSentenceEmbedder, MapTranscripts,
};
use crate::retrieval::{inference_segments, DEFAULT_WINDOW};
use crate::rng::{substream, substream_keyed, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Shared text/speech embedding dimension `d`.
    pub dim: usize,
    /// Raw speech feature dimension `d′`.
    pub raw_dim: usize,
    pub train_interviews: usize,
    pub dev_interviews: usize,
    pub test_interviews: usize,
    pub segments_per_interview: usize,
    pub questions_per_segment: usize,
    /// Inclusive range of chunks spent on one question.
    pub chunks_per_question: (usize, usize),
    /// Inclusive range of frames per chunk.
    pub frames_per_chunk: (usize, usize),
    /// Standard deviation of per-frame feature noise.
    pub noise_scale: f64,
    /// Standard deviation of each entry of an interview's feature offset.
    pub speaker_offset_scale: f64,
    /// Norm of every question and transcript sentence embedding.
    pub embedding_norm: f64,
    /// Norm scale of the perturbation separating a transcript from its
    /// question, relative to `embedding_norm`.
    pub paraphrase_noise: f64,
    /// Inference window used for the recorded true segments.
    pub window: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            dim: 32,
            raw_dim: 48,
            train_interviews: 20,
            dev_interviews: 3,
            test_interviews: 5,
            segments_per_interview: 10,
            questions_per_segment: 5,
            chunks_per_question: (2, 4),
            frames_per_chunk: (3, 6),
            noise_scale: 1.0,
            speaker_offset_scale: 0.5,
            embedding_norm: 8.0,
            paraphrase_noise: 0.1,
            window: DEFAULT_WINDOW,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Argument(m.into()));
        if self.dim < 2 || self.raw_dim < 2 {
            return fail("embedding dimensions must be ≥ 2");
        }
        if self.raw_dim < self.dim {
            return fail("raw dimension must be ≥ shared dimension for a full-rank map");
        }
        if self.segments_per_interview == 0 || self.questions_per_segment == 0 {
            return fail("need ≥ 1 segment and ≥ 1 question per segment");
        }
        let (c0, c1) = self.chunks_per_question;
        let (f0, f1) = self.frames_per_chunk;
        if c0 == 0 || c1 < c0 || f0 == 0 || f1 < f0 {
            return fail("chunk and frame ranges must be non-empty and start at ≥ 1");
        }
        if !(self.embedding_norm.is_finite() && self.embedding_norm > 0.0) {
            return fail("embedding norm must be positive");
        }
        if [self.noise_scale, self.speaker_offset_scale, self.paraphrase_noise]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return fail("noise scales must be finite and ≥ 0");
        }
        if self.window == 0 {
            return fail("window must be ≥ 1");
        }
        Ok(())
    }

    pub fn n_questions(&self) -> usize {
        self.segments_per_interview * self.questions_per_segment
    }
}

/// Where one question landed in one interview.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionTruth {
    pub question_id: String,
    pub first_chunk: usize,
    /// One past the last chunk.
    pub end_chunk: usize,
    /// True inference window under the recorded `window`.
    pub segment: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterviewTruth {
    /// Owning question of every chunk.
    pub chunk_owners: Vec<String>,
    pub questions: Vec<QuestionTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub window: usize,
    pub interviews: BTreeMap<String, InterviewTruth>,
}

/// Everything a generated corpus consists of, in memory.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub spec: SyntheticSpec,
    pub questionnaire: Questionnaire,
    pub records: Vec<InterviewRecord>,
    pub speech: SyntheticSpeechProvider,
    /// Question vectors (norm `embedding_norm`) by question id.
    pub question_vectors: BTreeMap<String, Array1<f64>>,
    /// Sentence embeddings of questions and of every transcript line.
    pub sentences: EmbeddingCache,
    /// Transcripts whose embeddings are noisy copies of the owning question.
    pub paraphrase: MapTranscripts,
    /// Transcripts whose embeddings are unrelated to the owning question.
    pub decorrelated: MapTranscripts,
    pub truth: SyntheticTruth,
}

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn unit_vector(rng: &mut Rng, d: usize) -> Array1<f64> {
    loop {
        let v = Array1::from_shape_fn(d, |_| normal(rng));
        let n = v.dot(&v).sqrt();
        if n > 1e-6 {
            return v / n;
        }
    }
}

fn millis(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

pub fn question_text(k: usize) -> String {
    format!("synthetic question {k:03}")
}

fn paraphrase_text(interview: &str, chunk: usize) -> String {
    format!("paraphrase {interview} {chunk}")
}

fn decorrelated_text(interview: &str, chunk: usize) -> String {
    format!("unrelated {interview} {chunk}")
}

/// Generates a corpus; identical specs give identical corpora.
pub fn generate_corpus(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let (d, dp, m) = (spec.dim, spec.raw_dim, spec.questions_per_segment);

    let mut qrng = substream(spec.seed, "synthetic-questions");
    let mut questions = Vec::with_capacity(spec.n_questions());
    let mut question_vectors = BTreeMap::new();
    let mut sentences = EmbeddingCache::new(d, DType::F32);
    for k in 0..spec.n_questions() {
        let id = format!("q{k:03}");
        let v = unit_vector(&mut qrng, d) * spec.embedding_norm;
        sentences.push(question_text(k), v.to_vec())?;
        question_vectors.insert(id.clone(), v);
        questions.push(Question {
            id,
            text: question_text(k),
            questionnaire_position: k as u64,
        });
    }
    let questionnaire = Questionnaire::new(questions)?;

    let mut map_rng = substream(spec.seed, "synthetic-map");
    let map = Array2::from_shape_fn((dp, d), |_| normal(&mut map_rng));

    let splits = [
        (Split::Train, spec.train_interviews),
        (Split::Dev, spec.dev_interviews),
        (Split::Test, spec.test_interviews),
    ];
    let mut records = Vec::new();
    let mut sources = HashMap::new();
    let mut speaker_offsets = HashMap::new();
    let mut paraphrase = HashMap::new();
    let mut decorrelated = HashMap::new();
    let mut truth = BTreeMap::new();

    for (split, count) in splits {
        for n in 0..count {
            let id = format!("{split}-{:02}", n + 1);
            let mut layout = substream_keyed(spec.seed, "synthetic-layout", &id, 0);
            let mut text_rng = substream_keyed(spec.seed, "synthetic-transcripts", &id, 0);
            let mut offset_rng = substream_keyed(spec.seed, "synthetic-offset", &id, 0);
            let offset = Array1::from_shape_fn(dp, |_| {
                spec.speaker_offset_scale * normal(&mut offset_rng)
            });
            speaker_offsets.insert(id.clone(), offset);

            let mut chunks = Vec::new();
            let mut owners = Vec::new();
            let mut q_truth = Vec::new();
            let mut spans = Vec::new();
            let mut segments = Vec::new();
            let mut para_lines = Vec::new();
            let mut decor_lines = Vec::new();
            let mut t = millis(layout.random_range(0.0..1.0));

            for (k, q) in questionnaire.questions().iter().enumerate() {
                let count = layout.random_range(spec.chunks_per_question.0..=spec.chunks_per_question.1);
                let first = chunks.len();
                for _ in 0..count {
                    let start = t;
                    let end = millis(start + layout.random_range(1.5..2.5));
                    let index = chunks.len();
                    chunks.push(Chunk {
                        interview_id: id.clone(),
                        index,
                        start_s: start,
                        end_s: end,
                    });
                    t = millis(end + layout.random_range(0.2..0.6));
                    let frames = layout.random_range(spec.frames_per_chunk.0..=spec.frames_per_chunk.1);
                    sources.insert(
                        (id.clone(), index),
                        ChunkSource {
                            latent: &question_vectors[&q.id] / spec.embedding_norm,
                            frames,
                        },
                    );
                    owners.push(q.id.clone());

                    let noise = Array1::from_shape_fn(d, |_| normal(&mut text_rng)) / (d as f64).sqrt();
                    let para = &question_vectors[&q.id] + &(noise * (spec.paraphrase_noise * spec.embedding_norm));
                    let line = paraphrase_text(&id, index);
                    sentences.push(line.clone(), para.to_vec())?;
                    para_lines.push(line);
                    let line = decorrelated_text(&id, index);
                    sentences.push(line.clone(), (unit_vector(&mut text_rng, d) * spec.embedding_norm).to_vec())?;
                    decor_lines.push(line);
                }
                let end = chunks.len();
                spans.push(QuestionSpan {
                    interview_id: id.clone(),
                    question_id: q.id.clone(),
                    start_s: chunks[first].start_s,
                    end_s: chunks[end - 1].end_s,
                });
                q_truth.push(QuestionTruth {
                    question_id: q.id.clone(),
                    first_chunk: first,
                    end_chunk: end,
                    segment: 0,
                });
                if (k + 1) % m == 0 {
                    let seg_first = q_truth[k + 1 - m].first_chunk;
                    segments.push(SegmentAnnotation {
                        interview_id: id.clone(),
                        segment_index: segments.len(),
                        start_s: chunks[seg_first].start_s,
                        end_s: chunks[end - 1].end_s,
                        question_ids: questionnaire.questions()[k + 1 - m..=k].iter().map(|q| q.id.clone()).collect(),
                    });
                }
            }

            let windows = inference_segments(chunks.len(), spec.window)?;
            for (qt, span) in q_truth.iter_mut().zip(&spans) {
                qt.segment = ground_truth_segment(span, &windows.ranges, &chunks)?;
            }
            let annotations = match split {
                Split::Train => Annotations::Segments(segments),
                Split::Dev | Split::Test => Annotations::Spans(spans),
            };
            records.push(
                InterviewRecord {
                    interview_id: id.clone(),
                    audio_uri: None,
                    chunks,
                    split,
                    annotations,
                }
                .validated()?,
            );
            paraphrase.insert(id.clone(), para_lines);
            decorrelated.insert(id.clone(), decor_lines);
            truth.insert(
                id,
                InterviewTruth {
                    chunk_owners: owners,
                    questions: q_truth,
                },
            );
        }
    }

    let speech = SyntheticSpeechProvider {
        map,
        speaker_offsets,
        sources,
        noise_scale: spec.noise_scale,
        min_duration_s: 0.0,
        seed: spec.seed,
    };
    Ok(SyntheticCorpus {
        spec: spec.clone(),
        questionnaire,
        records,
        speech,
        question_vectors,
        sentences,
        paraphrase: MapTranscripts(paraphrase),
        decorrelated: MapTranscripts(decorrelated),
        truth: SyntheticTruth {
            window: spec.window,
            interviews: truth,
        },
    })
}

pub const QUESTIONNAIRE_FILE: &str = "questionnaire.jsonl";
pub const INTERVIEWS_DIR: &str = "interviews";
pub const SPEECH_CACHE_FILE: &str = "cache/speech.bin";
pub const SENTENCE_CACHE_FILE: &str = "cache/sentences.bin";
pub const PARAPHRASE_TRANSCRIPTS_FILE: &str = "transcripts_paraphrase.json";
pub const DECORRELATED_TRANSCRIPTS_FILE: &str = "transcripts_decorrelated.json";
pub const TRUTH_FILE: &str = "truth.json";
pub const GENERATOR_FILE: &str = "generator.json";

impl SyntheticCorpus {
    /// Materializes every chunk's frames into a frame-keyed cache.
    pub fn speech_cache(&self) -> Result<EmbeddingCache> {
        let mut cache = EmbeddingCache::new(self.spec.raw_dim, DType::F32);
        for rec in &self.records {
            for c in &rec.chunks {
                let f = speech_features(c, &self.speech)?;
                for (i, row) in f.matrix().rows().into_iter().enumerate() {
                    cache.push(frame_key(&rec.interview_id, c.index, i), row.to_vec())?;
                }
            }
        }
        Ok(cache)
    }

    /// Writes the fixture bundle read back by [`FixtureBundle::load`].
    pub fn write_bundle(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        for sub in [INTERVIEWS_DIR, "cache"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        write_questionnaire(dir.join(QUESTIONNAIRE_FILE), &self.questionnaire)?;
        for rec in &self.records {
            write_interview_manifest(dir.join(INTERVIEWS_DIR).join(format!("{}.json", rec.interview_id)), rec)?;
        }
        self.speech_cache()?.save(dir.join(SPEECH_CACHE_FILE))?;
        self.sentences.save(dir.join(SENTENCE_CACHE_FILE))?;
        self.paraphrase.save(dir.join(PARAPHRASE_TRANSCRIPTS_FILE))?;
        self.decorrelated.save(dir.join(DECORRELATED_TRANSCRIPTS_FILE))?;
        write_json(&dir.join(TRUTH_FILE), &self.truth)?;
        write_json(&dir.join(GENERATOR_FILE), &self.spec)
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("fixture serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        message: format!("{}: {e}", path.display()),
    })
}

/// Interview manifests in a directory, sorted by id.
pub fn load_interviews(dir: impl AsRef<Path>) -> Result<Vec<InterviewRecord>> {
    let dir = dir.as_ref();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for e in entries {
        let p = e.map_err(|e| Error::io(dir, e))?.path();
        if p.extension().is_some_and(|x| x == "json") {
            paths.push(p);
        }
    }
    paths.sort();
    let mut records = paths.iter().map(load_interview_manifest).collect::<Result<Vec<_>>>()?;
    records.sort_by(|a, b| a.interview_id.cmp(&b.interview_id));
    Ok(records)
}

/// A fixture bundle loaded from disk through the regular providers.
#[derive(Debug, Clone)]
pub struct FixtureBundle {
    pub questionnaire: Questionnaire,
    pub records: Vec<InterviewRecord>,
    pub speech: CachedSpeechFeatures,
    pub sentences: FixtureSentenceEmbedder,
    pub paraphrase: MapTranscripts,
    pub decorrelated: MapTranscripts,
    pub truth: SyntheticTruth,
    pub spec: SyntheticSpec,
}

impl FixtureBundle {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        Ok(Self {
            questionnaire: load_questionnaire(dir.join(QUESTIONNAIRE_FILE))?,
            records: load_interviews(dir.join(INTERVIEWS_DIR))?,
            speech: CachedSpeechFeatures::from_cache(&read_cache(dir.join(SPEECH_CACHE_FILE))?)?,
            sentences: FixtureSentenceEmbedder::from_cache(&read_cache(dir.join(SENTENCE_CACHE_FILE))?),
            paraphrase: MapTranscripts::load(dir.join(PARAPHRASE_TRANSCRIPTS_FILE))?,
            decorrelated: MapTranscripts::load(dir.join(DECORRELATED_TRANSCRIPTS_FILE))?,
            truth: read_json(&dir.join(TRUTH_FILE))?,
            spec: read_json(&dir.join(GENERATOR_FILE))?,
        })
    }

    pub fn split(&self, split: Split) -> Vec<InterviewRecord> {
        self.records.iter().filter(|r| r.split == split).cloned().collect()
    }
}

/// Mean over interviews of `1 / ⌈n_chunks / window⌉`.
pub fn chance_r1(records: &[InterviewRecord], window: usize) -> f64 {
    if records.is_empty() || window == 0 {
        return 0.0;
    }
    records
        .iter()
        .map(|r| 1.0 / r.chunks.len().div_ceil(window).max(1) as f64)
        .sum::<f64>()
        / records.len() as f64
}
