//! Fixed-window retrieval and recall metrics.
//!
//! At inference an interview is cut into windows of `W` consecutive chunks.
//! Each window is encoded on its own (self-attention sees only the window)
//! and scored for a question by its best chunk, `max_i qᵀC_i`. Windows are
//! ranked by score, ties going to the lower window index.

use std::ops::Range;
use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::corpus::{ground_truth_segment, Chunk, InterviewRecord, Questionnaire};
use crate::error::{Error, Result};
use crate::head::{encode_segment_traced, HeadParams, Mode};
use crate::providers::{
    sentence_embedding, speech_features, transcript, ChunkFeatures, SentenceEmbeddingProvider,
    SpeechFeatureProvider, TranscriptProvider,
};

pub const DEFAULT_WINDOW: usize = 14;

/// Contiguous chunk-index ranges partitioning an interview.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InferenceSegmentation {
    pub ranges: Vec<Range<usize>>,
}

impl InferenceSegmentation {
    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn n_chunks(&self) -> usize {
        self.ranges.last().map_or(0, |r| r.end)
    }
}

/// Windows of `window` chunks; the last one keeps the remainder.
pub fn inference_segments(n_chunks: usize, window: usize) -> Result<InferenceSegmentation> {
    if n_chunks == 0 || window == 0 {
        return Err(Error::Argument(format!(
            "need ≥ 1 chunk and window ≥ 1, got {n_chunks} chunks, window {window}"
        )));
    }
    let ranges = (0..n_chunks)
        .step_by(window)
        .map(|s| s..(s + window).min(n_chunks))
        .collect();
    Ok(InferenceSegmentation { ranges })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedSegment {
    pub segment: usize,
    pub score: f64,
    pub best_chunk: usize,
    pub best_chunk_score: f64,
    pub start_s: f64,
    pub end_s: f64,
    pub best_chunk_start_s: f64,
}

/// Windows in descending score order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankedResult {
    pub entries: Vec<RankedSegment>,
}

impl RankedResult {
    /// 1-based rank of `segment`, if present.
    pub fn rank_of(&self, segment: usize) -> Option<usize> {
        self.entries.iter().position(|e| e.segment == segment).map(|p| p + 1)
    }
}

/// Ranks windows by their best chunk score.
pub fn rank_segments(chunk_scores: &[f64], segmentation: &InferenceSegmentation, chunks: &[Chunk]) -> Result<RankedResult> {
    if chunk_scores.is_empty() {
        return Err(Error::Argument("interview has no chunks".into()));
    }
    if chunk_scores.len() != segmentation.n_chunks() || chunks.len() != chunk_scores.len() {
        return Err(Error::Argument(format!(
            "{} scores, {} chunks, segmentation over {}",
            chunk_scores.len(),
            chunks.len(),
            segmentation.n_chunks()
        )));
    }
    let mut entries: Vec<RankedSegment> = segmentation
        .ranges
        .iter()
        .enumerate()
        .map(|(seg, r)| {
            let mut best = r.start;
            for i in r.clone() {
                if chunk_scores[i] > chunk_scores[best] {
                    best = i;
                }
            }
            RankedSegment {
                segment: seg,
                score: chunk_scores[best],
                best_chunk: best,
                best_chunk_score: chunk_scores[best],
                start_s: chunks[r.start].start_s,
                end_s: chunks[r.end - 1].end_s,
                best_chunk_start_s: chunks[best].start_s,
            }
        })
        .collect();
    entries.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.segment.cmp(&b.segment)));
    Ok(RankedResult { entries })
}

/// Scores every window of an interview for one question embedding.
pub fn score_question(
    question: ArrayView1<'_, f64>,
    chunk_embeddings: ArrayView2<'_, f64>,
    segmentation: &InferenceSegmentation,
    chunks: &[Chunk],
) -> Result<RankedResult> {
    if chunk_embeddings.ncols() != question.len() {
        return Err(Error::Argument(format!(
            "question has dim {}, chunk embeddings {}",
            question.len(),
            chunk_embeddings.ncols()
        )));
    }
    let scores = chunk_embeddings.dot(&question).to_vec();
    rank_segments(&scores, segmentation, chunks)
}

/// Encodes every inference window independently in eval mode.
pub fn encode_interview(features: &[ChunkFeatures], params: &HeadParams, segmentation: &InferenceSegmentation) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((features.len(), params.config.dim));
    for r in &segmentation.ranges {
        let views: Vec<_> = features[r.clone()].iter().map(|f| f.matrix().view()).collect();
        let trace = encode_segment_traced(&views, params, Mode::Eval)?;
        out.slice_mut(ndarray::s![r.clone(), ..]).assign(&trace.output);
    }
    Ok(out)
}

/// Feeds transcript sentence embeddings to the head as one-frame features.
/// Chunks with empty transcripts get a zero row and are counted.
pub struct TranscriptFeatures<'a> {
    pub transcripts: &'a dyn TranscriptProvider,
    pub sentences: &'a dyn SentenceEmbeddingProvider,
    empty: AtomicUsize,
}

impl<'a> TranscriptFeatures<'a> {
    pub fn new(transcripts: &'a dyn TranscriptProvider, sentences: &'a dyn SentenceEmbeddingProvider) -> Self {
        Self {
            transcripts,
            sentences,
            empty: AtomicUsize::new(0),
        }
    }

    /// Chunks served so far whose transcript was empty.
    pub fn empty_transcripts(&self) -> usize {
        self.empty.load(Ordering::Relaxed)
    }
}

impl SpeechFeatureProvider for TranscriptFeatures<'_> {
    fn dim(&self) -> usize {
        self.sentences.dim()
    }

    fn features(&self, chunk: &Chunk) -> Result<ChunkFeatures> {
        let text = transcript(chunk, self.transcripts)?;
        let row = if text.trim().is_empty() {
            self.empty.fetch_add(1, Ordering::Relaxed);
            Array1::zeros(self.sentences.dim())
        } else {
            sentence_embedding(&text, self.sentences)?.0
        };
        ChunkFeatures::new(row.insert_axis(ndarray::Axis(0)))
    }
}

/// Per-chunk transcript features of a whole interview.
pub fn text_variant_features(chunks: &[Chunk], features: &TranscriptFeatures<'_>) -> Result<Vec<ChunkFeatures>> {
    chunks.iter().map(|c| speech_features(c, features)).collect()
}

/// Chunk embeddings plus a validity mask; masked chunks always rank last.
#[derive(Debug, Clone)]
pub struct ChunkIndex {
    pub embeddings: Array2<f64>,
    pub valid: Vec<bool>,
}

impl ChunkIndex {
    pub fn dense(embeddings: Array2<f64>) -> Self {
        let valid = vec![true; embeddings.nrows()];
        Self { embeddings, valid }
    }

    /// Dot-product scores with masked chunks set to (minimum valid score − 1).
    pub fn scores(&self, question: ArrayView1<'_, f64>) -> Result<Vec<f64>> {
        let mut scores = self.embeddings.dot(&question).to_vec();
        let floor = scores
            .iter()
            .zip(&self.valid)
            .filter(|(_, &v)| v)
            .map(|(s, _)| *s)
            .fold(f64::INFINITY, f64::min);
        if !floor.is_finite() {
            return Err(Error::Argument("no chunk carries a usable embedding".into()));
        }
        for (s, &v) in scores.iter_mut().zip(&self.valid) {
            if !v {
                *s = floor - 1.0;
            }
        }
        Ok(scores)
    }
}

/// Transcript embeddings per chunk for the learning-free baseline.
pub fn transcript_index(
    chunks: &[Chunk],
    transcripts: &dyn TranscriptProvider,
    sentences: &dyn SentenceEmbeddingProvider,
) -> Result<ChunkIndex> {
    let mut embeddings = Array2::zeros((chunks.len(), sentences.dim()));
    let mut valid = vec![false; chunks.len()];
    for (i, c) in chunks.iter().enumerate() {
        let text = transcript(c, transcripts)?;
        if text.trim().is_empty() {
            continue;
        }
        embeddings.row_mut(i).assign(&sentence_embedding(&text, sentences)?.0);
        valid[i] = true;
    }
    if !valid.iter().any(|&v| v) {
        return Err(Error::Argument("every transcript is empty".into()));
    }
    Ok(ChunkIndex { embeddings, valid })
}

/// Learning-free ranking by question/transcript sentence-embedding dot products.
pub fn no_train_score(
    question_text: &str,
    chunks: &[Chunk],
    transcripts: &dyn TranscriptProvider,
    sentences: &dyn SentenceEmbeddingProvider,
    segmentation: &InferenceSegmentation,
) -> Result<RankedResult> {
    let index = transcript_index(chunks, transcripts, sentences)?;
    let q = sentence_embedding(question_text, sentences)?;
    rank_segments(&index.scores(q.0.view())?, segmentation, chunks)
}

/// Fraction of questions whose true window is within the top `k`.
pub fn recall_at_k(rankings: &[RankedResult], truths: &[usize], k: usize) -> Result<f64> {
    if k < 1 {
        return Err(Error::Argument("k must be ≥ 1".into()));
    }
    if rankings.len() != truths.len() || rankings.is_empty() {
        return Err(Error::Argument(format!(
            "{} rankings for {} truths",
            rankings.len(),
            truths.len()
        )));
    }
    let hits = rankings
        .iter()
        .zip(truths)
        .filter(|(r, &t)| r.rank_of(t).is_some_and(|rank| rank <= k))
        .count();
    Ok(hits as f64 / truths.len() as f64)
}

pub fn r_avg(r1: f64, r5: f64, r10: f64) -> f64 {
    (r1 + r5 + r10) / 3.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecallSummary {
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    pub ravg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterviewRecall {
    pub id: String,
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
}

impl InterviewRecall {
    pub fn from_rankings(id: &str, rankings: &[RankedResult], truths: &[usize]) -> Result<Self> {
        Ok(Self {
            id: id.to_owned(),
            r1: recall_at_k(rankings, truths, 1)?,
            r5: recall_at_k(rankings, truths, 5)?,
            r10: recall_at_k(rankings, truths, 10)?,
        })
    }
}

impl RecallSummary {
    /// Interview-level mean (each interview weighs the same).
    pub fn mean(per_interview: &[InterviewRecall]) -> Result<Self> {
        if per_interview.is_empty() {
            return Err(Error::Argument("no interview to average".into()));
        }
        let n = per_interview.len() as f64;
        let r1 = per_interview.iter().map(|r| r.r1).sum::<f64>() / n;
        let r5 = per_interview.iter().map(|r| r.r5).sum::<f64>() / n;
        let r10 = per_interview.iter().map(|r| r.r10).sum::<f64>() / n;
        Ok(Self {
            r1,
            r5,
            r10,
            ravg: r_avg(r1, r5, r10),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_interview: Vec<InterviewRecall>,
    pub mean: RecallSummary,
    pub excluded_questions: usize,
}

/// Question-embedding options shared by every evaluation path.
#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub window: usize,
    pub normalize_questions: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            normalize_questions: false,
        }
    }
}

/// Evaluates annotated dev/test interviews given a per-interview chunk index.
///
/// Questions whose span overlaps no chunk are left out of the metrics and
/// counted in `excluded_questions`. Interviews without a locatable question
/// are left out of the mean.
pub fn evaluate(
    records: &[InterviewRecord],
    questionnaire: &Questionnaire,
    sentences: &dyn SentenceEmbeddingProvider,
    options: EvalOptions,
    mut index_for: impl FnMut(&InterviewRecord, &InferenceSegmentation) -> Result<ChunkIndex>,
) -> Result<EvalReport> {
    let mut per_interview = Vec::new();
    let mut excluded = 0;
    for rec in records {
        if rec.chunks.is_empty() {
            excluded += rec.question_spans().len();
            continue;
        }
        let seg = inference_segments(rec.chunks.len(), options.window)?;
        let index = index_for(rec, &seg)?;
        let mut rankings = Vec::new();
        let mut truths = Vec::new();
        for span in rec.question_spans() {
            let truth = match ground_truth_segment(span, &seg.ranges, &rec.chunks) {
                Ok(t) => t,
                Err(Error::Unlocatable { .. }) => {
                    excluded += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let q = questionnaire
                .get(&span.question_id)
                .ok_or_else(|| Error::NotFound(format!("question {:?} not in questionnaire", span.question_id)))?;
            let mut qv = sentence_embedding(&q.text, sentences)?.0;
            if options.normalize_questions {
                let n = qv.dot(&qv).sqrt();
                if n > 0.0 {
                    qv /= n;
                }
            }
            rankings.push(rank_segments(&index.scores(qv.view())?, &seg, &rec.chunks)?);
            truths.push(truth);
        }
        if !truths.is_empty() {
            per_interview.push(InterviewRecall::from_rankings(&rec.interview_id, &rankings, &truths)?);
        }
    }
    let mean = RecallSummary::mean(&per_interview)?;
    Ok(EvalReport {
        per_interview,
        mean,
        excluded_questions: excluded,
    })
}

/// Chunk index of a trained head over any feature provider.
pub fn head_index(
    record: &InterviewRecord,
    segmentation: &InferenceSegmentation,
    params: &HeadParams,
    features: &dyn SpeechFeatureProvider,
) -> Result<ChunkIndex> {
    let feats = record
        .chunks
        .iter()
        .map(|c| speech_features(c, features))
        .collect::<Result<Vec<_>>>()?;
    Ok(ChunkIndex::dense(encode_interview(&feats, params, segmentation)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn chunks(n: usize) -> Vec<Chunk> {
        (0..n)
            .map(|i| Chunk {
                interview_id: "I".into(),
                index: i,
                start_s: 2.0 * i as f64,
                end_s: 2.0 * i as f64 + 1.5,
            })
            .collect()
    }

    fn ranking(order: &[usize]) -> RankedResult {
        RankedResult {
            entries: order
                .iter()
                .enumerate()
                .map(|(i, &s)| RankedSegment {
                    segment: s,
                    score: -(i as f64),
                    best_chunk: 0,
                    best_chunk_score: -(i as f64),
                    start_s: 0.0,
                    end_s: 1.0,
                    best_chunk_start_s: 0.0,
                })
                .collect(),
        }
    }

    #[test]
    fn window_arithmetic() {
        let lens = |n, w| {
            inference_segments(n, w)
                .unwrap()
                .ranges
                .iter()
                .map(|r| r.len())
                .collect::<Vec<_>>()
        };
        assert_eq!(lens(30, 14), vec![14, 14, 2]);
        assert_eq!(lens(14, 14), vec![14]);
        assert_eq!(lens(1, 14), vec![1]);
        assert!(inference_segments(0, 14).is_err());
    }

    #[test]
    fn exact_match_ranks_first() {
        let mut e = Array2::zeros((20, 20));
        for i in 0..20 {
            e[[i, i]] = 1.0 + i as f64;
        }
        let q = e.row(7).to_owned();
        let seg = inference_segments(20, 3).unwrap();
        let r = score_question(q.view(), e.view(), &seg, &chunks(20)).unwrap();
        assert_eq!(r.entries[0].segment, 2);
        assert_eq!(r.entries[0].best_chunk, 7);
        assert_eq!(r.entries[0].score, q.dot(&q));
        assert_eq!(r.entries[0].start_s, 12.0);
        assert_eq!(r.entries[0].end_s, 17.5);
    }

    #[test]
    fn ties_go_to_lower_index() {
        let e = array![[1.0], [0.0], [1.0], [0.0]];
        let seg = inference_segments(4, 2).unwrap();
        let r = score_question(array![1.0].view(), e.view(), &seg, &chunks(4)).unwrap();
        assert_eq!(r.entries.iter().map(|e| e.segment).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn recall_hand_built_ranks() {
        let rankings = vec![
            ranking(&[0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11]),
            ranking(&[0, 2, 3, 1, 4, 5, 6, 7, 8, 9, 10, 11]),
            ranking(&[0, 1, 3, 4, 5, 6, 7, 8, 9, 10, 2, 11]),
        ];
        // truths sit at ranks 1, 4 and 11
        let truths = [0, 1, 2];
        assert_eq!(recall_at_k(&rankings, &truths, 1).unwrap(), 1.0 / 3.0);
        assert_eq!(recall_at_k(&rankings, &truths, 5).unwrap(), 2.0 / 3.0);
        assert_eq!(recall_at_k(&rankings, &truths, 10).unwrap(), 2.0 / 3.0);
        assert!(recall_at_k(&rankings, &truths, 0).is_err());
    }

    #[test]
    fn interview_mean_not_question_mean() {
        let a = InterviewRecall::from_rankings("a", &[ranking(&[0, 1])], &[0]).unwrap();
        let b = InterviewRecall::from_rankings(
            "b",
            &[ranking(&[0, 1]), ranking(&[0, 1]), ranking(&[0, 1])],
            &[1, 1, 1],
        )
        .unwrap();
        assert_eq!((a.r1, b.r1), (1.0, 0.0));
        let m = RecallSummary::mean(&[a, b]).unwrap();
        assert_eq!(m.r1, 0.5);
    }

    #[test]
    fn perfect_rankings() {
        let r = InterviewRecall::from_rankings("a", &[ranking(&[3, 1]), ranking(&[1, 3])], &[3, 1]).unwrap();
        let m = RecallSummary::mean(&[r]).unwrap();
        assert_eq!((m.r1, m.r5, m.r10, m.ravg), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn masked_chunks_rank_last() {
        let idx = ChunkIndex {
            embeddings: array![[5.0], [-2.0], [1.0]],
            valid: vec![false, true, true],
        };
        assert_eq!(idx.scores(array![1.0].view()).unwrap(), vec![-3.0, -2.0, 1.0]);
        let none = ChunkIndex {
            embeddings: array![[5.0]],
            valid: vec![false],
        };
        assert!(none.scores(array![1.0].view()).is_err());
    }

    proptest! {
        #[test]
        fn ranking_invariances(
            scores in proptest::collection::vec(-5.0f64..5.0, 1..40),
            w in 1usize..8,
            shift in 0.0f64..10.0,
        ) {
            let n = scores.len();
            let seg = inference_segments(n, w).unwrap();
            let ch = chunks(n);
            let base = rank_segments(&scores, &seg, &ch).unwrap();
            let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
            let moved = rank_segments(&shifted, &seg, &ch).unwrap();
            let order = |r: &RankedResult| r.entries.iter().map(|e| e.segment).collect::<Vec<_>>();
            // a uniform shift can only reorder exact ties broken by rounding
            if scores.iter().all(|s| (s * 1e6).fract() == 0.0) {
                prop_assert_eq!(order(&base), order(&moved));
            }
            for e in &base.entries {
                prop_assert_eq!(e.score, scores[e.best_chunk]);
                prop_assert!(seg.ranges[e.segment].contains(&e.best_chunk));
            }
            for pair in base.entries.windows(2) {
                prop_assert!(pair[0].score >= pair[1].score);
            }
        }

        #[test]
        fn scaling_question_keeps_order(
            emb in proptest::collection::vec(-3.0f64..3.0, 12..60),
            c in 0.1f64..10.0,
        ) {
            let n = emb.len() / 3;
            let e = Array2::from_shape_vec((n, 3), emb[..n * 3].to_vec()).unwrap();
            let q = array![0.5, -1.0, 2.0];
            let seg = inference_segments(n, 3).unwrap();
            let a = score_question(q.view(), e.view(), &seg, &chunks(n)).unwrap();
            let b = score_question((&q * c).view(), e.view(), &seg, &chunks(n)).unwrap();
            let sa: Vec<f64> = a.entries.iter().map(|x| x.score).collect();
            let sb: Vec<f64> = b.entries.iter().map(|x| x.score).collect();
            // equal ordering up to near-ties
            for (x, y) in sa.iter().zip(&sb) {
                prop_assert!((x * c - y).abs() <= 1e-9 * (1.0 + y.abs()));
            }
        }

        #[test]
        fn recall_monotone_in_k(
            perms in proptest::collection::vec(Just((0usize..12).collect::<Vec<_>>()).prop_shuffle(), 1..20),
            truths_seed in proptest::collection::vec(0usize..12, 20),
        ) {
            let rankings: Vec<_> = perms.iter().map(|p| ranking(p)).collect();
            let truths: Vec<_> = truths_seed[..rankings.len()].to_vec();
            let mut prev = 0.0;
            for k in 1..=12 {
                let r = recall_at_k(&rankings, &truths, k).unwrap();
                prop_assert!(r >= prev);
                prev = r;
            }
            prop_assert_eq!(prev, 1.0);
        }
    }
}
