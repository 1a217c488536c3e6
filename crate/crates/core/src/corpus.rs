//! Interviews, chunks, questions and their annotations, plus manifest I/O.
//!
//! Training interviews carry coarse segment annotations (an ordered list of
//! the questions asked inside a time span). Dev and test interviews carry one
//! exact time span per question. Chunk indices are always re-derived from
//! start-time order when a manifest is loaded.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of questions per annotated training segment.
pub const DEFAULT_QUESTIONS_PER_SEGMENT: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    #[serde(rename = "position")]
    pub questionnaire_position: u64,
}

/// The fixed, ordered list of questions interviewers draw from.
#[derive(Debug, Clone, PartialEq)]
pub struct Questionnaire {
    questions: Vec<Question>,
    by_id: HashMap<String, usize>,
}

impl Questionnaire {
    pub fn new(questions: Vec<Question>) -> Result<Self> {
        if questions.is_empty() {
            return Err(Error::Validation("empty questionnaire".into()));
        }
        let mut by_id = HashMap::with_capacity(questions.len());
        for (i, q) in questions.iter().enumerate() {
            if by_id.insert(q.id.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate question id {:?}", q.id)));
            }
            if i > 0 && q.questionnaire_position <= questions[i - 1].questionnaire_position {
                return Err(Error::Validation(format!(
                    "question {:?}: positions must be strictly increasing",
                    q.id
                )));
            }
        }
        Ok(Self { questions, by_id })
    }

    pub fn questions(&self) -> &[Question] {
        &self.questions
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Question> {
        self.by_id.get(id).map(|&i| &self.questions[i])
    }
}

/// Reads a questionnaire stored as one JSON object per line.
pub fn load_questionnaire(path: impl AsRef<Path>) -> Result<Questionnaire> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut questions = Vec::new();
    let mut first_line: HashMap<String, usize> = HashMap::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let q: Question = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if let Some(prev) = first_line.insert(q.id.clone(), line_no) {
            return Err(Error::Validation(format!(
                "duplicate question id {:?} on line {line_no} (first seen on line {prev})",
                q.id
            )));
        }
        questions.push(q);
    }
    Questionnaire::new(questions)
}

pub fn write_questionnaire(path: impl AsRef<Path>, questionnaire: &Questionnaire) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for q in questionnaire.questions() {
        serde_json::to_writer(&mut out, q).expect("question serializes");
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Argument(format!("unknown split {other:?}"))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

/// A voiced span of an interview; the atomic unit of speech embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub interview_id: String,
    pub index: usize,
    pub start_s: f64,
    pub end_s: f64,
}

impl Chunk {
    pub fn duration(&self) -> f64 {
        self.end_s - self.start_s
    }

    /// Length of the intersection with `[start_s, end_s]`, zero when disjoint.
    pub fn overlap(&self, start_s: f64, end_s: f64) -> f64 {
        (self.end_s.min(end_s) - self.start_s.max(start_s)).max(0.0)
    }
}

/// Coarse training annotation: a time span and the ordered questions asked in it.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentAnnotation {
    pub interview_id: String,
    pub segment_index: usize,
    pub start_s: f64,
    pub end_s: f64,
    pub question_ids: Vec<String>,
}

/// Fine-grained dev/test annotation for a single question.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionSpan {
    pub interview_id: String,
    pub question_id: String,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Annotations {
    Segments(Vec<SegmentAnnotation>),
    Spans(Vec<QuestionSpan>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterviewRecord {
    pub interview_id: String,
    pub audio_uri: Option<String>,
    pub chunks: Vec<Chunk>,
    pub split: Split,
    pub annotations: Annotations,
}

impl InterviewRecord {
    pub fn segments(&self) -> &[SegmentAnnotation] {
        match &self.annotations {
            Annotations::Segments(s) => s,
            Annotations::Spans(_) => &[],
        }
    }

    pub fn question_spans(&self) -> &[QuestionSpan] {
        match &self.annotations {
            Annotations::Spans(s) => s,
            Annotations::Segments(_) => &[],
        }
    }

    /// Chunk indices belonging to each training segment, by chunk midpoint.
    pub fn segment_chunks(&self) -> Vec<Vec<usize>> {
        self.segments()
            .iter()
            .map(|seg| {
                self.chunks
                    .iter()
                    .filter(|c| {
                        let mid = 0.5 * (c.start_s + c.end_s);
                        mid >= seg.start_s && mid <= seg.end_s
                    })
                    .map(|c| c.index)
                    .collect()
            })
            .collect()
    }

    /// Checks every invariant of a record and normalizes ordering: chunks and
    /// annotations are sorted by start time and indices are re-derived.
    pub fn validated(mut self) -> Result<Self> {
        let id = self.interview_id.clone();
        for c in &self.chunks {
            if !(c.start_s.is_finite() && c.end_s.is_finite()) || c.start_s < 0.0 {
                return Err(Error::Validation(format!(
                    "{id}: chunk [{}, {}] has invalid times",
                    c.start_s, c.end_s
                )));
            }
            if c.end_s <= c.start_s {
                return Err(Error::Validation(format!(
                    "{id}: chunk [{}, {}] ends before it starts",
                    c.start_s, c.end_s
                )));
            }
        }
        self.chunks
            .sort_by(|a, b| a.start_s.total_cmp(&b.start_s).then(a.end_s.total_cmp(&b.end_s)));
        check_no_overlap(&id, "chunks", self.chunks.iter().map(|c| (c.start_s, c.end_s)))?;
        for (i, c) in self.chunks.iter_mut().enumerate() {
            c.index = i;
            c.interview_id = id.clone();
        }

        match (&mut self.annotations, self.split) {
            (Annotations::Segments(segs), Split::Train) => {
                for s in segs.iter() {
                    if s.end_s <= s.start_s || !s.start_s.is_finite() || !s.end_s.is_finite() {
                        return Err(Error::Validation(format!(
                            "{id}: segment [{}, {}] has invalid times",
                            s.start_s, s.end_s
                        )));
                    }
                    if s.question_ids.is_empty() {
                        return Err(Error::Validation(format!("{id}: segment without questions")));
                    }
                    if s.question_ids.len() != segs[0].question_ids.len() {
                        return Err(Error::Validation(format!(
                            "{id}: segments disagree on questions per segment ({} vs {})",
                            s.question_ids.len(),
                            segs[0].question_ids.len()
                        )));
                    }
                }
                segs.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
                check_no_overlap(&id, "segments", segs.iter().map(|s| (s.start_s, s.end_s)))?;
                for (i, s) in segs.iter_mut().enumerate() {
                    s.segment_index = i;
                    s.interview_id = id.clone();
                }
            }
            (Annotations::Spans(spans), Split::Dev | Split::Test) => {
                for s in spans.iter() {
                    if s.end_s <= s.start_s || !s.start_s.is_finite() || !s.end_s.is_finite() {
                        return Err(Error::Validation(format!(
                            "{id}: question span {} [{}, {}] has invalid times",
                            s.question_id, s.start_s, s.end_s
                        )));
                    }
                }
                spans.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
                for s in spans.iter_mut() {
                    s.interview_id = id.clone();
                }
            }
            (Annotations::Spans(_), Split::Train) => {
                return Err(Error::Schema(format!("{id}: train record carries question spans")));
            }
            (Annotations::Segments(_), split) => {
                return Err(Error::Schema(format!("{id}: {split} record carries segment annotations")));
            }
        }
        Ok(self)
    }
}

fn check_no_overlap(id: &str, what: &str, spans: impl Iterator<Item = (f64, f64)>) -> Result<()> {
    let mut prev: Option<(f64, f64)> = None;
    for (s, e) in spans {
        if let Some((ps, pe)) = prev {
            if s < pe {
                return Err(Error::Validation(format!(
                    "{id}: overlapping {what} [{ps}, {pe}] and [{s}, {e}]"
                )));
            }
        }
        prev = Some((s, e));
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChunkFile {
    start_s: f64,
    end_s: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentFile {
    start_s: f64,
    end_s: f64,
    question_ids: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpanFile {
    question_id: String,
    start_s: f64,
    end_s: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InterviewFile {
    interview_id: String,
    split: Split,
    #[serde(default)]
    audio_uri: Option<String>,
    chunks: Vec<ChunkFile>,
    #[serde(default)]
    segments: Option<Vec<SegmentFile>>,
    #[serde(default)]
    question_spans: Option<Vec<SpanFile>>,
}

/// Parses an interview manifest from JSON text.
pub fn parse_interview_manifest(text: &str) -> Result<InterviewRecord> {
    let file: InterviewFile = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    let id = file.interview_id.clone();
    let chunks = file
        .chunks
        .into_iter()
        .map(|c| Chunk {
            interview_id: id.clone(),
            index: 0,
            start_s: c.start_s,
            end_s: c.end_s,
        })
        .collect();
    let has_spans = file.question_spans.as_ref().is_some_and(|s| !s.is_empty());
    let has_segments = file.segments.as_ref().is_some_and(|s| !s.is_empty());
    let annotations = match file.split {
        Split::Train => {
            if has_spans {
                return Err(Error::Schema(format!("{id}: train record carries question spans")));
            }
            Annotations::Segments(
                file.segments
                    .unwrap_or_default()
                    .into_iter()
                    .map(|s| SegmentAnnotation {
                        interview_id: id.clone(),
                        segment_index: 0,
                        start_s: s.start_s,
                        end_s: s.end_s,
                        question_ids: s.question_ids,
                    })
                    .collect(),
            )
        }
        Split::Dev | Split::Test => {
            if has_segments {
                return Err(Error::Schema(format!(
                    "{id}: {} record carries segment annotations",
                    file.split
                )));
            }
            Annotations::Spans(
                file.question_spans
                    .unwrap_or_default()
                    .into_iter()
                    .map(|s| QuestionSpan {
                        interview_id: id.clone(),
                        question_id: s.question_id,
                        start_s: s.start_s,
                        end_s: s.end_s,
                    })
                    .collect(),
            )
        }
    };
    InterviewRecord {
        interview_id: file.interview_id,
        audio_uri: file.audio_uri,
        chunks,
        split: file.split,
        annotations,
    }
    .validated()
}

pub fn load_interview_manifest(path: impl AsRef<Path>) -> Result<InterviewRecord> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_interview_manifest(&text)
}

/// Serializes a record in manifest form (pretty JSON).
pub fn interview_manifest_json(record: &InterviewRecord) -> String {
    let chunks = record
        .chunks
        .iter()
        .map(|c| ChunkFile {
            start_s: c.start_s,
            end_s: c.end_s,
        })
        .collect();
    let (segments, question_spans) = match &record.annotations {
        Annotations::Segments(segs) => (
            Some(
                segs.iter()
                    .map(|s| SegmentFile {
                        start_s: s.start_s,
                        end_s: s.end_s,
                        question_ids: s.question_ids.clone(),
                    })
                    .collect(),
            ),
            None,
        ),
        Annotations::Spans(spans) => (
            None,
            Some(
                spans
                    .iter()
                    .map(|s| SpanFile {
                        question_id: s.question_id.clone(),
                        start_s: s.start_s,
                        end_s: s.end_s,
                    })
                    .collect(),
            ),
        ),
    };
    let file = InterviewFile {
        interview_id: record.interview_id.clone(),
        split: record.split,
        audio_uri: record.audio_uri.clone(),
        chunks,
        segments,
        question_spans,
    };
    serde_json::to_string_pretty(&file).expect("manifest serializes")
}

pub fn write_interview_manifest(path: impl AsRef<Path>, record: &InterviewRecord) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(interview_manifest_json(record).as_bytes())
        .and_then(|_| f.write_all(b"\n"))
        .map_err(|e| Error::io(path, e))
}

/// Maps a fine-grained question span onto the inference segment with the
/// largest total temporal overlap. Ties go to the lower segment index.
pub fn ground_truth_segment(
    span: &QuestionSpan,
    segmentation: &[Range<usize>],
    chunks: &[Chunk],
) -> Result<usize> {
    let mut expected = 0;
    for r in segmentation {
        if r.start != expected || r.end <= r.start {
            return Err(Error::Argument(format!(
                "segmentation is not a contiguous partition at range {r:?}"
            )));
        }
        expected = r.end;
    }
    if expected != chunks.len() {
        return Err(Error::Argument(format!(
            "segmentation covers {expected} chunks, interview has {}",
            chunks.len()
        )));
    }

    let mut best: Option<(usize, f64)> = None;
    for (seg, r) in segmentation.iter().enumerate() {
        let overlap: f64 = chunks[r.clone()]
            .iter()
            .map(|c| c.overlap(span.start_s, span.end_s))
            .sum();
        if overlap > 0.0 && best.is_none_or(|(_, b)| overlap > b) {
            best = Some((seg, overlap));
        }
    }
    best.map(|(seg, _)| seg).ok_or_else(|| Error::Unlocatable {
        question_id: span.question_id.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chunk(i: usize, s: f64, e: f64) -> Chunk {
        Chunk {
            interview_id: "I".into(),
            index: i,
            start_s: s,
            end_s: e,
        }
    }

    fn span(s: f64, e: f64) -> QuestionSpan {
        QuestionSpan {
            interview_id: "I".into(),
            question_id: "q".into(),
            start_s: s,
            end_s: e,
        }
    }

    #[test]
    fn questionnaire_from_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.jsonl");
        fs::write(
            &p,
            "{\"id\":\"q1\",\"text\":\"a\",\"position\":0}\n{\"id\":\"q2\",\"text\":\"b\",\"position\":1}\n{\"id\":\"q3\",\"text\":\"c\",\"position\":2}\n",
        )
        .unwrap();
        let q = load_questionnaire(&p).unwrap();
        assert_eq!(q.len(), 3);
        assert_eq!(q.get("q2").unwrap().text, "b");
    }

    #[test]
    fn questionnaire_duplicate_names_second_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.jsonl");
        let mut text = String::new();
        for i in 0..9 {
            let id = if i == 1 || i == 8 { "q7".to_string() } else { format!("x{i}") };
            text.push_str(&format!("{{\"id\":\"{id}\",\"text\":\"t\",\"position\":{i}}}\n"));
        }
        fs::write(&p, text).unwrap();
        let err = load_questionnaire(&p).unwrap_err().to_string();
        assert!(err.contains("\"q7\"") && err.contains("line 9"), "{err}");
    }

    #[test]
    fn questionnaire_empty_and_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.jsonl");
        fs::write(&p, "").unwrap();
        assert!(load_questionnaire(&p).unwrap_err().to_string().contains("empty questionnaire"));
        fs::write(&p, "{\"id\":\"a\",\"text\":\"t\",\"position\":0}\nnot json\n").unwrap();
        assert!(matches!(load_questionnaire(&p), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn manifest_reindexes_sorted_chunks() {
        let rec = parse_interview_manifest(
            r#"{"interview_id":"I1","split":"dev","audio_uri":null,
                "chunks":[{"start_s":3.0,"end_s":4.0},{"start_s":0.0,"end_s":2.0}],
                "question_spans":[]}"#,
        )
        .unwrap();
        let idx: Vec<_> = rec.chunks.iter().map(|c| c.index).collect();
        assert_eq!(idx, vec![0, 1]);
        assert_eq!(rec.chunks[0].start_s, 0.0);
    }

    #[test]
    fn manifest_rejects_overlap() {
        let err = parse_interview_manifest(
            r#"{"interview_id":"I1","split":"dev",
                "chunks":[{"start_s":0.0,"end_s":2.0},{"start_s":1.5,"end_s":3.0}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("overlapping")), "{err}");
    }

    #[test]
    fn dev_manifest_with_spans() {
        let rec = parse_interview_manifest(
            r#"{"interview_id":"D","split":"dev","chunks":[{"start_s":0,"end_s":1}],
                "question_spans":[
                  {"question_id":"a","start_s":0,"end_s":1},
                  {"question_id":"b","start_s":2,"end_s":3},
                  {"question_id":"c","start_s":4,"end_s":5}]}"#,
        )
        .unwrap();
        assert_eq!(rec.split, Split::Dev);
        assert_eq!(rec.question_spans().len(), 3);
    }

    #[test]
    fn train_manifest_with_spans_is_schema_error() {
        let err = parse_interview_manifest(
            r#"{"interview_id":"T","split":"train","chunks":[],
                "question_spans":[{"question_id":"a","start_s":0,"end_s":1}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn ground_truth_full_containment() {
        let chunks: Vec<_> = (0..8).map(|i| chunk(i, 2.0 * i as f64, 2.0 * i as f64 + 1.5)).collect();
        let seg: Vec<_> = (0..4).map(|s| 2 * s..2 * s + 2).collect();
        // chunk 6 lives in segment 3
        assert_eq!(ground_truth_segment(&span(12.0, 13.5), &seg, &chunks).unwrap(), 3);
    }

    #[test]
    fn ground_truth_majority_overlap() {
        // segment 0 = chunk [8,11], segment 1 = chunk [11,16]; span [10,14]
        // overlaps 1 s with segment 0 and 3 s with segment 1.
        let chunks = vec![chunk(0, 8.0, 11.0), chunk(1, 11.0, 16.0)];
        let seg = vec![0..1, 1..2];
        let overlaps: Vec<f64> = seg
            .iter()
            .map(|r| chunks[r.clone()].iter().map(|c| c.overlap(10.0, 14.0)).sum())
            .collect();
        assert_eq!(overlaps, vec![1.0, 3.0]);
        assert_eq!(ground_truth_segment(&span(10.0, 14.0), &seg, &chunks).unwrap(), 1);
    }

    #[test]
    fn ground_truth_tie_goes_low() {
        let chunks = vec![chunk(0, 0.0, 2.0), chunk(1, 2.0, 4.0)];
        assert_eq!(ground_truth_segment(&span(1.0, 3.0), &[0..1, 1..2], &chunks).unwrap(), 0);
    }

    #[test]
    fn ground_truth_in_silence() {
        let chunks = vec![chunk(0, 0.0, 2.0), chunk(1, 5.0, 6.0)];
        let err = ground_truth_segment(&span(2.5, 4.5), &[0..2], &chunks).unwrap_err();
        assert!(matches!(err, Error::Unlocatable { .. }));
    }

    #[test]
    fn ground_truth_rejects_gappy_segmentation() {
        let chunks = vec![chunk(0, 0.0, 2.0), chunk(1, 5.0, 6.0)];
        assert!(ground_truth_segment(&span(0.0, 1.0), &[0..1], &chunks).is_err());
    }
}
