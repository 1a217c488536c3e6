//! Persisted per-interview retrieval index.
//!
//! An index stores post-head chunk embeddings (f32) and chunk timestamps, so
//! answering a query needs only the sentence-embedding provider. Files are
//! named by interview, head fingerprint and window, and carry a fingerprint
//! of the manifest they were built from to detect staleness.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::corpus::{interview_manifest_json, Chunk, InterviewRecord, Questionnaire};
use crate::error::{Error, Result};
use crate::head::{hex_digest, HeadParams};
use crate::providers::{sentence_embedding, SentenceEmbeddingProvider, SpeechFeatureProvider};
use crate::retrieval::{head_index, inference_segments, score_question, InferenceSegmentation, RankedSegment};

const MAGIC: &[u8; 8] = b"IDNTINDX";
const VERSION: u16 = 1;
pub const INDEX_EXTENSION: &str = "qidx";

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    pub interview_id: String,
    pub window: usize,
    /// `n × d`, values exactly representable in f32.
    pub embeddings: Array2<f64>,
    pub chunks: Vec<Chunk>,
    pub head_fingerprint: String,
    pub manifest_fingerprint: String,
    /// Seconds since the Unix epoch.
    pub built_at: u64,
}

/// sha256 hex of the manifest's canonical JSON form.
pub fn manifest_fingerprint(record: &InterviewRecord) -> String {
    hex_digest(interview_manifest_json(record).as_bytes())
}

/// Encodes every inference window of `record` in eval mode.
pub fn build_index(
    record: &InterviewRecord,
    params: &HeadParams,
    speech: &dyn SpeechFeatureProvider,
    window: usize,
    built_at: u64,
) -> Result<RetrievalIndex> {
    let segmentation = inference_segments(record.chunks.len(), window)?;
    let index = head_index(record, &segmentation, params, speech)?;
    Ok(RetrievalIndex {
        interview_id: record.interview_id.clone(),
        window,
        embeddings: index.embeddings.mapv(|v| v as f32 as f64),
        chunks: record.chunks.clone(),
        head_fingerprint: params.fingerprint(),
        manifest_fingerprint: manifest_fingerprint(record),
        built_at,
    })
}

/// Content-addressed file name for an index.
pub fn index_file_name(interview_id: &str, head_fingerprint: &str, window: usize) -> String {
    let short = &head_fingerprint[..head_fingerprint.len().min(16)];
    format!("{interview_id}-{short}-w{window}.{INDEX_EXTENSION}")
}

/// Builds and writes an index into `dir`.
///
/// Rebuilding with unchanged inputs rewrites identical bytes. When a file for
/// the same interview, head and window exists but was built from a different
/// manifest, nothing is written and a staleness error is returned.
pub fn build_index_file(
    dir: impl AsRef<Path>,
    record: &InterviewRecord,
    params: &HeadParams,
    speech: &dyn SpeechFeatureProvider,
    window: usize,
    built_at: u64,
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let path = dir.join(index_file_name(&record.interview_id, &params.fingerprint(), window));
    if path.exists() {
        RetrievalIndex::load(&path)?.check_fresh(record, params)?;
    }
    let index = build_index(record, params, speech, window, built_at)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    index.save(&path)?;
    Ok(path)
}

/// Loads every index file in `dir`, sorted by interview id.
pub fn load_index_dir(dir: impl AsRef<Path>) -> Result<Vec<RetrievalIndex>> {
    let dir = dir.as_ref();
    let mut paths = Vec::new();
    for e in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = e.map_err(|e| Error::io(dir, e))?.path();
        if p.extension().is_some_and(|x| x == INDEX_EXTENSION) {
            paths.push(p);
        }
    }
    paths.sort();
    let mut out = paths.iter().map(RetrievalIndex::load).collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.interview_id.cmp(&b.interview_id));
    if let Some(w) = out.windows(2).find(|w| w[0].interview_id == w[1].interview_id) {
        return Err(Error::Validation(format!(
            "{}: more than one index for interview {:?}",
            dir.display(),
            w[0].interview_id
        )));
    }
    Ok(out)
}

/// What to look for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QueryInput {
    Text(String),
    QuestionId(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub results: Vec<RankedSegment>,
    /// Set when `k` exceeded the number of windows.
    pub clamped: bool,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Corrupt("index file is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Corrupt("index string is not UTF-8".into()))
    }
}

fn put_string(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

impl RetrievalIndex {
    pub fn n_chunks(&self) -> usize {
        self.chunks.len()
    }

    pub fn segmentation(&self) -> Result<InferenceSegmentation> {
        inference_segments(self.chunks.len(), self.window)
    }

    pub fn n_segments(&self) -> usize {
        self.chunks.len().div_ceil(self.window)
    }

    /// Fails with [`Error::Stale`] unless built from this manifest and head.
    pub fn check_fresh(&self, record: &InterviewRecord, params: &HeadParams) -> Result<()> {
        if self.interview_id != record.interview_id {
            return Err(Error::Stale(format!(
                "index is for {:?}, manifest for {:?}",
                self.interview_id, record.interview_id
            )));
        }
        if self.head_fingerprint != params.fingerprint() {
            return Err(Error::Stale(format!("{}: built with a different head", self.interview_id)));
        }
        if self.manifest_fingerprint != manifest_fingerprint(record) || self.n_chunks() != record.chunks.len() {
            return Err(Error::Stale(format!(
                "{}: manifest changed since the index was built",
                self.interview_id
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (n, d) = self.embeddings.dim();
        let mut out = Vec::with_capacity(64 + n * (16 + 4 * d));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_string(&mut out, &self.interview_id);
        put_string(&mut out, &self.head_fingerprint);
        put_string(&mut out, &self.manifest_fingerprint);
        out.extend_from_slice(&self.built_at.to_le_bytes());
        out.extend_from_slice(&(self.window as u32).to_le_bytes());
        out.extend_from_slice(&(n as u64).to_le_bytes());
        out.extend_from_slice(&(d as u32).to_le_bytes());
        for c in &self.chunks {
            out.extend_from_slice(&c.start_s.to_le_bytes());
            out.extend_from_slice(&c.end_s.to_le_bytes());
        }
        for v in self.embeddings.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Corrupt("not an index file".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Corrupt(format!("unsupported index version {version}")));
        }
        let interview_id = r.string()?;
        let head_fingerprint = r.string()?;
        let manifest_fingerprint = r.string()?;
        let built_at = r.u64()?;
        let window = r.u32()? as usize;
        let n = r.u64()? as usize;
        let d = r.u32()? as usize;
        if window == 0 || n == 0 || d == 0 {
            return Err(Error::Corrupt(format!("index has window {window}, {n} chunks, dim {d}")));
        }
        let needed = n.checked_mul(16 + 4 * d).ok_or_else(|| Error::Corrupt("index size overflows".into()))?;
        if bytes.len() - r.pos != needed {
            return Err(Error::Corrupt(format!(
                "index body is {} bytes, expected {needed}",
                bytes.len() - r.pos
            )));
        }
        let mut chunks = Vec::with_capacity(n);
        for index in 0..n {
            chunks.push(Chunk {
                interview_id: interview_id.clone(),
                index,
                start_s: r.f64()?,
                end_s: r.f64()?,
            });
        }
        let mut values = Vec::with_capacity(n * d);
        for _ in 0..n * d {
            values.push(r.f32()? as f64);
        }
        let embeddings = Array2::from_shape_vec((n, d), values).expect("shape checked");
        Ok(Self {
            interview_id,
            window,
            embeddings,
            chunks,
            head_fingerprint,
            manifest_fingerprint,
            built_at,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    /// Top-`k` windows for a free-text question or a questionnaire id.
    pub fn query(
        &self,
        input: &QueryInput,
        k: usize,
        questionnaire: &Questionnaire,
        sentences: &dyn SentenceEmbeddingProvider,
    ) -> Result<QueryResult> {
        if k == 0 {
            return Err(Error::Argument("k must be ≥ 1".into()));
        }
        let text = match input {
            QueryInput::Text(t) => t.as_str(),
            QueryInput::QuestionId(id) => questionnaire
                .get(id)
                .map(|q| q.text.as_str())
                .ok_or_else(|| Error::NotFound(format!("unknown question id {id:?}")))?,
        };
        let q = sentence_embedding(text, sentences)?;
        if q.dim() != self.embeddings.ncols() {
            return Err(Error::Argument(format!(
                "query embedding has dim {}, index {}",
                q.dim(),
                self.embeddings.ncols()
            )));
        }
        let mut ranked = score_question(q.0.view(), self.embeddings.view(), &self.segmentation()?, &self.chunks)?;
        let clamped = k > ranked.entries.len();
        ranked.entries.truncate(k);
        Ok(QueryResult {
            results: ranked.entries,
            clamped,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::synthetic::{generate_corpus, SyntheticSpec};
    use crate::corpus::Split;
    use crate::head::{init_head, HeadConfig};
    use crate::providers::FixtureSentenceEmbedder;

    fn tiny() -> (crate::bench::synthetic::SyntheticCorpus, HeadParams) {
        let spec = SyntheticSpec {
            dim: 4,
            raw_dim: 6,
            train_interviews: 0,
            dev_interviews: 0,
            test_interviews: 1,
            segments_per_interview: 2,
            questions_per_segment: 2,
            chunks_per_question: (2, 2),
            ..SyntheticSpec::default()
        };
        let c = generate_corpus(&spec).unwrap();
        let h = init_head(HeadConfig {
            seed: 3,
            ..HeadConfig::new(6, 4)
        })
        .unwrap()
        .rounded();
        (c, h)
    }

    #[test]
    fn eight_chunks_one_window() {
        let (c, h) = tiny();
        let rec = &c.records[0];
        assert_eq!(rec.split, Split::Test);
        let idx = build_index(rec, &h, &c.speech, 14, 0).unwrap();
        assert_eq!(idx.n_chunks(), 8);
        assert_eq!(idx.segmentation().unwrap().ranges, vec![0..8]);
        assert_eq!(RetrievalIndex::from_bytes(&idx.to_bytes()).unwrap(), idx);
    }

    #[test]
    fn rebuild_is_byte_identical_and_edits_are_stale() {
        let (c, h) = tiny();
        let dir = tempfile::tempdir().unwrap();
        let rec = &c.records[0];
        let p1 = build_index_file(dir.path(), rec, &h, &c.speech, 3, 7).unwrap();
        let first = fs::read(&p1).unwrap();
        let p2 = build_index_file(dir.path(), rec, &h, &c.speech, 3, 7).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(first, fs::read(&p2).unwrap());

        let mut edited = rec.clone();
        edited.chunks[0].end_s -= 0.1;
        let err = build_index_file(dir.path(), &edited, &h, &c.speech, 3, 7).unwrap_err();
        assert!(matches!(err, Error::Stale(_)), "{err}");
        assert_eq!(first, fs::read(&p1).unwrap());
    }

    #[test]
    fn query_matches_scoring_and_clamps() {
        let (c, h) = tiny();
        let rec = &c.records[0];
        let idx = build_index(rec, &h, &c.speech, 3, 0).unwrap();
        let sentences = FixtureSentenceEmbedder::from_cache(&c.sentences);
        let q = c.questionnaire.questions()[1].clone();
        let got = idx
            .query(&QueryInput::QuestionId(q.id.clone()), 10, &c.questionnaire, &sentences)
            .unwrap();
        assert!(got.clamped);
        assert_eq!(got.results.len(), 3);
        let qv = sentence_embedding(&q.text, &sentences).unwrap();
        let direct = score_question(qv.0.view(), idx.embeddings.view(), &idx.segmentation().unwrap(), &idx.chunks).unwrap();
        assert_eq!(got.results, direct.entries);
        let by_text = idx.query(&QueryInput::Text(q.text), 2, &c.questionnaire, &sentences).unwrap();
        assert!(!by_text.clamped);
        assert_eq!(by_text.results, direct.entries[..2]);

        assert!(matches!(
            idx.query(&QueryInput::QuestionId("nope".into()), 1, &c.questionnaire, &sentences),
            Err(Error::NotFound(_))
        ));
        assert!(matches!(
            idx.query(&QueryInput::QuestionId(q.id), 0, &c.questionnaire, &sentences),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn corrupt_bytes() {
        let (c, h) = tiny();
        let bytes = build_index(&c.records[0], &h, &c.speech, 14, 0).unwrap().to_bytes();
        assert!(RetrievalIndex::from_bytes(&bytes[..bytes.len() - 2]).is_err());
        assert!(RetrievalIndex::from_bytes(b"IDNTINDX").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(RetrievalIndex::from_bytes(&extra).is_err());
    }
}
