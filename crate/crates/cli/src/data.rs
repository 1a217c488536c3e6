//! On-disk data directory: questionnaire, interview manifests and provider caches.

use std::path::{Path, PathBuf};
use std::time::UNIX_EPOCH;

use anyhow::{bail, Context, Result};
use qloc_core::bench::synthetic::{
    load_interviews, DECORRELATED_TRANSCRIPTS_FILE, INTERVIEWS_DIR, PARAPHRASE_TRANSCRIPTS_FILE, QUESTIONNAIRE_FILE,
    SENTENCE_CACHE_FILE, SPEECH_CACHE_FILE,
};
use qloc_core::corpus::{load_questionnaire, InterviewRecord, Questionnaire, Split};
use qloc_core::providers::{CachedSpeechFeatures, FixtureSentenceEmbedder, MapTranscripts};

/// Questionnaire plus sentence embeddings: everything a query needs.
pub struct QueryData {
    pub questionnaire: Questionnaire,
    pub questionnaire_path: PathBuf,
    pub sentences: FixtureSentenceEmbedder,
}

impl QueryData {
    pub fn load(dir: &Path) -> Result<Self> {
        let questionnaire_path = dir.join(QUESTIONNAIRE_FILE);
        Ok(Self {
            questionnaire: load_questionnaire(&questionnaire_path)?,
            questionnaire_path,
            sentences: FixtureSentenceEmbedder::load(dir.join(SENTENCE_CACHE_FILE))?,
        })
    }
}

/// A data directory laid out like the synthetic fixture bundle.
pub struct DataDir {
    pub root: PathBuf,
    pub query: QueryData,
    pub records: Vec<InterviewRecord>,
    pub speech: CachedSpeechFeatures,
}

impl DataDir {
    pub fn load(root: &Path) -> Result<Self> {
        let query = QueryData::load(root).with_context(|| format!("loading data directory {}", root.display()))?;
        Ok(Self {
            root: root.to_owned(),
            query,
            records: load_interviews(root.join(INTERVIEWS_DIR))?,
            speech: CachedSpeechFeatures::load(root.join(SPEECH_CACHE_FILE))?,
        })
    }

    pub fn split(&self, split: Split) -> Vec<InterviewRecord> {
        self.records.iter().filter(|r| r.split == split).cloned().collect()
    }

    /// Transcripts by bundle name (`paraphrase`, `decorrelated`) or file path.
    pub fn transcripts(&self, name: &str) -> Result<MapTranscripts> {
        let path = match name {
            "paraphrase" => self.root.join(PARAPHRASE_TRANSCRIPTS_FILE),
            "decorrelated" => self.root.join(DECORRELATED_TRANSCRIPTS_FILE),
            other => PathBuf::from(other),
        };
        MapTranscripts::load(&path).with_context(|| format!("loading transcripts {}", path.display()))
    }

    pub fn manifest_path(&self, interview_id: &str) -> PathBuf {
        self.root.join(INTERVIEWS_DIR).join(format!("{interview_id}.json"))
    }

    /// Index build timestamp: `SOURCE_DATE_EPOCH` when set, otherwise the
    /// manifest's modification time, so rebuilds are byte-identical.
    pub fn build_timestamp(&self, interview_id: &str) -> Result<u64> {
        if let Ok(v) = std::env::var("SOURCE_DATE_EPOCH") {
            return v.trim().parse().with_context(|| format!("SOURCE_DATE_EPOCH={v:?} is not an integer"));
        }
        let path = self.manifest_path(interview_id);
        let modified = std::fs::metadata(&path)
            .and_then(|m| m.modified())
            .with_context(|| format!("reading modification time of {}", path.display()))?;
        Ok(modified.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0))
    }

    pub fn find(&self, interview_id: &str) -> Result<&InterviewRecord> {
        match self.records.iter().find(|r| r.interview_id == interview_id) {
            Some(r) => Ok(r),
            None => bail!("no interview {interview_id:?} in {}", self.root.display()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use qloc_core::bench::synthetic::{generate_corpus, SyntheticSpec};

    #[test]
    fn loads_bundle_and_resolves_transcripts() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            train_interviews: 1,
            dev_interviews: 0,
            test_interviews: 1,
            segments_per_interview: 2,
            ..SyntheticSpec::default()
        };
        generate_corpus(&spec).unwrap().write_bundle(dir.path()).unwrap();
        let data = DataDir::load(dir.path()).unwrap();
        assert_eq!(data.split(Split::Test).len(), 1);
        assert!(data.find("train-01").is_ok());
        assert!(data.find("nope").is_err());
        let para = data.transcripts("paraphrase").unwrap();
        assert!(para.0.contains_key("test-01"));
        let by_path = data
            .transcripts(dir.path().join(DECORRELATED_TRANSCRIPTS_FILE).to_str().unwrap())
            .unwrap();
        assert_eq!(by_path.0.len(), 2);
        assert!(data.transcripts("missing-file").is_err());
    }
}
