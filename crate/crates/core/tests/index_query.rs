//! Persisted indices answer queries exactly like in-memory scoring.

use qloc_core::bench::synthetic::{generate_corpus, SyntheticSpec};
use qloc_core::corpus::Split;
use qloc_core::head::{init_head, HeadConfig};
use qloc_core::index::{build_index_file, load_index_dir, QueryInput};
use qloc_core::providers::{sentence_embedding, speech_features, FixtureSentenceEmbedder};
use qloc_core::retrieval::{encode_interview, inference_segments, score_question};

fn spec() -> SyntheticSpec {
    SyntheticSpec {
        train_interviews: 0,
        dev_interviews: 0,
        test_interviews: 3,
        seed: 11,
        ..SyntheticSpec::default()
    }
}

#[test]
fn query_ordering_matches_score_question() {
    let corpus = generate_corpus(&spec()).unwrap();
    let sentences = FixtureSentenceEmbedder::from_cache(&corpus.sentences);
    let head = init_head(HeadConfig {
        seed: 4,
        ..HeadConfig::new(corpus.spec.raw_dim, corpus.spec.dim)
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    for rec in corpus.records.iter().filter(|r| r.split == Split::Test) {
        build_index_file(dir.path(), rec, &head, &corpus.speech, 14, 0).unwrap();
    }
    let indices = load_index_dir(dir.path()).unwrap();
    assert_eq!(indices.len(), 3);

    for index in &indices {
        let rec = corpus.records.iter().find(|r| r.interview_id == index.interview_id).unwrap();
        let seg = inference_segments(rec.chunks.len(), 14).unwrap();
        let features: Vec<_> = rec.chunks.iter().map(|c| speech_features(c, &corpus.speech).unwrap()).collect();
        let embeddings = encode_interview(&features, &head, &seg).unwrap().mapv(|v| v as f32 as f64);
        for q in corpus.questionnaire.questions().iter().take(10) {
            let vec = sentence_embedding(&q.text, &sentences).unwrap();
            let direct = score_question(vec.0.view(), embeddings.view(), &seg, &rec.chunks).unwrap();
            let got = index
                .query(&QueryInput::QuestionId(q.id.clone()), seg.len(), &corpus.questionnaire, &sentences)
                .unwrap();
            assert!(!got.clamped);
            assert_eq!(got.results, direct.entries, "{} {}", index.interview_id, q.id);
        }
    }
}
