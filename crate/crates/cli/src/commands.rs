//! Subcommand definitions and their handlers.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use qloc_core::bench::acceptance::{run_selected, AcceptancePaths, Thresholds, CRITERIA};
use qloc_core::bench::synthetic::{generate_corpus, SyntheticSpec};
use qloc_core::corpus::{InterviewRecord, Split};
use qloc_core::head::{init_head, HeadParams};
use qloc_core::index::{build_index_file, load_index_dir};
use qloc_core::corpus::Chunk;
use qloc_core::providers::{
    CachedSpeechFeatures, ChunkFeatures, MapTranscripts, SentenceEmbeddingProvider, SpeechFeatureProvider,
};
use qloc_core::retrieval::{
    evaluate, head_index, transcript_index, EvalOptions, EvalReport, RecallSummary, TranscriptFeatures,
    DEFAULT_WINDOW,
};
use qloc_core::trainer::{train, write_train_log, TrainConfig, TrainingSet};

use crate::data::{DataDir, QueryData};
use crate::server::{default_feedback_log, run_query, serve, AppState, QueryRequest};

pub const LAST_CHECKPOINT: &str = "head.bin";
pub const BEST_CHECKPOINT: &str = "best.bin";
pub const TRAIN_LOG: &str = "train_log.jsonl";

#[derive(Debug, Parser)]
#[command(name = "qloc", version, about = "Locate questionnaire questions in long interview audio")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Variant {
    /// Trained head over speech features.
    Indent,
    /// Trained head over transcript sentence embeddings.
    IndentText,
    /// Transcript sentence embeddings, no training.
    NoTrain,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic data directory with ground truth.
    Prepare {
        /// Output data directory.
        #[arg(long)]
        out: PathBuf,
        /// Generator spec (JSON); defaults to the standard desk-scale spec.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a head on the train split.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Output directory for checkpoints and the loss log.
        #[arg(long)]
        out: PathBuf,
        /// Training config, JSON or key=value lines.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "indent")]
        variant: Variant,
        /// Transcripts for the text variant: `paraphrase`, `decorrelated` or a file.
        #[arg(long, default_value = "paraphrase")]
        transcripts: String,
    },
    /// Evaluate a variant on an annotated split and print the report.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long, value_enum, default_value = "indent")]
        variant: Variant,
        /// Head checkpoint (not used by no-train).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long = "w", default_value_t = DEFAULT_WINDOW)]
        window: usize,
        #[arg(long, default_value = "paraphrase")]
        transcripts: String,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build retrieval indices for the interviews of a split.
    Index {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output index directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Index only this interview.
        #[arg(long)]
        interview: Option<String>,
        #[arg(long = "w", default_value_t = DEFAULT_WINDOW)]
        window: usize,
        #[arg(long, value_enum, default_value = "indent")]
        variant: Variant,
        #[arg(long, default_value = "paraphrase")]
        transcripts: String,
    },
    /// Serve the HTTP query API over an index directory.
    Serve {
        #[arg(long)]
        index: PathBuf,
        /// Data directory providing the questionnaire and sentence embeddings.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// Feedback log (JSONL); defaults to `feedback.jsonl` in the index directory.
        #[arg(long)]
        feedback_log: Option<PathBuf>,
    },
    /// Query one interview's index.
    Query {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        interview: String,
        #[arg(long, conflicts_with = "question_id", required_unless_present = "question_id")]
        text: Option<String>,
        #[arg(long)]
        question_id: Option<String>,
        #[arg(short, long, default_value_t = 5)]
        k: usize,
    },
    /// Run the acceptance suite.
    Bench {
        /// Fixture data directory; a default one is generated under the work dir when omitted.
        #[arg(long)]
        fixtures: Option<PathBuf>,
        /// Scratch directory.
        #[arg(long, default_value = "bench-work")]
        work: PathBuf,
        /// Thresholds override (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated criterion ids; all when omitted.
        #[arg(long, value_delimiter = ',')]
        criteria: Vec<u8>,
        /// Write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Runs a parsed command. `Ok(false)` means it ran but reported failure.
pub fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Prepare { out, config, seed } => prepare(&out, config.as_deref(), seed).map(|_| true),
        Command::Train {
            data,
            out,
            config,
            seed,
            variant,
            transcripts,
        } => train_cmd(&data, &out, config.as_deref(), seed, variant, &transcripts).map(|_| true),
        Command::Eval {
            data,
            split,
            variant,
            checkpoint,
            window,
            transcripts,
            out,
        } => {
            let data = DataDir::load(&data)?;
            let report = eval_cmd(&data, split, variant, checkpoint.as_deref(), window, &transcripts)?;
            emit_json(&report, out.as_deref())?;
            Ok(true)
        }
        Command::Index {
            data,
            checkpoint,
            out,
            split,
            interview,
            window,
            variant,
            transcripts,
        } => {
            let data = DataDir::load(&data)?;
            let records = match &interview {
                Some(id) => vec![data.find(id)?.clone()],
                None => data.split(split),
            };
            for path in index_cmd(&data, &records, &checkpoint, &out, window, variant, &transcripts)? {
                println!("{}", path.display());
            }
            Ok(true)
        }
        Command::Serve {
            index,
            data,
            addr,
            feedback_log,
        } => {
            let feedback_log = feedback_log.unwrap_or_else(|| default_feedback_log(&index));
            let state = Arc::new(load_state(&index, &data, &feedback_log)?);
            tokio::runtime::Runtime::new()?.block_on(serve(state, &addr))?;
            Ok(true)
        }
        Command::Query {
            index,
            data,
            interview,
            text,
            question_id,
            k,
        } => {
            let state = load_query_state(&index, &data)?;
            let resp = run_query(
                &state,
                &QueryRequest {
                    interview_id: interview,
                    question_id,
                    text,
                    k,
                },
            )
            .map_err(|e| anyhow::anyhow!("{} ({})", e.message, e.status))?;
            emit_json(&resp, None)?;
            Ok(true)
        }
        Command::Bench {
            fixtures,
            work,
            config,
            criteria,
            out,
        } => bench_cmd(fixtures, &work, config.as_deref(), &criteria, out.as_deref()),
    }
}

fn emit_json(value: &impl serde::Serialize, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn prepare(out: &Path, config: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let mut spec: SyntheticSpec = match config {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => SyntheticSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    generate_corpus(&spec)?.write_bundle(out)?;
    eprintln!("wrote synthetic data directory {}", out.display());
    Ok(())
}

pub fn load_train_config(config: Option<&Path>, seed: Option<u64>) -> Result<TrainConfig> {
    let mut cfg = match config {
        Some(p) => TrainConfig::from_file(p).with_context(|| format!("loading config {}", p.display()))?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Feature source a head reads for a variant.
enum HeadFeatures<'a> {
    Speech(&'a CachedSpeechFeatures),
    Text(TranscriptFeatures<'a>),
}

impl SpeechFeatureProvider for HeadFeatures<'_> {
    fn dim(&self) -> usize {
        match self {
            Self::Speech(s) => s.dim(),
            Self::Text(t) => t.dim(),
        }
    }

    fn features(&self, chunk: &Chunk) -> qloc_core::Result<ChunkFeatures> {
        match self {
            Self::Speech(s) => s.features(chunk),
            Self::Text(t) => t.features(chunk),
        }
    }
}

fn head_features<'a>(data: &'a DataDir, variant: Variant, transcripts: &'a MapTranscripts) -> Result<HeadFeatures<'a>> {
    match variant {
        Variant::Indent => Ok(HeadFeatures::Speech(&data.speech)),
        Variant::IndentText => Ok(HeadFeatures::Text(TranscriptFeatures::new(transcripts, &data.query.sentences))),
        Variant::NoTrain => bail!("the no-train variant has no head"),
    }
}

pub fn train_cmd(
    data_dir: &Path,
    out: &Path,
    config: Option<&Path>,
    seed: Option<u64>,
    variant: Variant,
    transcripts: &str,
) -> Result<()> {
    let cfg = load_train_config(config, seed)?;
    let data = DataDir::load(data_dir)?;
    let transcripts = match variant {
        Variant::IndentText => data.transcripts(transcripts)?,
        _ => Default::default(),
    };
    let features = head_features(&data, variant, &transcripts)?;
    let sentences = &data.query.sentences;
    let set = TrainingSet::from_records(&data.split(Split::Train), &data.query.questionnaire, &features, sentences)?;
    let raw = set.raw_dim().context("no annotated training segments")?;
    let head = init_head(cfg.head_config(raw, sentences.dim())?)?;

    let dev = data.split(Split::Dev);
    let mut dev_eval = |p: &HeadParams| -> qloc_core::Result<RecallSummary> {
        let report = evaluate(&dev, &data.query.questionnaire, sentences, EvalOptions::default(), |rec, seg| {
            head_index(rec, seg, p, &features)
        })?;
        Ok(report.mean)
    };
    let outcome = if dev.is_empty() {
        train(&cfg, &set, head, None)?
    } else {
        train(&cfg, &set, head, Some(&mut dev_eval))?
    };

    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    outcome.last.save(out.join(LAST_CHECKPOINT))?;
    if let Some((epoch, best, ravg)) = &outcome.best {
        best.save(out.join(BEST_CHECKPOINT))?;
        eprintln!("best dev R-avg {ravg:.4} at epoch {epoch}");
    }
    write_train_log(out.join(TRAIN_LOG), &outcome.log)?;
    eprintln!(
        "trained {} epochs on {} segments; wrote {}",
        outcome.log.len(),
        set.segments.len(),
        out.display()
    );
    Ok(())
}

pub fn eval_cmd(
    data: &DataDir,
    split: Split,
    variant: Variant,
    checkpoint: Option<&Path>,
    window: usize,
    transcripts: &str,
) -> Result<EvalReport> {
    let records = data.split(split);
    if records.is_empty() {
        bail!("no {split} interviews in {}", data.root.display());
    }
    let opts = EvalOptions {
        window,
        ..EvalOptions::default()
    };
    let q = &data.query;
    let transcripts = match variant {
        Variant::Indent => Default::default(),
        _ => data.transcripts(transcripts)?,
    };
    let report = match variant {
        Variant::NoTrain => evaluate(&records, &q.questionnaire, &q.sentences, opts, |rec, _| {
            transcript_index(&rec.chunks, &transcripts, &q.sentences)
        })?,
        _ => {
            let path = checkpoint.context("--checkpoint is required for trained variants")?;
            let head = HeadParams::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
            let features = head_features(data, variant, &transcripts)?;
            evaluate(&records, &q.questionnaire, &q.sentences, opts, |rec, seg| {
                head_index(rec, seg, &head, &features)
            })?
        }
    };
    Ok(report)
}

pub fn index_cmd(
    data: &DataDir,
    records: &[InterviewRecord],
    checkpoint: &Path,
    out: &Path,
    window: usize,
    variant: Variant,
    transcripts: &str,
) -> Result<Vec<PathBuf>> {
    let head = HeadParams::load(checkpoint).with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let transcripts = match variant {
        Variant::IndentText => data.transcripts(transcripts)?,
        _ => Default::default(),
    };
    let features = head_features(data, variant, &transcripts)?;
    records
        .iter()
        .map(|rec| {
            let built_at = data.build_timestamp(&rec.interview_id)?;
            build_index_file(out, rec, &head, &features, window, built_at)
                .with_context(|| format!("indexing {}", rec.interview_id))
        })
        .collect()
}

pub fn load_state(index_dir: &Path, data_dir: &Path, feedback_log: &Path) -> Result<AppState> {
    let indices = load_index_dir(index_dir).with_context(|| format!("loading indices from {}", index_dir.display()))?;
    if indices.is_empty() {
        bail!("no index files in {}", index_dir.display());
    }
    let q = QueryData::load(data_dir)?;
    let jsonl = std::fs::read_to_string(&q.questionnaire_path)?;
    AppState::new(indices, q.questionnaire, jsonl, Box::new(q.sentences), feedback_log)
}

fn load_query_state(index_dir: &Path, data_dir: &Path) -> Result<AppState> {
    // Queries never write feedback; route it to the platform null device.
    let null = if cfg!(windows) { "NUL" } else { "/dev/null" };
    load_state(index_dir, data_dir, Path::new(null))
}

pub fn bench_cmd(
    fixtures: Option<PathBuf>,
    work: &Path,
    config: Option<&Path>,
    criteria: &[u8],
    out: Option<&Path>,
) -> Result<bool> {
    let thresholds: Thresholds = match config {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => Thresholds::default(),
    };
    let fixtures = match fixtures {
        Some(f) => f,
        None => {
            let f = work.join("fixtures");
            generate_corpus(&SyntheticSpec::default())?.write_bundle(&f)?;
            f
        }
    };
    let ids: Vec<u8> = if criteria.is_empty() {
        CRITERIA.iter().map(|(id, _)| *id).collect()
    } else {
        criteria.to_vec()
    };
    let paths = AcceptancePaths {
        fixtures,
        work: work.to_owned(),
    };
    let report = run_selected(&paths, &thresholds, &ids)?;
    for line in report.lines() {
        println!("{line}");
    }
    if let Some(p) = out {
        emit_json(&report, Some(p))?;
    }
    Ok(report.passed)
}
