//! Executable acceptance suite: one pass/fail entry per criterion.
//!
//! Criteria 1–7 and 10 are self-contained property checks. Criterion 8 trains
//! on the fixture bundle; criterion 9 trains on a small generated corpus and
//! builds indices in the work directory. A missing fixture aborts the whole
//! run with [`Error::Setup`]; any other failure only fails its own entry.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use num_rational::Ratio;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::oracles::{brute_force_density_matrix, entropy, finite_difference_gradients, scalar_contrastive_losses};
use super::synthetic::{
    chance_r1, generate_corpus, FixtureBundle, SyntheticCorpus, SyntheticSpec, DECORRELATED_TRANSCRIPTS_FILE,
    GENERATOR_FILE, INTERVIEWS_DIR, PARAPHRASE_TRANSCRIPTS_FILE, QUESTIONNAIRE_FILE, SENTENCE_CACHE_FILE,
    SPEECH_CACHE_FILE, TRUTH_FILE,
};
use crate::corpus::Split;
use crate::error::{Error, Result};
use crate::gaussian::{gaussian_weight_matrix, GaussianConfig};
use crate::head::{init_head, HeadConfig, HeadParams, HeadTensors, Mode};
use crate::index::build_index_file;
use crate::providers::{FixtureSentenceEmbedder, SentenceEmbeddingProvider};
use crate::retrieval::{
    evaluate, head_index, r_avg, rank_segments, recall_at_k, transcript_index, EvalOptions, EvalReport,
    InferenceSegmentation, InterviewRecall, RankedResult, RankedSegment, RecallSummary, TranscriptFeatures,
};
use crate::rng::{substream, Rng};
use crate::trainer::groups::{assign_negatives, build_groups, BatchEntry, TrainingGroup};
use crate::trainer::loss::{contrastive_losses, smoothed_cross_entropy, smoothed_targets, ChunkSlot, LossItem};
use crate::trainer::{batch_objective, plan_batch, train, write_train_log, TrainConfig, TrainSegment, TrainingSet};

/// Tolerances and targets for every criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub gaussian_abs_tol: f64,
    pub gaussian_max_seconds: f64,
    pub row_configurations: usize,
    pub loss_abs_tol: f64,
    pub loss_instances: usize,
    pub gradient_rel_tol: f64,
    /// Denominator floor for relative gradient errors.
    pub gradient_rel_floor: f64,
    pub gradient_seeds: u64,
    pub gradient_max_seconds: f64,
    pub sampling_configurations: usize,
    pub metric_instances: usize,
    pub head_min_r1: f64,
    pub head_min_chance_multiple: f64,
    pub no_train_max_chance_multiple: f64,
    pub end_to_end_max_seconds: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            gaussian_abs_tol: 1e-9,
            gaussian_max_seconds: 5.0,
            row_configurations: 10_000,
            loss_abs_tol: 1e-9,
            loss_instances: 1_000,
            gradient_rel_tol: 1e-3,
            gradient_rel_floor: 1e-6,
            gradient_seeds: 5,
            gradient_max_seconds: 30.0,
            sampling_configurations: 1_000,
            metric_instances: 1_000,
            head_min_r1: 0.80,
            head_min_chance_multiple: 5.0,
            no_train_max_chance_multiple: 2.0,
            end_to_end_max_seconds: 300.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AcceptancePaths {
    /// Fixture bundle written by `SyntheticCorpus::write_bundle`.
    pub fixtures: PathBuf,
    /// Scratch directory for checkpoints and indices.
    pub work: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionReport {
    pub id: u8,
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceReport {
    pub passed: bool,
    pub criteria: Vec<CriterionReport>,
}

impl AcceptanceReport {
    /// The report with wall-clock fields zeroed, for run-to-run comparison.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        for c in &mut r.criteria {
            c.seconds = 0.0;
        }
        r
    }

    pub fn lines(&self) -> Vec<String> {
        self.criteria.iter().map(CriterionReport::line).collect()
    }
}

impl CriterionReport {
    pub fn line(&self) -> String {
        format!(
            "criterion {:>2} {} — {}: {} ({:.2} s)",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail,
            self.seconds
        )
    }
}

pub const CRITERIA: [(u8, &str); 10] = [
    (1, "Gaussian oracle equivalence"),
    (2, "mean-shift exactness"),
    (3, "weight row structure"),
    (4, "loss correctness"),
    (5, "gradient check"),
    (6, "negative-sampling audit"),
    (7, "metric oracle"),
    (8, "synthetic end-to-end"),
    (9, "determinism"),
    (10, "analytic-head identifiability"),
];

/// Files criterion 8 reads from the fixture directory.
pub const REQUIRED_FIXTURES: [&str; 8] = [
    QUESTIONNAIRE_FILE,
    INTERVIEWS_DIR,
    SPEECH_CACHE_FILE,
    SENTENCE_CACHE_FILE,
    PARAPHRASE_TRANSCRIPTS_FILE,
    DECORRELATED_TRANSCRIPTS_FILE,
    TRUTH_FILE,
    GENERATOR_FILE,
];

pub fn check_fixtures(dir: &Path) -> Result<()> {
    for f in REQUIRED_FIXTURES {
        if !dir.join(f).exists() {
            return Err(Error::Setup(format!("missing fixture {}", dir.join(f).display())));
        }
    }
    Ok(())
}

/// Runs every criterion. Only a setup problem makes this return `Err`.
pub fn run_acceptance(paths: &AcceptancePaths, thresholds: &Thresholds) -> Result<AcceptanceReport> {
    run_selected(paths, thresholds, &CRITERIA.map(|(id, _)| id))
}

pub fn run_selected(paths: &AcceptancePaths, thresholds: &Thresholds, ids: &[u8]) -> Result<AcceptanceReport> {
    if ids.contains(&8) {
        check_fixtures(&paths.fixtures)?;
    }
    std::fs::create_dir_all(&paths.work).map_err(|e| Error::io(&paths.work, e))?;
    let mut criteria = Vec::new();
    for &id in ids {
        let name = CRITERIA
            .iter()
            .find(|(i, _)| *i == id)
            .map(|(_, n)| *n)
            .ok_or_else(|| Error::Argument(format!("no criterion {id}")))?;
        let started = Instant::now();
        let outcome = run_criterion(id, paths, thresholds);
        let seconds = started.elapsed().as_secs_f64();
        let (mut passed, mut detail) = match outcome {
            Ok(o) => (o.passed, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if let Some(limit) = time_limit(id, thresholds) {
            if seconds > limit {
                passed = false;
                detail = format!("{detail}; exceeded {limit} s");
            }
        }
        criteria.push(CriterionReport {
            id,
            name: name.into(),
            passed,
            detail,
            seconds,
        });
    }
    Ok(AcceptanceReport {
        passed: criteria.iter().all(|c| c.passed),
        criteria,
    })
}

fn time_limit(id: u8, t: &Thresholds) -> Option<f64> {
    match id {
        1 => Some(t.gaussian_max_seconds),
        5 => Some(t.gradient_max_seconds),
        8 => Some(t.end_to_end_max_seconds),
        _ => None,
    }
}

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }
}

fn run_criterion(id: u8, paths: &AcceptancePaths, t: &Thresholds) -> Result<Outcome> {
    match id {
        1 => gaussian_oracle(t),
        2 => mean_shift(),
        3 => row_structure(t),
        4 => loss_correctness(t),
        5 => gradient_check(t),
        6 => sampling_audit(t),
        7 => metric_oracle(t),
        8 => end_to_end(&paths.fixtures, t),
        9 => determinism(&paths.work),
        10 => identifiability(),
        _ => Err(Error::Argument(format!("no criterion {id}"))),
    }
}

pub const SIGMA_GRID: [f64; 6] = [0.2, 0.5, 1.0, 1.5, 2.5, 3.0];
pub const ALPHA_GRID: [f64; 6] = [0.1, 0.25, 0.4, 0.6, 0.75, 0.9];

fn sigma_alpha_grid() -> Vec<GaussianConfig> {
    SIGMA_GRID
        .iter()
        .map(|&s| GaussianConfig::fixed(s))
        .chain(ALPHA_GRID.iter().map(|&a| GaussianConfig::varying(a)))
        .collect()
}

fn gaussian_oracle(t: &Thresholds) -> Result<Outcome> {
    let mut worst = 0.0f64;
    let mut cases = 0;
    for cfg in sigma_alpha_grid() {
        for n in 1..=30 {
            for m in 1..=8 {
                let fast = gaussian_weight_matrix(n, m, &cfg)?;
                let slow = brute_force_density_matrix(n, m, &cfg);
                for (a, b) in fast.weights().iter().zip(slow.iter()) {
                    worst = worst.max((a - b).abs());
                }
                cases += 1;
            }
        }
    }
    Ok(Outcome::new(
        worst <= t.gaussian_abs_tol,
        format!("{cases} matrices, max abs diff {worst:.3e} (tol {:.0e})", t.gaussian_abs_tol),
    ))
}

fn mean_shift() -> Result<Outcome> {
    let mut checked = 0;
    for cfg in sigma_alpha_grid() {
        for n in 2..=30i64 {
            for m in 1..=8i64 {
                let g = gaussian_weight_matrix(n as usize, m as usize, &cfg)?;
                let step = Ratio::new(m - 1, n - 1);
                for i in 0..(n as usize - 1) {
                    if g.mean_exact(i + 1) - g.mean_exact(i) != step {
                        return Ok(Outcome::new(false, format!("n_s={n} m={m} row {i}: shift is not {step}")));
                    }
                    checked += 1;
                }
            }
        }
    }
    Ok(Outcome::new(true, format!("{checked} consecutive shifts exact")))
}

/// Checks one weight row; `None` when it satisfies every structural rule.
fn row_violation(row: &[f64], mu: f64) -> Option<String> {
    let m = row.len();
    if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Some(format!("entry {v} outside [0, 1]"));
    }
    let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo_idx = (mu.floor() as usize).min(m - 1);
    let hi_idx = (mu.ceil() as usize).min(m - 1);
    for (j, &v) in row.iter().enumerate() {
        if v == hi && j != lo_idx && j != hi_idx {
            return Some(format!("maximum at {j}, μ={mu}"));
        }
    }
    let peak = row.iter().position(|&v| v == hi).expect("non-empty row");
    if row[..=peak].windows(2).any(|w| w[0] > w[1]) || row[peak..].windows(2).any(|w| w[0] < w[1]) {
        return Some(format!("not unimodal: {row:?}"));
    }
    None
}

fn row_structure(t: &Thresholds) -> Result<Outcome> {
    let mut rng = substream(11, "acceptance-rows");
    for case in 0..t.row_configurations {
        let n = rng.random_range(1..=40usize);
        let m = rng.random_range(1..=12usize);
        let cfg = if rng.random::<bool>() {
            GaussianConfig::fixed(rng.random_range(0.05..5.0))
        } else {
            GaussianConfig::varying(rng.random_range(0.05..1.0))
        };
        let g = gaussian_weight_matrix(n, m, &cfg)?;
        let means = g.means();
        for (i, row) in g.weights().rows().into_iter().enumerate() {
            let row = row.to_vec();
            if let Some(v) = row_violation(&row, means[i]) {
                return Ok(Outcome::new(false, format!("case {case} (n_s={n}, m={m}, row {i}): {v}")));
            }
        }
        if n >= 2 {
            let argmax = |r: usize| {
                let row = g.weights().row(r);
                let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                row.iter().position(|&v| v == hi).expect("non-empty")
            };
            if argmax(0) != 0 || argmax(n - 1) != m - 1 {
                return Ok(Outcome::new(false, format!("case {case}: boundary rows peak off the ends")));
            }
        }
    }
    Ok(Outcome::new(true, format!("{} random configurations", t.row_configurations)))
}

fn random_loss_instance(rng: &mut Rng) -> (Vec<Array2<f64>>, Vec<LossItem>, Vec<f64>) {
    let d = rng.random_range(1..=5usize);
    let slots = rng.random_range(2..=4usize);
    let embeddings: Vec<Array2<f64>> = (0..slots)
        .map(|_| Array2::from_shape_fn((rng.random_range(1..=4usize), d), |_| rng.random_range(-2.0..2.0)))
        .collect();
    let k = rng.random_range(1..=4usize);
    let p = rng.random_range(0.5..=1.0);
    let all: Vec<ChunkSlot> = embeddings
        .iter()
        .enumerate()
        .flat_map(|(slot, e)| (0..e.nrows()).map(move |chunk| ChunkSlot { slot, chunk }))
        .collect();
    let items = (0..rng.random_range(1..=5usize))
        .map(|_| {
            let chunk = all[rng.random_range(0..all.len())];
            LossItem {
                chunk,
                anchor: Array1::from_shape_fn(d, |_| rng.random_range(-2.0..2.0)),
                negatives: (0..k).map(|_| all[rng.random_range(0..all.len())]).collect(),
            }
        })
        .collect();
    (embeddings, items, smoothed_targets(k, p).expect("valid targets"))
}

fn loss_correctness(t: &Thresholds) -> Result<Outcome> {
    let mut rng = substream(12, "acceptance-loss");
    for _ in 0..t.loss_instances {
        let p = rng.random_range(0.01..=1.0);
        let z = rng.random_range(-10.0..10.0);
        let (l, _) = smoothed_cross_entropy(&[z, z], &smoothed_targets(1, p)?)?;
        if (l - std::f64::consts::LN_2).abs() > t.loss_abs_tol {
            return Ok(Outcome::new(false, format!("equal logits gave {l}, p⁺={p}")));
        }
    }
    let mut worst = 0.0f64;
    for case in 0..t.loss_instances {
        let (emb, items, targets) = random_loss_instance(&mut rng);
        let fast = contrastive_losses(&emb, &items, &targets)?;
        let (st, ss) = scalar_contrastive_losses(&emb, &items, &targets);
        worst = worst.max((fast.speech_text - st).abs()).max((fast.speech_speech - ss).abs());
        let h = entropy(&targets);
        if fast.speech_text < h - 1e-12 || fast.speech_speech < h - 1e-12 {
            return Ok(Outcome::new(false, format!("case {case}: loss below target entropy {h}")));
        }
    }
    Ok(Outcome::new(
        worst <= t.loss_abs_tol,
        format!(
            "ln 2 on {n} equal-logit cases; {n} random instances, max diff vs scalar oracle {worst:.3e}; all ≥ entropy",
            n = t.loss_instances
        ),
    ))
}

/// Two segments of one interview with `d′ = 8`, `d = 6`.
pub fn gradient_fixture(seed: u64) -> (TrainingSet, HeadParams) {
    let mut rng = substream(seed, "gradient-fixture");
    let segments = (0..2)
        .map(|s| TrainSegment {
            interview_id: "G".into(),
            segment_index: s,
            features: (0..rng.random_range(2..=4usize))
                .map(|_| Array2::from_shape_fn((rng.random_range(3..=9usize), 8), |_| rng.random_range(-1.0..1.0)))
                .collect(),
            questions: Array2::from_shape_fn((3, 6), |_| rng.random_range(-1.0..1.0)),
        })
        .collect();
    let params = init_head(HeadConfig {
        raw_dim: 8,
        dim: 6,
        receptive_field: 4,
        stride: 2,
        dropout: 0.1,
        seed,
    })
    .expect("valid head");
    (
        TrainingSet {
            segments,
            skipped_segments: 0,
        },
        params,
    )
}

/// Largest relative error between analytic and finite-difference gradients
/// of the full batch objective, with dropout masks held fixed.
pub fn gradient_relative_error(seed: u64, eps: f64, floor: f64) -> Result<f64> {
    let (set, params) = gradient_fixture(seed);
    let group = TrainingGroup {
        group_id: 0,
        interview_id: Some("G".into()),
        segments: vec![0, 1],
        undersized: false,
    };
    let batch = [
        BatchEntry { segment: 0, group: &group },
        BatchEntry { segment: 1, group: &group },
    ];
    let plan = plan_batch(&set, &batch, &GaussianConfig::default(), 0.95, &mut substream(seed, "gradient-plan"))?;
    let dropout = substream(seed, "gradient-dropout");
    let objective = |tensors: &HeadTensors| -> Result<(f64, HeadTensors)> {
        let p = HeadParams {
            tensors: tensors.clone(),
            ..params.clone()
        };
        let mut rng = dropout.clone();
        let (out, grads) = batch_objective(&set, &plan, &p, Mode::Train(&mut rng))?;
        Ok((out.total(), grads))
    };
    let (_, analytic) = objective(&params.tensors)?;
    let numeric = finite_difference_gradients(
        |t: &HeadTensors| objective(t).map(|(l, _)| l).unwrap_or(f64::NAN),
        &params.tensors,
        eps,
    );
    let mut worst = 0.0f64;
    for (a, n) in analytic.slices().iter().zip(numeric.slices()) {
        for (x, y) in a.iter().zip(n.iter()) {
            let rel = (x - y).abs() / x.abs().max(y.abs()).max(floor);
            worst = worst.max(if rel.is_nan() { f64::INFINITY } else { rel });
        }
    }
    Ok(worst)
}

fn gradient_check(t: &Thresholds) -> Result<Outcome> {
    let mut worst = 0.0f64;
    for seed in 0..t.gradient_seeds {
        worst = worst.max(gradient_relative_error(seed, 1e-4, t.gradient_rel_floor)?);
    }
    Ok(Outcome::new(
        worst <= t.gradient_rel_tol,
        format!(
            "{} seeds, max relative error {worst:.3e} (tol {:.0e}, floor {:.0e})",
            t.gradient_seeds, t.gradient_rel_tol, t.gradient_rel_floor
        ),
    ))
}

fn sampling_audit(t: &Thresholds) -> Result<Outcome> {
    let mut rng = substream(13, "acceptance-sampling");
    for case in 0..t.sampling_configurations {
        let s = rng.random_range(2..=12usize);
        let n = rng.random_range(2..=5usize).min(s);
        let chunks: Vec<usize> = (0..s).map(|_| rng.random_range(1..=6usize)).collect();
        let segs: Vec<usize> = (0..s).collect();
        let fail = |m: String| Ok(Outcome::new(false, format!("case {case} (S={s}, n={n}): {m}")));

        let seed: u64 = rng.random();
        let once = build_groups(Some("I"), &segs, n, 1, &mut substream(seed, "g"))?;
        let twice = build_groups(Some("I"), &segs, n, 2, &mut substream(seed, "g"))?;
        let per_pass = s / n + usize::from(s % n != 0);
        if once.len() != per_pass || twice.len() != 2 * per_pass {
            return fail(format!("{} / {} groups for D=1 / D=2", once.len(), twice.len()));
        }
        let count = |gs: &[TrainingGroup], x: usize| gs.iter().filter(|g| g.segments.contains(&x)).count();
        let members = |gs: &[TrainingGroup]| gs.iter().map(|g| g.segments.len()).sum::<usize>();
        if members(&twice) != 2 * members(&once) || segs.iter().any(|&x| count(&once, x) < 1 || count(&twice, x) < 2) {
            return fail("augmentation does not double multiplicity".into());
        }
        if s % n != 0 {
            let wrap = &once[per_pass - 1].segments;
            let tail: Vec<usize> = once[..per_pass - 1].iter().flat_map(|g| g.segments.clone()).collect();
            let expect: Vec<usize> = tail[tail.len() - (n - s % n)..]
                .iter()
                .copied()
                .chain(segs.iter().copied().filter(|x| !tail.contains(x)))
                .collect();
            if wrap.len() != n || wrap.iter().collect::<std::collections::BTreeSet<_>>() != expect.iter().collect() {
                return fail(format!("wrap group {wrap:?} is not the last {n} of the shuffle"));
            }
        }

        let batch: Vec<BatchEntry<'_>> = twice
            .iter()
            .flat_map(|g| g.segments.iter().map(move |&x| BatchEntry { segment: x, group: g }))
            .filter(|_| rng.random_bool(0.6))
            .collect();
        if batch.is_empty() {
            continue;
        }
        let a = assign_negatives(&batch, |x| chunks[x], &mut substream(seed, "n"))?;
        let expect_k = batch
            .iter()
            .map(|e| e.group.segments.iter().filter(|&&x| x != e.segment).map(|&x| chunks[x]).sum::<usize>())
            .min()
            .unwrap_or(0);
        if a.k != expect_k {
            return fail(format!("K = {} but min k_x = {expect_k}", a.k));
        }
        for (e, per_chunk) in batch.iter().zip(&a.negatives) {
            if per_chunk.len() != chunks[e.segment] {
                return fail("negatives missing for a chunk".into());
            }
            for negs in per_chunk {
                let distinct: std::collections::BTreeSet<_> = negs.iter().collect();
                if negs.len() != a.k || distinct.len() != a.k {
                    return fail("negative list has wrong size or repeats".into());
                }
                if negs.iter().any(|x| x.segment == e.segment || !e.group.segments.contains(&x.segment) || x.chunk >= chunks[x.segment]) {
                    return fail("negative outside the group or from its own segment".into());
                }
            }
        }
    }
    Ok(Outcome::new(true, format!("{} random configurations", t.sampling_configurations)))
}

fn rank_oracle(scores: &[f64], ranges: &[std::ops::Range<usize>], truth: usize) -> usize {
    let best = |r: &std::ops::Range<usize>| scores[r.clone()].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let t = best(&ranges[truth]);
    1 + ranges
        .iter()
        .enumerate()
        .filter(|(j, r)| best(r) > t || (best(r) == t && *j < truth))
        .count()
}

fn fake_ranking(order: &[usize]) -> RankedResult {
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
                end_s: 0.0,
                best_chunk_start_s: 0.0,
            })
            .collect(),
    }
}

fn metric_oracle(t: &Thresholds) -> Result<Outcome> {
    let mut rng = substream(14, "acceptance-metrics");
    for case in 0..t.metric_instances {
        let n_seg = rng.random_range(1..=12usize);
        let w = rng.random_range(1..=4usize);
        let n_chunks = rng.random_range((n_seg - 1) * w + 1..=n_seg * w);
        let chunks: Vec<crate::corpus::Chunk> = (0..n_chunks)
            .map(|i| crate::corpus::Chunk {
                interview_id: "M".into(),
                index: i,
                start_s: i as f64,
                end_s: i as f64 + 0.5,
            })
            .collect();
        let seg = InferenceSegmentation {
            ranges: (0..n_chunks).step_by(w).map(|s| s..(s + w).min(n_chunks)).collect(),
        };
        let n_q = rng.random_range(1..=20usize);
        let mut rankings = Vec::new();
        let mut truths = Vec::new();
        let mut ranks = Vec::new();
        for _ in 0..n_q {
            // small integer scores force plenty of ties
            let scores: Vec<f64> = (0..n_chunks).map(|_| rng.random_range(0..4) as f64).collect();
            let truth = rng.random_range(0..seg.len());
            ranks.push(rank_oracle(&scores, &seg.ranges, truth));
            rankings.push(rank_segments(&scores, &seg, &chunks)?);
            truths.push(truth);
        }
        let mut got = [0.0; 3];
        for (slot, k) in [1usize, 5, 10].into_iter().enumerate() {
            let fast = recall_at_k(&rankings, &truths, k)?;
            let slow = ranks.iter().filter(|&&r| r <= k).count() as f64 / n_q as f64;
            if fast != slow {
                return Ok(Outcome::new(false, format!("case {case}: R@{k} {fast} vs exhaustive {slow}")));
            }
            got[slot] = fast;
        }
        let avg = r_avg(got[0], got[1], got[2]);
        if (avg - (got[0] + got[1] + got[2]) / 3.0).abs() > 0.0 {
            return Ok(Outcome::new(false, format!("case {case}: R-avg mismatch")));
        }
    }

    let hand = [
        fake_ranking(&[0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11]),
        fake_ranking(&[0, 2, 3, 1, 4, 5, 6, 7, 8, 9, 10, 11]),
        fake_ranking(&[0, 1, 3, 4, 5, 6, 7, 8, 9, 10, 2, 11]),
    ];
    let truths = [0, 1, 2];
    let hand_ok = recall_at_k(&hand, &truths, 1)? == 1.0 / 3.0
        && recall_at_k(&hand, &truths, 5)? == 2.0 / 3.0
        && recall_at_k(&hand, &truths, 10)? == 2.0 / 3.0;

    let a = InterviewRecall::from_rankings("a", &[fake_ranking(&[0, 1])], &[0])?;
    let b = InterviewRecall::from_rankings("b", &[fake_ranking(&[0, 1]), fake_ranking(&[0, 1]), fake_ranking(&[0, 1])], &[1, 1, 1])?;
    let mean_ok = RecallSummary::mean(&[a, b])?.r1 == 0.5;

    Ok(Outcome::new(
        hand_ok && mean_ok,
        format!(
            "{} random instances match exhaustive ranks; rank-(1,4,11) case {}; interview mean {}",
            t.metric_instances,
            if hand_ok { "exact" } else { "WRONG" },
            if mean_ok { "0.5" } else { "WRONG" }
        ),
    ))
}

/// Test-split reports of the three variants on a loaded fixture bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndToEndReport {
    pub chance_r1: f64,
    pub speech_head: EvalReport,
    pub text_head: EvalReport,
    pub no_train: EvalReport,
}

/// Trains the speech and transcript heads with `config` and evaluates all variants.
pub fn end_to_end_report(bundle: &FixtureBundle, config: &TrainConfig) -> Result<EndToEndReport> {
    let train_records = bundle.split(Split::Train);
    let test = bundle.split(Split::Test);
    let opts = EvalOptions {
        window: bundle.truth.window,
        ..EvalOptions::default()
    };
    let d = bundle.sentences.dim();

    let set = TrainingSet::from_records(&train_records, &bundle.questionnaire, &bundle.speech, &bundle.sentences)?;
    let raw = set.raw_dim().ok_or_else(|| Error::Config("no training features".into()))?;
    let head = train(config, &set, init_head(config.head_config(raw, d)?)?, None)?.last;
    let speech_head = evaluate(&test, &bundle.questionnaire, &bundle.sentences, opts, |rec, seg| {
        head_index(rec, seg, &head, &bundle.speech)
    })?;

    let text = TranscriptFeatures::new(&bundle.paraphrase, &bundle.sentences);
    let text_set = TrainingSet::from_records(&train_records, &bundle.questionnaire, &text, &bundle.sentences)?;
    let text_params = train(config, &text_set, init_head(config.head_config(d, d)?)?, None)?.last;
    let text_head = evaluate(&test, &bundle.questionnaire, &bundle.sentences, opts, |rec, seg| {
        head_index(rec, seg, &text_params, &text)
    })?;

    let no_train = evaluate(&test, &bundle.questionnaire, &bundle.sentences, opts, |rec, _| {
        transcript_index(&rec.chunks, &bundle.decorrelated, &bundle.sentences)
    })?;
    Ok(EndToEndReport {
        chance_r1: chance_r1(&test, opts.window),
        speech_head,
        text_head,
        no_train,
    })
}

fn end_to_end(fixtures: &Path, t: &Thresholds) -> Result<Outcome> {
    let bundle = FixtureBundle::load(fixtures)?;
    let r = end_to_end_report(&bundle, &TrainConfig::default())?;
    let (speech, text, none, chance) = (r.speech_head.mean.r1, r.text_head.mean.r1, r.no_train.mean.r1, r.chance_r1);
    let ok_head = speech >= t.head_min_r1 && speech >= t.head_min_chance_multiple * chance;
    let ok_none = none <= t.no_train_max_chance_multiple * chance;
    let ok_text = text >= speech;
    Ok(Outcome::new(
        ok_head && ok_none && ok_text,
        format!(
            "test R@1: speech head {speech:.3} (≥ {:.2} and ≥ {:.0}×chance {chance:.3}: {}), \
             No-Train {none:.3} (≤ {:.0}×chance: {}), text head {text:.3} (≥ speech head: {})",
            t.head_min_r1,
            t.head_min_chance_multiple,
            yes(ok_head),
            t.no_train_max_chance_multiple,
            yes(ok_none),
            yes(ok_text)
        ),
    ))
}

fn yes(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

/// Small corpus used for run-to-run determinism checks.
pub fn determinism_spec() -> SyntheticSpec {
    SyntheticSpec {
        train_interviews: 4,
        dev_interviews: 0,
        test_interviews: 2,
        segments_per_interview: 4,
        seed: 5,
        ..SyntheticSpec::default()
    }
}

fn determinism(work: &Path) -> Result<Outcome> {
    let corpus = generate_corpus(&determinism_spec())?;
    let sentences = FixtureSentenceEmbedder::from_cache(&corpus.sentences);
    let set = TrainingSet::from_records(&corpus.records, &corpus.questionnaire, &corpus.speech, &sentences)?;
    let config = TrainConfig {
        epochs: 3,
        seed: 7,
        ..TrainConfig::default()
    };
    let mut runs = Vec::new();
    for run in 0..2 {
        let dir = work.join(format!("determinism-{run}"));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let head = init_head(config.head_config(corpus.spec.raw_dim, corpus.spec.dim)?)?;
        let out = train(&config, &set, head, None)?;
        let ckpt = dir.join("head.bin");
        out.last.save(&ckpt)?;
        let log: Vec<_> = out.log.iter().map(|l| l.without_timing()).collect();
        write_train_log(dir.join("train_log.jsonl"), &log)?;
        let params = HeadParams::load(&ckpt)?;
        let test = corpus.records.iter().find(|r| r.split == Split::Test).expect("test interview");
        let first = build_index_file(dir.join("index"), test, &params, &corpus.speech, 14, 0)?;
        let a = std::fs::read(&first).map_err(|e| Error::io(&first, e))?;
        let again = build_index_file(dir.join("index"), test, &params, &corpus.speech, 14, 0)?;
        let b = std::fs::read(&again).map_err(|e| Error::io(&again, e))?;
        let read = |p: PathBuf| std::fs::read(&p).map_err(|e| Error::io(&p, e));
        runs.push((read(ckpt)?, read(dir.join("train_log.jsonl"))?, a == b));
    }
    let same_ckpt = runs[0].0 == runs[1].0;
    let same_log = runs[0].1 == runs[1].1;
    let idempotent = runs[0].2 && runs[1].2;
    Ok(Outcome::new(
        same_ckpt && same_log && idempotent,
        format!(
            "checkpoints identical: {}, loss logs identical: {}, index rebuild byte-identical: {}",
            yes(same_ckpt),
            yes(same_log),
            yes(idempotent)
        ),
    ))
}

/// Zero-noise corpus on which a linear head can invert the feature map.
pub fn identifiability_spec() -> SyntheticSpec {
    SyntheticSpec {
        train_interviews: 0,
        dev_interviews: 0,
        test_interviews: 5,
        chunks_per_question: (2, 2),
        noise_scale: 0.0,
        speaker_offset_scale: 0.0,
        seed: 3,
        ..SyntheticSpec::default()
    }
}

/// Head that recovers `λ·u` for a chunk whose frames equal `M·u`.
///
/// The last convolution tap passes the final frame through with a bias large
/// enough that GELU is the identity; the projection applies the pseudo-inverse
/// of `M` and cancels the bias.
pub fn pseudo_inverse_head(corpus: &SyntheticCorpus, gain: f64) -> Result<HeadParams> {
    const SHIFT: f64 = 10.0;
    let map = &corpus.speech.map;
    let (dp, d) = map.dim();
    let m = DMatrix::from_fn(dp, d, |i, j| map[[i, j]]);
    let pinv = m
        .pseudo_inverse(1e-10)
        .map_err(|e| Error::Numeric(format!("pseudo-inverse failed: {e}")))?;
    let cfg = HeadConfig {
        dropout: 0.0,
        ..HeadConfig::new(dp, d)
    };
    let mut t = HeadTensors::zeros(&cfg);
    for c in 0..dp {
        t.conv_weight[[c, cfg.receptive_field - 1]] = 1.0;
        t.conv_bias[c] = SHIFT;
        for j in 0..d {
            t.proj_weight[[c, j]] = gain * pinv[(j, c)];
        }
    }
    for j in 0..d {
        t.proj_bias[j] = -gain * SHIFT * (0..dp).map(|c| pinv[(j, c)]).sum::<f64>();
    }
    Ok(HeadParams {
        config: cfg,
        tensors: t,
        step: 0,
    })
}

fn identifiability() -> Result<Outcome> {
    let corpus = generate_corpus(&identifiability_spec())?;
    let head = pseudo_inverse_head(&corpus, 4.0)?;
    let sentences = FixtureSentenceEmbedder::from_cache(&corpus.sentences);
    let report = evaluate(
        &corpus.records,
        &corpus.questionnaire,
        &sentences,
        EvalOptions {
            window: corpus.spec.window,
            ..EvalOptions::default()
        },
        |rec, seg| head_index(rec, seg, &head, &corpus.speech),
    )?;
    Ok(Outcome::new(
        report.mean.r1 == 1.0,
        format!(
            "untrained pseudo-inverse head: R@1 {:.3} over {} interviews",
            report.mean.r1,
            report.per_interview.len()
        ),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_checker_rejects_bad_rows() {
        assert!(row_violation(&[1.0, 0.5, 0.0], 0.0).is_none());
        assert!(row_violation(&[0.5, 1.0, 0.0], 0.0).is_some());
        assert!(row_violation(&[1.0, 0.0, 0.5], 0.0).is_some());
        assert!(row_violation(&[1.0, 1.2], 0.0).is_some());
        assert!(row_violation(&[1.0, 1.0], 0.5).is_none());
    }

    #[test]
    fn exhaustive_rank_oracle_breaks_ties_low() {
        let ranges = vec![0..2, 2..4, 4..5];
        assert_eq!(rank_oracle(&[1.0, 0.0, 1.0, 0.0, 3.0], &ranges, 1), 3);
        assert_eq!(rank_oracle(&[1.0, 0.0, 1.0, 0.0, 3.0], &ranges, 0), 2);
    }

    #[test]
    fn missing_fixture_is_setup_error() {
        let dir = tempfile::tempdir().unwrap();
        let paths = AcceptancePaths {
            fixtures: dir.path().join("absent"),
            work: dir.path().join("work"),
        };
        assert!(matches!(
            run_acceptance(&paths, &Thresholds::default()),
            Err(Error::Setup(_))
        ));
    }

    #[test]
    fn gradient_check_single_seed() {
        let e = gradient_relative_error(0, 1e-4, 1e-6).unwrap();
        assert!(e <= 1e-3, "{e}");
    }
}
