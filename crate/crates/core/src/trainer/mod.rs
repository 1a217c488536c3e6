//! Contrastive training of the speech head with in-audio negatives.

pub mod groups;
pub mod loss;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{InterviewRecord, Questionnaire, Split};
use crate::error::{Error, Result};
use crate::gaussian::{anchor_embeddings, gaussian_weight_matrix, GaussianConfig, SigmaMode};
use crate::head::{backward_segment, encode_segment_traced, HeadConfig, HeadParams, HeadTensors, Mode};
use crate::providers::{sentence_embedding, speech_features, SentenceEmbeddingProvider, SpeechFeatureProvider};
use crate::retrieval::RecallSummary;
use crate::rng::{substream_indexed, Rng};

pub use groups::{assign_negatives, build_groups, BatchEntry, NegativeAssignment, NegativeRef, SegmentRef, TrainingGroup};
pub use loss::{contrastive_losses, loss_ss, loss_st, smoothed_targets, ChunkSlot, LossItem, LossOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaModeName {
    Fixed,
    Varying,
}

/// Where negative chunks come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeSource {
    /// Other segments of the same interview.
    InAudio,
    /// Groups pooled across interviews; an ablation that leaves the speaker
    /// identity usable as a shortcut.
    CrossInterview,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub group_size: usize,
    pub augmentation: usize,
    pub sigma_mode: SigmaModeName,
    pub sigma: f64,
    pub alpha: f64,
    pub sigma_floor: f64,
    pub learning_rate: f64,
    pub lr_step_size: usize,
    pub lr_decay: f64,
    pub epochs: usize,
    pub positive_mass: f64,
    pub seed: u64,
    pub dropout: f64,
    pub receptive_field: usize,
    pub stride: usize,
    pub negatives: NegativeSource,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            group_size: 4,
            augmentation: 2,
            sigma_mode: SigmaModeName::Fixed,
            sigma: 0.5,
            alpha: 0.5,
            sigma_floor: crate::gaussian::DEFAULT_SIGMA_FLOOR,
            learning_rate: 3e-4,
            lr_step_size: 10,
            lr_decay: 0.1,
            epochs: 40,
            positive_mass: 0.95,
            seed: 0,
            dropout: crate::head::DEFAULT_DROPOUT,
            receptive_field: crate::head::DEFAULT_RECEPTIVE_FIELD,
            stride: crate::head::DEFAULT_STRIDE,
            negatives: NegativeSource::InAudio,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.batch_size < 1 {
            return fail("batch_size must be ≥ 1".into());
        }
        if self.group_size < 2 {
            return fail(format!("group_size must be ≥ 2, got {}", self.group_size));
        }
        if self.augmentation < 1 {
            return fail("augmentation must be ≥ 1".into());
        }
        if !(self.positive_mass > 0.5 && self.positive_mass <= 1.0) {
            return fail(format!("positive_mass must be in (0.5, 1], got {}", self.positive_mass));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be ≥ 0, got {}", self.learning_rate));
        }
        if self.lr_step_size < 1 || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return fail("scheduler needs step size ≥ 1 and decay in (0, 1]".into());
        }
        self.gaussian().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.head_config(1, 1).map(|_| ())
    }

    pub fn gaussian(&self) -> GaussianConfig {
        let mode = match self.sigma_mode {
            SigmaModeName::Fixed => SigmaMode::FixedSigma { sigma: self.sigma },
            SigmaModeName::Varying => SigmaMode::VaryingAlpha { alpha: self.alpha },
        };
        GaussianConfig {
            mode,
            sigma_floor: self.sigma_floor,
        }
    }

    pub fn head_config(&self, raw_dim: usize, dim: usize) -> Result<HeadConfig> {
        let cfg = HeadConfig {
            raw_dim,
            dim,
            receptive_field: self.receptive_field,
            stride: self.stride,
            dropout: self.dropout,
            seed: self.seed,
        };
        crate::head::init_head(cfg).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Learning rate of a 0-based epoch under the step schedule.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi((epoch / self.lr_step_size) as i32)
    }

    /// Parses JSON, or `key = value` lines when the text is not a JSON object.
    pub fn parse(text: &str) -> Result<Self> {
        let value = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::Parse {
                line: e.line(),
                message: e.to_string(),
            })?
        } else {
            let mut map = serde_json::Map::new();
            for (n, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                    line: n + 1,
                    message: format!("expected key=value, got {line:?}"),
                })?;
                let v = v.trim();
                let parsed = serde_json::from_str(v).unwrap_or_else(|_| serde_json::Value::String(v.to_owned()));
                map.insert(k.trim().to_owned(), parsed);
            }
            serde_json::Value::Object(map)
        };
        let cfg: Self = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// One annotated training segment with its features and question embeddings.
#[derive(Debug, Clone)]
pub struct TrainSegment {
    pub interview_id: String,
    pub segment_index: usize,
    /// Raw features per chunk, `T_i × d′`.
    pub features: Vec<Array2<f64>>,
    /// Question embeddings in asking order, `m × d`.
    pub questions: Array2<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainingSet {
    pub segments: Vec<TrainSegment>,
    /// Segments that covered no chunk and were left out.
    pub skipped_segments: usize,
}

impl TrainingSet {
    /// Gathers features and question embeddings for every train record.
    pub fn from_records(
        records: &[InterviewRecord],
        questionnaire: &Questionnaire,
        speech: &dyn SpeechFeatureProvider,
        sentences: &dyn SentenceEmbeddingProvider,
    ) -> Result<Self> {
        let mut set = TrainingSet::default();
        let mut question_cache: BTreeMap<String, ndarray::Array1<f64>> = BTreeMap::new();
        for rec in records.iter().filter(|r| r.split == Split::Train) {
            for (seg, chunk_ids) in rec.segments().iter().zip(rec.segment_chunks()) {
                if chunk_ids.is_empty() {
                    set.skipped_segments += 1;
                    continue;
                }
                let features = chunk_ids
                    .iter()
                    .map(|&c| speech_features(&rec.chunks[c], speech).map(|f| f.into_matrix()))
                    .collect::<Result<Vec<_>>>()?;
                let mut questions = Array2::zeros((seg.question_ids.len(), sentences.dim()));
                for (j, qid) in seg.question_ids.iter().enumerate() {
                    if !question_cache.contains_key(qid) {
                        let q = questionnaire
                            .get(qid)
                            .ok_or_else(|| Error::NotFound(format!("question {qid:?} not in questionnaire")))?;
                        question_cache.insert(qid.clone(), sentence_embedding(&q.text, sentences)?.0);
                    }
                    questions.row_mut(j).assign(&question_cache[qid]);
                }
                set.segments.push(TrainSegment {
                    interview_id: rec.interview_id.clone(),
                    segment_index: seg.segment_index,
                    features,
                    questions,
                });
            }
        }
        Ok(set)
    }

    pub fn raw_dim(&self) -> Option<usize> {
        self.segments.first().and_then(|s| s.features.first()).map(|f| f.ncols())
    }

    pub fn dim(&self) -> Option<usize> {
        self.segments.first().map(|s| s.questions.ncols())
    }

    /// Segment references per interview, in first-appearance order.
    pub fn by_interview(&self) -> Vec<(String, Vec<SegmentRef>)> {
        let mut out: Vec<(String, Vec<SegmentRef>)> = Vec::new();
        for (i, s) in self.segments.iter().enumerate() {
            match out.iter_mut().find(|(id, _)| *id == s.interview_id) {
                Some((_, v)) => v.push(i),
                None => out.push((s.interview_id.clone(), vec![i])),
            }
        }
        out
    }
}

/// Everything needed to evaluate the objective on one batch.
#[derive(Debug, Clone)]
pub struct BatchPlan {
    /// Segments to encode; `ChunkSlot::slot` indexes this list.
    pub slots: Vec<SegmentRef>,
    pub items: Vec<LossItem>,
    pub targets: Vec<f64>,
    pub k: usize,
}

/// Samples negatives and builds anchors for a batch.
pub fn plan_batch(
    set: &TrainingSet,
    batch: &[BatchEntry<'_>],
    gaussian: &GaussianConfig,
    positive_mass: f64,
    rng: &mut Rng,
) -> Result<BatchPlan> {
    let assignment = assign_negatives(batch, |s| set.segments[s].features.len(), rng)?;
    let targets = smoothed_targets(assignment.k, positive_mass)?;

    let mut slot_of: BTreeMap<SegmentRef, usize> = BTreeMap::new();
    let mut slots = Vec::new();
    let mut slot = |s: SegmentRef, slots: &mut Vec<SegmentRef>| {
        *slot_of.entry(s).or_insert_with(|| {
            slots.push(s);
            slots.len() - 1
        })
    };
    let mut items = Vec::new();
    for (entry, negs) in batch.iter().zip(&assignment.negatives) {
        let seg = &set.segments[entry.segment];
        let own = slot(entry.segment, &mut slots);
        let weights = gaussian_weight_matrix(seg.features.len(), seg.questions.nrows(), gaussian)?;
        let anchors = anchor_embeddings(&weights, seg.questions.view())?;
        for (chunk, chunk_negs) in negs.iter().enumerate() {
            let negatives = chunk_negs
                .iter()
                .map(|n| ChunkSlot {
                    slot: slot(n.segment, &mut slots),
                    chunk: n.chunk,
                })
                .collect();
            items.push(LossItem {
                chunk: ChunkSlot { slot: own, chunk },
                anchor: anchors.row(chunk).to_owned(),
                negatives,
            });
        }
    }
    Ok(BatchPlan {
        slots,
        items,
        targets,
        k: assignment.k,
    })
}

/// Evaluates `L_st + L_ss` on a planned batch and back-propagates it.
pub fn batch_objective(
    set: &TrainingSet,
    plan: &BatchPlan,
    params: &HeadParams,
    mut mode: Mode<'_>,
) -> Result<(LossOutput, HeadTensors)> {
    let mut traces = Vec::with_capacity(plan.slots.len());
    for &s in &plan.slots {
        let views: Vec<ArrayView2<'_, f64>> = set.segments[s].features.iter().map(|f| f.view()).collect();
        let m = match &mut mode {
            Mode::Train(rng) => Mode::Train(rng),
            Mode::Eval => Mode::Eval,
        };
        traces.push(encode_segment_traced(&views, params, m)?);
    }
    let outputs: Vec<Array2<f64>> = traces.iter().map(|t| t.output.clone()).collect();
    let out = contrastive_losses(&outputs, &plan.items, &plan.targets)?;
    let mut grads = params.tensors.zeros_like();
    for (trace, g) in traces.iter().zip(&out.grads) {
        backward_segment(trace, g.view(), params, &mut grads);
    }
    Ok((out, grads))
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    first: HeadTensors,
    second: HeadTensors,
    steps: i32,
}

impl Adam {
    pub fn new(like: &HeadTensors) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            first: like.zeros_like(),
            second: like.zeros_like(),
            steps: 0,
        }
    }

    pub fn step(&mut self, params: &mut HeadTensors, grads: &HeadTensors, lr: f64) {
        self.steps += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.steps);
        let c2 = 1.0 - b2.powi(self.steps);
        let p = params.slices_mut();
        let m = self.first.slices_mut();
        let v = self.second.slices_mut();
        let g = grads.slices();
        for (((p, m), v), g) in p.into_iter().zip(m).zip(v).zip(g) {
            for (((p, m), v), &g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
    pub dev_r1: Option<f64>,
    pub dev_r5: Option<f64>,
    pub dev_r10: Option<f64>,
    pub dev_ravg: Option<f64>,
    pub wall_s: f64,
}

impl EpochLog {
    /// Same record with the wall-clock time zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_s: 0.0,
            ..self.clone()
        }
    }
}

pub fn write_train_log(path: impl AsRef<Path>, log: &[EpochLog]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for e in log {
        out.push_str(&serde_json::to_string(e).expect("log serializes"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub last: HeadParams,
    /// Best dev R-avg checkpoint, when a dev evaluator was supplied.
    pub best: Option<(usize, HeadParams, f64)>,
    pub log: Vec<EpochLog>,
}

/// Dev-set evaluator called after every epoch.
pub type DevEvaluator<'a> = dyn FnMut(&HeadParams) -> Result<RecallSummary> + 'a;

/// Groups for one epoch, already in batch order.
pub fn epoch_groups(set: &TrainingSet, config: &TrainConfig, epoch: usize) -> Result<Vec<TrainingGroup>> {
    let mut rng = substream_indexed(config.seed, "grouping", &[epoch as u64]);
    let mut groups = Vec::new();
    match config.negatives {
        NegativeSource::InAudio => {
            for (id, segs) in set.by_interview() {
                groups.extend(build_groups(Some(&id), &segs, config.group_size, config.augmentation, &mut rng)?);
            }
        }
        NegativeSource::CrossInterview => {
            let all: Vec<_> = (0..set.segments.len()).collect();
            groups.extend(build_groups(None, &all, config.group_size, config.augmentation, &mut rng)?);
        }
    }
    groups.retain(|g| g.segments.len() >= 2);
    groups.shuffle(&mut rng);
    for (i, g) in groups.iter_mut().enumerate() {
        g.group_id = i;
    }
    Ok(groups)
}

/// Optimizes `L_st + L_ss` with Adam under a step learning-rate schedule.
pub fn train(
    config: &TrainConfig,
    set: &TrainingSet,
    mut params: HeadParams,
    mut dev: Option<&mut DevEvaluator<'_>>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if set.segments.is_empty() {
        return Err(Error::Config("no training segments".into()));
    }
    if set.raw_dim() != Some(params.config.raw_dim) || set.dim() != Some(params.config.dim) {
        return Err(Error::Config(format!(
            "head expects d′={} d={}, data has d′={:?} d={:?}",
            params.config.raw_dim,
            params.config.dim,
            set.raw_dim(),
            set.dim()
        )));
    }
    let gaussian = config.gaussian();
    let mut adam = Adam::new(&params.tensors);
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, HeadParams, f64)> = None;

    for epoch in 0..config.epochs {
        let started = Instant::now();
        let lr = config.learning_rate_at(epoch);
        let groups = epoch_groups(set, config, epoch)?;
        if groups.is_empty() {
            return Err(Error::Config("no group has two or more segments".into()));
        }
        let entries: Vec<BatchEntry<'_>> = groups
            .iter()
            .flat_map(|g| g.segments.iter().map(move |&s| BatchEntry { segment: s, group: g }))
            .collect();
        let mut sampling = substream_indexed(config.seed, "sampling", &[epoch as u64]);
        let mut dropout = substream_indexed(config.seed, "dropout", &[epoch as u64]);

        let mut total = 0.0;
        let mut batches = 0usize;
        for batch in entries.chunks(config.batch_size) {
            let plan = plan_batch(set, batch, &gaussian, config.positive_mass, &mut sampling)?;
            let (out, grads) = batch_objective(set, &plan, &params, Mode::Train(&mut dropout))?;
            let loss = out.total();
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Diverged {
                    step: params.step as usize,
                    loss,
                });
            }
            adam.step(&mut params.tensors, &grads, lr);
            params.step += 1;
            total += loss;
            batches += 1;
        }

        let summary = match dev.as_mut() {
            Some(eval) => Some(eval(&params)?),
            None => None,
        };
        if let Some(s) = &summary {
            if best.as_ref().is_none_or(|(_, _, b)| s.ravg > *b) {
                best = Some((epoch, params.clone(), s.ravg));
            }
        }
        log.push(EpochLog {
            epoch,
            mean_loss: total / batches as f64,
            lr,
            dev_r1: summary.map(|s| s.r1),
            dev_r5: summary.map(|s| s.r5),
            dev_r10: summary.map(|s| s.r10),
            dev_ravg: summary.map(|s| s.ravg),
            wall_s: started.elapsed().as_secs_f64(),
        });
    }
    Ok(TrainOutcome {
        last: params,
        best,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::init_head;
    use rand::Rng as _;

    pub(crate) fn toy_set(interviews: usize, segs: usize, raw: usize, d: usize, seed: u64) -> TrainingSet {
        let mut rng = crate::rng::substream(seed, "toy");
        let mut set = TrainingSet::default();
        for i in 0..interviews {
            for s in 0..segs {
                let n = rng.random_range(2..5);
                set.segments.push(TrainSegment {
                    interview_id: format!("I{i}"),
                    segment_index: s,
                    features: (0..n)
                        .map(|_| Array2::from_shape_fn((rng.random_range(2..5), raw), |_| rng.random_range(-1.0..1.0)))
                        .collect(),
                    questions: Array2::from_shape_fn((3, d), |_| rng.random_range(-1.0..1.0)),
                });
            }
        }
        set
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            receptive_field: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn config_defaults_match_reported_setup() {
        let c = TrainConfig::default();
        assert_eq!((c.batch_size, c.group_size, c.augmentation, c.epochs), (4, 4, 2, 40));
        assert_eq!((c.learning_rate, c.lr_step_size, c.lr_decay), (3e-4, 10, 0.1));
        assert_eq!((c.sigma, c.positive_mass), (0.5, 0.95));
        assert!((c.learning_rate_at(25) - 3e-6).abs() < 1e-18);
    }

    #[test]
    fn config_parsing() {
        let c = TrainConfig::parse(r#"{"epochs": 3, "seed": 7}"#).unwrap();
        assert_eq!((c.epochs, c.seed), (3, 7));
        let c = TrainConfig::parse("# comment\nepochs = 5\nsigma_mode = varying\nalpha=0.25\n").unwrap();
        assert_eq!(c.epochs, 5);
        assert_eq!(c.sigma_mode, SigmaModeName::Varying);
        assert!(matches!(TrainConfig::parse(r#"{"epochz": 3}"#), Err(Error::Config(_))));
        assert!(matches!(TrainConfig::parse("group_size=1"), Err(Error::Config(_))));
        assert!(matches!(TrainConfig::parse("positive_mass=0.5"), Err(Error::Config(_))));
    }

    #[test]
    fn zero_learning_rate_leaves_params_bit_identical() {
        let set = toy_set(2, 5, 4, 3, 1);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 1,
            ..small_config()
        };
        let head = init_head(cfg.head_config(4, 3).unwrap()).unwrap();
        let out = train(&cfg, &set, head.clone(), None).unwrap();
        assert_eq!(out.last.tensors, head.tensors);
        assert!(out.last.step > 0);
    }

    #[test]
    fn training_is_deterministic() {
        let set = toy_set(2, 5, 4, 3, 2);
        let cfg = small_config();
        let head = init_head(cfg.head_config(4, 3).unwrap()).unwrap();
        let a = train(&cfg, &set, head.clone(), None).unwrap();
        let b = train(&cfg, &set, head, None).unwrap();
        assert_eq!(a.last.to_bytes(), b.last.to_bytes());
        let strip = |l: &[EpochLog]| l.iter().map(EpochLog::without_timing).collect::<Vec<_>>();
        assert_eq!(strip(&a.log), strip(&b.log));
    }

    #[test]
    fn empty_data_is_config_error() {
        let cfg = small_config();
        let head = init_head(cfg.head_config(4, 3).unwrap()).unwrap();
        assert!(matches!(train(&cfg, &TrainingSet::default(), head, None), Err(Error::Config(_))));
    }

    #[test]
    fn epoch_groups_cover_every_segment_at_least_d_times() {
        let set = toy_set(3, 7, 4, 3, 3);
        let cfg = small_config();
        for epoch in 0..3 {
            let groups = epoch_groups(&set, &cfg, epoch).unwrap();
            let mut seen = vec![0usize; set.segments.len()];
            for g in &groups {
                let id = g.interview_id.as_deref().unwrap();
                assert!(g.segments.iter().all(|&s| set.segments[s].interview_id == id));
                for &s in &g.segments {
                    seen[s] += 1;
                }
            }
            assert!(seen.iter().all(|&c| c >= cfg.augmentation && c <= cfg.augmentation * 2));
        }
        assert_ne!(epoch_groups(&set, &cfg, 0).unwrap(), epoch_groups(&set, &cfg, 1).unwrap());
    }

    #[test]
    fn objective_is_sum_of_both_losses() {
        let set = toy_set(1, 4, 4, 3, 4);
        let cfg = small_config();
        let head = init_head(cfg.head_config(4, 3).unwrap()).unwrap();
        let groups = epoch_groups(&set, &cfg, 0).unwrap();
        let batch: Vec<_> = groups[0].segments.iter().map(|&s| BatchEntry { segment: s, group: &groups[0] }).collect();
        let plan = plan_batch(&set, &batch, &cfg.gaussian(), 0.95, &mut crate::rng::substream(0, "x")).unwrap();
        let (out, _) = batch_objective(&set, &plan, &head, Mode::Eval).unwrap();
        assert_eq!(out.total(), out.speech_text + out.speech_speech);
        let outputs: Vec<_> = plan
            .slots
            .iter()
            .map(|&s| {
                let views: Vec<_> = set.segments[s].features.iter().map(|f| f.view()).collect();
                encode_segment_traced(&views, &head, Mode::Eval).unwrap().output
            })
            .collect();
        assert_eq!(loss_st(&outputs, &plan.items, &plan.targets).unwrap(), out.speech_text);
        assert_eq!(loss_ss(&outputs, &plan.items, &plan.targets).unwrap(), out.speech_speech);
    }
}
