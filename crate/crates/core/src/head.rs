//! The trainable speech head.
//!
//! Per chunk: depthwise 1-D convolution over time (one filter per raw feature
//! channel), GELU, dropout, mean over the resulting frames, then a linear
//! projection into the shared `d`-space. Per segment: parameter-free
//! self-attention `softmax(C·Cᵀ/√d)·C` with a residual connection around it.
//!
//! Gradients are computed by hand; [`SegmentTrace`] keeps what the backward
//! pass needs.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng as _;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::providers::ChunkFeatures;
use crate::rng::{substream, Rng};

pub const DEFAULT_RECEPTIVE_FIELD: usize = 20;
pub const DEFAULT_STRIDE: usize = 2;
pub const DEFAULT_DROPOUT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HeadConfig {
    pub raw_dim: usize,
    pub dim: usize,
    pub receptive_field: usize,
    pub stride: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl HeadConfig {
    pub fn new(raw_dim: usize, dim: usize) -> Self {
        Self {
            raw_dim,
            dim,
            receptive_field: DEFAULT_RECEPTIVE_FIELD,
            stride: DEFAULT_STRIDE,
            dropout: DEFAULT_DROPOUT,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.raw_dim == 0 || self.dim == 0 || self.receptive_field == 0 || self.stride == 0 {
            return Err(Error::Argument(format!(
                "head dimensions must be ≥ 1: d′={}, d={}, R={}, S={}",
                self.raw_dim, self.dim, self.receptive_field, self.stride
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Argument(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }
}

/// Trainable tensors. The same shape doubles as a gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadTensors {
    /// `d′ × R`, one temporal filter per channel.
    pub conv_weight: Array2<f64>,
    pub conv_bias: Array1<f64>,
    /// `d′ × d`.
    pub proj_weight: Array2<f64>,
    pub proj_bias: Array1<f64>,
}

impl HeadTensors {
    pub fn zeros(cfg: &HeadConfig) -> Self {
        Self {
            conv_weight: Array2::zeros((cfg.raw_dim, cfg.receptive_field)),
            conv_bias: Array1::zeros(cfg.raw_dim),
            proj_weight: Array2::zeros((cfg.raw_dim, cfg.dim)),
            proj_bias: Array1::zeros(cfg.dim),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            conv_weight: Array2::zeros(self.conv_weight.raw_dim()),
            conv_bias: Array1::zeros(self.conv_bias.raw_dim()),
            proj_weight: Array2::zeros(self.proj_weight.raw_dim()),
            proj_bias: Array1::zeros(self.proj_bias.raw_dim()),
        }
    }

    /// Tensors in checkpoint order.
    pub fn slices(&self) -> [&[f64]; 4] {
        [
            self.conv_weight.as_slice().expect("standard layout"),
            self.conv_bias.as_slice().expect("standard layout"),
            self.proj_weight.as_slice().expect("standard layout"),
            self.proj_bias.as_slice().expect("standard layout"),
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.conv_weight.as_slice_mut().expect("standard layout"),
            self.conv_bias.as_slice_mut().expect("standard layout"),
            self.proj_weight.as_slice_mut().expect("standard layout"),
            self.proj_bias.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn len(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    pub fn add_assign(&mut self, other: &HeadTensors) {
        self.conv_weight += &other.conv_weight;
        self.conv_bias += &other.conv_bias;
        self.proj_weight += &other.proj_weight;
        self.proj_bias += &other.proj_bias;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub config: HeadConfig,
    pub tensors: HeadTensors,
    /// Optimizer steps taken so far.
    pub step: u64,
}

/// Fan-in scaled uniform initialization, deterministic in `config.seed`.
pub fn init_head(config: HeadConfig) -> Result<HeadParams> {
    config.validate()?;
    let mut rng = substream(config.seed, "init");
    let mut t = HeadTensors::zeros(&config);
    let conv_bound = 1.0 / (config.receptive_field as f64).sqrt();
    let proj_bound = 1.0 / (config.raw_dim as f64).sqrt();
    t.conv_weight.mapv_inplace(|_| rng.random_range(-conv_bound..conv_bound));
    t.conv_bias.mapv_inplace(|_| rng.random_range(-conv_bound..conv_bound));
    t.proj_weight.mapv_inplace(|_| rng.random_range(-proj_bound..proj_bound));
    t.proj_bias.mapv_inplace(|_| rng.random_range(-proj_bound..proj_bound));
    Ok(HeadParams {
        config,
        tensors: t,
        step: 0,
    })
}

/// Forward mode. Dropout masks are drawn from the supplied stream in training.
pub enum Mode<'a> {
    Train(&'a mut Rng),
    Eval,
}

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / SQRT_2))
}

pub fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / SQRT_2)) + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Intermediate values of one chunk's aggregation.
#[derive(Debug, Clone)]
struct ChunkTrace {
    /// Input after left zero-padding to at least `R` frames.
    padded: Array2<f64>,
    /// Convolution output before activation, `L × d′`.
    pre_activation: Array2<f64>,
    /// Inverted-dropout multipliers, `L × d′`; `None` in eval mode.
    mask: Option<Array2<f64>>,
    pooled: Array1<f64>,
}

fn conv_pool_traced(features: ArrayView2<'_, f64>, params: &HeadParams, mode: &mut Mode<'_>) -> Result<ChunkTrace> {
    let cfg = &params.config;
    let (frames, channels) = features.dim();
    if channels != cfg.raw_dim {
        return Err(Error::Argument(format!(
            "features have {channels} channels, head expects {}",
            cfg.raw_dim
        )));
    }
    let padded_len = frames.max(cfg.receptive_field);
    if frames == 0 || padded_len < cfg.receptive_field {
        return Err(Error::Validation(format!("degenerate chunk of {frames} frames")));
    }
    let pad = padded_len - frames;
    let mut padded = Array2::zeros((padded_len, channels));
    padded.slice_mut(ndarray::s![pad.., ..]).assign(&features);

    let out_len = (padded_len - cfg.receptive_field) / cfg.stride + 1;
    let w = &params.tensors.conv_weight;
    let mut pre = Array2::zeros((out_len, channels));
    for l in 0..out_len {
        let start = l * cfg.stride;
        for c in 0..channels {
            let mut acc = params.tensors.conv_bias[c];
            for r in 0..cfg.receptive_field {
                acc += w[[c, r]] * padded[[start + r, c]];
            }
            pre[[l, c]] = acc;
        }
    }

    let mut act = pre.mapv(gelu);
    let mask = match mode {
        Mode::Train(rng) if cfg.dropout > 0.0 => {
            let keep = 1.0 - cfg.dropout;
            let m = Array2::from_shape_fn(act.raw_dim(), |_| {
                if rng.random::<f64>() < cfg.dropout {
                    0.0
                } else {
                    1.0 / keep
                }
            });
            act *= &m;
            Some(m)
        }
        _ => None,
    };
    let pooled = act.mean_axis(Axis(0)).expect("at least one output frame");
    Ok(ChunkTrace {
        padded,
        pre_activation: pre,
        mask,
        pooled,
    })
}

/// Aggregates one chunk's frames into a single `d′` vector.
pub fn conv_pool(features: &ChunkFeatures, params: &HeadParams, mut mode: Mode<'_>) -> Result<Array1<f64>> {
    Ok(conv_pool_traced(features.matrix().view(), params, &mut mode)?.pooled)
}

/// Chunk embeddings of one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentEmbedding {
    /// After self-attention and the residual, `n_s × d`.
    pub chunks: Array2<f64>,
    /// Projected features before self-attention.
    pub pre_attention: Array2<f64>,
}

/// Everything the backward pass needs for one segment.
#[derive(Debug, Clone)]
pub struct SegmentTrace {
    chunks: Vec<ChunkTrace>,
    projected: Array2<f64>,
    attention: Array2<f64>,
    pub output: Array2<f64>,
}

impl SegmentTrace {
    pub fn embedding(&self) -> SegmentEmbedding {
        SegmentEmbedding {
            chunks: self.output.clone(),
            pre_attention: self.projected.clone(),
        }
    }

    /// Row-stochastic self-attention weights.
    pub fn attention(&self) -> &Array2<f64> {
        &self.attention
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(scores: &Array2<f64>) -> Array2<f64> {
    let mut out = scores.clone();
    for mut row in out.rows_mut() {
        let peak = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - peak).exp());
        let z = row.sum();
        row /= z;
    }
    out
}

/// `C + softmax(C·Cᵀ/√d)·C`; returns the attention weights and the output.
pub fn self_attention(projected: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let d = projected.ncols() as f64;
    let attention = softmax_rows(&(projected.dot(&projected.t()) / d.sqrt()));
    let output = projected + &attention.dot(projected);
    (attention, output)
}

pub fn encode_segment_traced(features: &[ArrayView2<'_, f64>], params: &HeadParams, mut mode: Mode<'_>) -> Result<SegmentTrace> {
    if features.is_empty() {
        return Err(Error::Argument("segment has no chunks".into()));
    }
    let d = params.config.dim;
    let mut traces = Vec::with_capacity(features.len());
    let mut projected = Array2::zeros((features.len(), d));
    for (i, f) in features.iter().enumerate() {
        let t = conv_pool_traced(f.view(), params, &mut mode)?;
        let c = t.pooled.dot(&params.tensors.proj_weight) + &params.tensors.proj_bias;
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite projection for chunk {i}")));
        }
        projected.row_mut(i).assign(&c);
        traces.push(t);
    }
    let (attention, output) = self_attention(&projected);
    if let Some((i, _)) = output
        .rows()
        .into_iter()
        .enumerate()
        .find(|(_, r)| r.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::Numeric(format!("non-finite embedding for chunk {i}")));
    }
    Ok(SegmentTrace {
        chunks: traces,
        projected,
        attention,
        output,
    })
}

/// Encodes the chunks of one segment into `n_s × d` embeddings.
pub fn encode_segment(features: &[ChunkFeatures], params: &HeadParams, mode: Mode<'_>) -> Result<SegmentEmbedding> {
    let views: Vec<_> = features.iter().map(|f| f.matrix().view()).collect();
    Ok(encode_segment_traced(&views, params, mode)?.embedding())
}

/// Accumulates parameter gradients given `d loss / d output` for a segment.
pub fn backward_segment(trace: &SegmentTrace, grad_output: ArrayView2<'_, f64>, params: &HeadParams, grads: &mut HeadTensors) {
    let cfg = &params.config;
    let c = &trace.projected;
    let p = &trace.attention;
    let scale = 1.0 / (cfg.dim as f64).sqrt();

    // output = C + P·C with P = softmax(C·Cᵀ·scale)
    let mut grad_c = grad_output.to_owned() + p.t().dot(&grad_output);
    let grad_p = grad_output.dot(&c.t());
    let mut grad_s = Array2::zeros(p.raw_dim());
    for ((mut gs, pr), gp) in grad_s.rows_mut().into_iter().zip(p.rows()).zip(grad_p.rows()) {
        let inner = pr.dot(&gp);
        for ((g, &pv), &gpv) in gs.iter_mut().zip(pr.iter()).zip(gp.iter()) {
            *g = pv * (gpv - inner);
        }
    }
    let sym = &grad_s + &grad_s.t();
    grad_c += &(sym.dot(c) * scale);

    for (trace, gc) in trace.chunks.iter().zip(grad_c.rows()) {
        backward_chunk(trace, gc, params, grads);
    }
}

fn backward_chunk(trace: &ChunkTrace, grad_c: ArrayView1<'_, f64>, params: &HeadParams, grads: &mut HeadTensors) {
    let cfg = &params.config;
    // C = pooled·W + b
    let outer = trace
        .pooled
        .view()
        .insert_axis(Axis(1))
        .dot(&grad_c.insert_axis(Axis(0)));
    grads.proj_weight += &outer;
    grads.proj_bias += &grad_c;
    let grad_pooled = params.tensors.proj_weight.dot(&grad_c);

    let out_len = trace.pre_activation.nrows() as f64;
    for (l, pre_row) in trace.pre_activation.rows().into_iter().enumerate() {
        let start = l * cfg.stride;
        for (ch, &pre) in pre_row.iter().enumerate() {
            let mut g = grad_pooled[ch] / out_len;
            if let Some(mask) = &trace.mask {
                g *= mask[[l, ch]];
            }
            let gy = g * gelu_grad(pre);
            if gy == 0.0 {
                continue;
            }
            grads.conv_bias[ch] += gy;
            for r in 0..cfg.receptive_field {
                grads.conv_weight[[ch, r]] += gy * trace.padded[[start + r, ch]];
            }
        }
    }
}

const CKPT_MAGIC: &[u8; 8] = b"IDNTHEAD";
const CKPT_VERSION: u16 = 1;

impl HeadParams {
    /// Versioned little-endian checkpoint; tensors stored as f32.
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut out = Vec::with_capacity(64 + self.tensors.len() * 4);
        out.extend_from_slice(CKPT_MAGIC);
        out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        for v in [c.raw_dim, c.dim, c.receptive_field, c.stride] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&(c.dropout as f32).to_le_bytes());
        out.extend_from_slice(&c.seed.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        for s in self.tensors.slices() {
            for &v in s {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        const HEADER: usize = 8 + 2 + 16 + 4 + 8 + 8;
        if bytes.len() < HEADER || &bytes[..8] != CKPT_MAGIC {
            return Err(Error::Corrupt("not a head checkpoint".into()));
        }
        let version = u16::from_le_bytes([bytes[8], bytes[9]]);
        if version != CKPT_VERSION {
            return Err(Error::Corrupt(format!("unsupported checkpoint version {version}")));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let config = HeadConfig {
            raw_dim: u32_at(10),
            dim: u32_at(14),
            receptive_field: u32_at(18),
            stride: u32_at(22),
            dropout: f32::from_le_bytes(bytes[26..30].try_into().unwrap()) as f64,
            seed: u64_at(30),
        };
        config.validate().map_err(|e| Error::Corrupt(e.to_string()))?;
        let step = u64_at(38);
        let mut tensors = HeadTensors::zeros(&config);
        let expected = HEADER + tensors.len() * 4;
        if bytes.len() != expected {
            return Err(Error::Corrupt(format!(
                "checkpoint has {} bytes, header implies {expected}",
                bytes.len()
            )));
        }
        let mut values = bytes[HEADER..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64);
        for s in tensors.slices_mut() {
            for v in s.iter_mut() {
                *v = values.next().expect("length checked");
            }
        }
        if !tensors.is_finite() {
            return Err(Error::Corrupt("checkpoint holds non-finite parameters".into()));
        }
        Ok(Self { config, tensors, step })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    /// Hex SHA-256 of the checkpoint bytes.
    pub fn fingerprint(&self) -> String {
        hex_digest(&self.to_bytes())
    }

    /// Parameters as they read back from a checkpoint (f32-rounded).
    pub fn rounded(&self) -> Self {
        Self::from_bytes(&self.to_bytes()).expect("own checkpoint parses")
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
