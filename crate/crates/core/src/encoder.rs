//! Clip encoder: maps `F` frames to exactly `N` embeddings of width `d`.
//!
//! Two variants share one parameter container:
//!
//! * `Mock`: embedding `j` is `P_j * frame[j mod F]`, where each slot projection
//!   `P_j` is a seeded shared base plus a seeded per-slot perturbation. Frame
//!   identity survives encoding, so retrieval tasks are solvable without
//!   training the encoder.
//! * `Learned`: `N` learned queries cross-attend over the `F` frame features,
//!   followed by a linear adapter and an optional layer norm.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{shape, Error, Result};
use crate::pipeline::EmbeddingSeq;
use crate::rng;
use crate::schedule::EncodingConfig;
use crate::video::Frame;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderVariant {
    Mock,
    Learned,
}

/// Per-slot perturbation scale of the mock projections relative to the shared base.
const MOCK_SLOT_SCALE: f32 = 0.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderShape {
    pub variant: EncoderVariant,
    pub seed: u64,
    pub frames_per_clip: usize,
    pub tokens_per_clip: usize,
    pub frame_dim: usize,
    pub embed_dim: usize,
    /// Layer-normalise the adapter output (learned variant only).
    #[serde(default)]
    pub layer_norm: bool,
}

/// A named parameter tensor, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    fn normal(name: &'static str, shape: Vec<usize>, scale: f32, rng: &mut impl Rng) -> Self {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| rng.sample::<f32, _>(StandardNormal) * scale)
            .collect();
        Self { name, shape, data }
    }

    fn filled(name: &'static str, shape: Vec<usize>, value: f32) -> Self {
        let n = shape.iter().product();
        Self {
            name,
            shape,
            data: vec![value; n],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClipEncoderParams {
    pub shape: EncoderShape,
    pub tensors: Vec<Tensor>,
}

#[derive(Serialize, Deserialize)]
struct EncoderHeader {
    format: String,
    #[serde(flatten)]
    shape: EncoderShape,
    tensors: Vec<(String, Vec<usize>)>,
}

const FORMAT: &str = "clip-encoder-v1";

impl ClipEncoderParams {
    /// Seeded initialisation of either variant.
    pub fn init(shape: EncoderShape) -> Result<Self> {
        let EncoderShape {
            frames_per_clip: f,
            tokens_per_clip: n,
            frame_dim: din,
            embed_dim: d,
            ..
        } = shape;
        if f == 0 || n == 0 || din == 0 || d == 0 {
            return Err(Error::InvalidArgument(
                "encoder dimensions must all be >= 1".into(),
            ));
        }
        let mut r = rng::stream(shape.seed, "clip-encoder", 0);
        let in_scale = 1.0 / (din as f32).sqrt();
        let d_scale = 1.0 / (d as f32).sqrt();
        let tensors = match shape.variant {
            EncoderVariant::Mock => {
                let base = Tensor::normal("base", vec![d, din], in_scale, &mut r);
                let mut proj = Tensor::normal("projections", vec![n, d, din], in_scale * MOCK_SLOT_SCALE, &mut r);
                for slot in proj.data.chunks_exact_mut(d * din) {
                    for (p, b) in slot.iter_mut().zip(&base.data) {
                        *p += b;
                    }
                }
                vec![proj]
            }
            EncoderVariant::Learned => vec![
                Tensor::normal("queries", vec![n, d], 1.0, &mut r),
                Tensor::normal("w_key", vec![din, d], in_scale, &mut r),
                Tensor::normal("w_value", vec![din, d], in_scale, &mut r),
                Tensor::normal("w_out", vec![d, d], d_scale, &mut r),
                Tensor::normal("adapter", vec![d, d], d_scale, &mut r),
                Tensor::filled("adapter_bias", vec![d], 0.0),
                Tensor::filled("ln_gain", vec![d], 1.0),
                Tensor::filled("ln_bias", vec![d], 0.0),
            ],
        };
        Ok(Self { shape, tensors })
    }

    /// Convenience constructor matching an [`EncodingConfig`].
    pub fn for_config(cfg: &EncodingConfig, variant: EncoderVariant, frame_dim: usize, seed: u64) -> Result<Self> {
        Self::init(EncoderShape {
            variant,
            seed,
            frames_per_clip: cfg.frames_per_clip,
            tokens_per_clip: cfg.tokens_per_clip,
            frame_dim,
            embed_dim: cfg.embed_dim,
            layer_norm: false,
        })
    }

    pub fn tensor(&self, name: &str) -> &Tensor {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .unwrap_or_else(|| panic!("encoder has no tensor {name}"))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = EncoderHeader {
            format: FORMAT.into(),
            shape: self.shape.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| (t.name.to_string(), t.shape.clone()))
                .collect(),
        };
        let payload: Vec<f32> = self.tensors.iter().flat_map(|t| t.data.iter().copied()).collect();
        crate::io::write(path, &header, &payload)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, payload): (EncoderHeader, Vec<f32>) = crate::io::read(path)?;
        if header.format != FORMAT {
            return Err(Error::Data(format!("unknown encoder format {}", header.format)));
        }
        let mut params = Self::init(header.shape)?;
        let mut offset = 0;
        for t in &mut params.tensors {
            let stored = header
                .tensors
                .iter()
                .find(|(n, _)| n == t.name)
                .ok_or_else(|| Error::Data(format!("encoder file lacks tensor {}", t.name)))?;
            if stored.1 != t.shape {
                return Err(Error::Data(format!("tensor {} has shape {:?}, expected {:?}", t.name, stored.1, t.shape)));
            }
            let n = t.data.len();
            let src = payload
                .get(offset..offset + n)
                .ok_or_else(|| Error::Data("encoder payload truncated".into()))?;
            t.data.copy_from_slice(src);
            offset += n;
        }
        if offset != payload.len() {
            return Err(Error::Data("encoder payload has trailing values".into()));
        }
        Ok(params)
    }

    fn check_clip(&self, frames: &[Frame]) -> Result<()> {
        let s = &self.shape;
        if frames.len() != s.frames_per_clip {
            return Err(shape(format!(
                "clip has {} frames, encoder expects {}",
                frames.len(),
                s.frames_per_clip
            )));
        }
        if let Some(f) = frames.iter().find(|f| f.features.len() != s.frame_dim) {
            return Err(shape(format!(
                "frame has {} features, encoder expects {}",
                f.features.len(),
                s.frame_dim
            )));
        }
        Ok(())
    }
}

/// Encodes one clip of exactly `F` frames into a row-major `N x d` matrix.
pub fn encode_clip(frames: &[Frame], params: &ClipEncoderParams) -> Result<Vec<f32>> {
    params.check_clip(frames)?;
    Ok(match params.shape.variant {
        EncoderVariant::Mock => encode_mock(frames, params),
        EncoderVariant::Learned => encode_learned(frames, params),
    })
}

fn encode_mock(frames: &[Frame], params: &ClipEncoderParams) -> Vec<f32> {
    let s = &params.shape;
    let (d, din, f) = (s.embed_dim, s.frame_dim, s.frames_per_clip);
    let proj = &params.tensor("projections").data;
    let mut out = vec![0f32; s.tokens_per_clip * d];
    for (j, row) in out.chunks_exact_mut(d).enumerate() {
        let p = &proj[j * d * din..(j + 1) * d * din];
        let x = &frames[j % f].features;
        for (o, prow) in row.iter_mut().zip(p.chunks_exact(din)) {
            *o = prow.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }
    out
}

/// `out[r, c] = sum_k a[r, k] * b[k, c]`, row-major.
fn matmul(a: &[f32], b: &[f32], rows: usize, inner: usize, cols: usize) -> Vec<f32> {
    let mut out = vec![0f32; rows * cols];
    for r in 0..rows {
        let orow = &mut out[r * cols..(r + 1) * cols];
        for k in 0..inner {
            let av = a[r * inner + k];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in orow.iter_mut().zip(&b[k * cols..(k + 1) * cols]) {
                *o += av * bv;
            }
        }
    }
    out
}

fn encode_learned(frames: &[Frame], params: &ClipEncoderParams) -> Vec<f32> {
    let s = &params.shape;
    let (n, d, din, f) = (s.tokens_per_clip, s.embed_dim, s.frame_dim, s.frames_per_clip);
    let x: Vec<f32> = frames.iter().flat_map(|fr| fr.features.iter().copied()).collect();
    let keys = matmul(&x, &params.tensor("w_key").data, f, din, d);
    let values = matmul(&x, &params.tensor("w_value").data, f, din, d);
    let queries = &params.tensor("queries").data;
    let scale = 1.0 / (d as f32).sqrt();

    let mut pooled = vec![0f32; n * d];
    let mut scores = vec![0f32; f];
    for q in 0..n {
        let qrow = &queries[q * d..(q + 1) * d];
        for (t, sc) in scores.iter_mut().enumerate() {
            *sc = qrow.iter().zip(&keys[t * d..(t + 1) * d]).map(|(a, b)| a * b).sum::<f32>() * scale;
        }
        let max = scores.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut z = 0.0;
        for sc in scores.iter_mut() {
            *sc = (*sc - max).exp();
            z += *sc;
        }
        let prow = &mut pooled[q * d..(q + 1) * d];
        for (t, sc) in scores.iter().enumerate() {
            let w = sc / z;
            for (p, v) in prow.iter_mut().zip(&values[t * d..(t + 1) * d]) {
                *p += w * v;
            }
        }
    }
    let attended = matmul(&pooled, &params.tensor("w_out").data, n, d, d);
    let mut out = matmul(&attended, &params.tensor("adapter").data, n, d, d);
    let bias = &params.tensor("adapter_bias").data;
    for row in out.chunks_exact_mut(d) {
        for (o, b) in row.iter_mut().zip(bias) {
            *o += b;
        }
    }
    if s.layer_norm {
        let gain = &params.tensor("ln_gain").data;
        let lb = &params.tensor("ln_bias").data;
        for row in out.chunks_exact_mut(d) {
            let mean = row.iter().sum::<f32>() / d as f32;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
            let inv = 1.0 / (var + 1e-5).sqrt();
            for ((o, g), b) in row.iter_mut().zip(gain).zip(lb) {
                *o = (*o - mean) * inv * g + b;
            }
        }
    }
    out
}

/// Encodes consecutive clips of `F` frames and concatenates them (plain FSE ordering).
pub fn encode_group(frames: &[Frame], params: &ClipEncoderParams, cfg: &EncodingConfig) -> Result<EmbeddingSeq> {
    let s = &params.shape;
    if s.frames_per_clip != cfg.frames_per_clip || s.tokens_per_clip != cfg.tokens_per_clip || s.embed_dim != cfg.embed_dim {
        return Err(shape("encoder parameters do not match the encoding config"));
    }
    if frames.is_empty() || !frames.len().is_multiple_of(cfg.frames_per_clip) {
        return Err(shape(format!(
            "group of {} frames is not a positive multiple of {}",
            frames.len(),
            cfg.frames_per_clip
        )));
    }
    let mut rows = Vec::with_capacity(frames.len() / cfg.frames_per_clip * cfg.tokens_per_clip * cfg.embed_dim);
    for clip in frames.chunks_exact(cfg.frames_per_clip) {
        rows.extend(encode_clip(clip, params)?);
    }
    EmbeddingSeq::sequential(rows, cfg.embed_dim)
}
