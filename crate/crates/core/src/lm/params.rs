use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng;

/// Architecture of the toy decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LmConfig {
    pub vocab: usize,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub mlp_hidden: usize,
    /// Rows of the learned positional table.
    pub max_positions: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            vocab: 64,
            d_model: 64,
            heads: 2,
            layers: 2,
            mlp_hidden: 256,
            max_positions: 1152,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        for (name, v) in [
            ("vocab", self.vocab),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("layers", self.layers),
            ("mlp_hidden", self.mlp_hidden),
            ("max_positions", self.max_positions),
        ] {
            if v == 0 {
                bad.push(format!("{name} must be >= 1"));
            }
        }
        if self.heads > 0 && !self.d_model.is_multiple_of(self.heads) {
            bad.push(format!("d_model {} not divisible by heads {}", self.d_model, self.heads));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(invalid(bad.join("; ")))
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub ln1_gain: Vec<f64>,
    pub ln1_bias: Vec<f64>,
    /// `d x d`, input-major: `q = h * w_query`.
    pub w_query: Vec<f64>,
    pub w_key: Vec<f64>,
    pub w_value: Vec<f64>,
    pub w_attn_out: Vec<f64>,
    pub b_attn_out: Vec<f64>,
    pub ln2_gain: Vec<f64>,
    pub ln2_bias: Vec<f64>,
    /// `d x hidden`.
    pub w_fc: Vec<f64>,
    pub b_fc: Vec<f64>,
    /// `hidden x d`.
    pub w_proj: Vec<f64>,
    pub b_proj: Vec<f64>,
}

/// All trainable tensors of the toy decoder. Gradients use the same type.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyLmParams {
    pub config: LmConfig,
    /// `vocab x d`.
    pub token_embedding: Vec<f64>,
    /// `max_positions x d`.
    pub position_embedding: Vec<f64>,
    pub layers: Vec<LayerParams>,
    pub lnf_gain: Vec<f64>,
    pub lnf_bias: Vec<f64>,
    /// `d x vocab`.
    pub w_out: Vec<f64>,
    pub b_out: Vec<f64>,
}

fn normal(n: usize, std: f64, r: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| r.sample::<f64, _>(StandardNormal) * std).collect()
}

/// Initialisation scale of the embedding tables.
const EMBED_STD: f64 = 0.1;

impl ToyLmParams {
    /// Seeded initialisation. Weight values are rounded to `f32` so that a
    /// freshly initialised model survives a checkpoint round trip unchanged.
    pub fn init(config: LmConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let LmConfig {
            vocab: v,
            d_model: d,
            mlp_hidden: h,
            max_positions: p,
            layers: l,
            ..
        } = config;
        let mut r = rng::stream(seed, "toy-lm-init", 0);
        let w_d = 1.0 / (d as f64).sqrt();
        let w_h = 1.0 / (h as f64).sqrt();
        let resid = 1.0 / ((2 * l) as f64).sqrt();
        let mut params = Self {
            config,
            token_embedding: normal(v * d, EMBED_STD, &mut r),
            position_embedding: normal(p * d, EMBED_STD, &mut r),
            layers: (0..l)
                .map(|_| LayerParams {
                    ln1_gain: vec![1.0; d],
                    ln1_bias: vec![0.0; d],
                    w_query: normal(d * d, w_d, &mut r),
                    w_key: normal(d * d, w_d, &mut r),
                    w_value: normal(d * d, w_d, &mut r),
                    w_attn_out: normal(d * d, w_d * resid, &mut r),
                    b_attn_out: vec![0.0; d],
                    ln2_gain: vec![1.0; d],
                    ln2_bias: vec![0.0; d],
                    w_fc: normal(d * h, w_d, &mut r),
                    b_fc: vec![0.0; h],
                    w_proj: normal(h * d, w_h * resid, &mut r),
                    b_proj: vec![0.0; d],
                })
                .collect(),
            lnf_gain: vec![1.0; d],
            lnf_bias: vec![0.0; d],
            w_out: normal(d * v, w_d, &mut r),
            b_out: vec![0.0; v],
        };
        params.for_each_mut(|_, t| {
            for x in t.iter_mut() {
                *x = *x as f32 as f64;
            }
        });
        Ok(params)
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_mut(|_, t| t.iter_mut().for_each(|x| *x = 0.0));
        z
    }

    /// `(name, shape)` of every tensor in canonical order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let c = &self.config;
        let (d, h) = (c.d_model, c.mlp_hidden);
        let mut out = vec![
            ("token_embedding".to_string(), vec![c.vocab, d]),
            ("position_embedding".to_string(), vec![c.max_positions, d]),
        ];
        for i in 0..c.layers {
            for (n, s) in [
                ("ln1_gain", vec![d]),
                ("ln1_bias", vec![d]),
                ("w_query", vec![d, d]),
                ("w_key", vec![d, d]),
                ("w_value", vec![d, d]),
                ("w_attn_out", vec![d, d]),
                ("b_attn_out", vec![d]),
                ("ln2_gain", vec![d]),
                ("ln2_bias", vec![d]),
                ("w_fc", vec![d, h]),
                ("b_fc", vec![h]),
                ("w_proj", vec![h, d]),
                ("b_proj", vec![d]),
            ] {
                out.push((format!("layers.{i}.{n}"), s));
            }
        }
        out.push(("lnf_gain".into(), vec![d]));
        out.push(("lnf_bias".into(), vec![d]));
        out.push(("w_out".into(), vec![d, c.vocab]));
        out.push(("b_out".into(), vec![c.vocab]));
        out
    }

    /// Tensors in canonical order (matching [`Self::layout`]).
    pub fn tensors(&self) -> Vec<&Vec<f64>> {
        let mut out = vec![&self.token_embedding, &self.position_embedding];
        for l in &self.layers {
            out.extend([
                &l.ln1_gain,
                &l.ln1_bias,
                &l.w_query,
                &l.w_key,
                &l.w_value,
                &l.w_attn_out,
                &l.b_attn_out,
                &l.ln2_gain,
                &l.ln2_bias,
                &l.w_fc,
                &l.b_fc,
                &l.w_proj,
                &l.b_proj,
            ]);
        }
        out.extend([&self.lnf_gain, &self.lnf_bias, &self.w_out, &self.b_out]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = vec![&mut self.token_embedding, &mut self.position_embedding];
        for l in &mut self.layers {
            out.extend([
                &mut l.ln1_gain,
                &mut l.ln1_bias,
                &mut l.w_query,
                &mut l.w_key,
                &mut l.w_value,
                &mut l.w_attn_out,
                &mut l.b_attn_out,
                &mut l.ln2_gain,
                &mut l.ln2_bias,
                &mut l.w_fc,
                &mut l.b_fc,
                &mut l.w_proj,
                &mut l.b_proj,
            ]);
        }
        out.extend([
            &mut self.lnf_gain,
            &mut self.lnf_bias,
            &mut self.w_out,
            &mut self.b_out,
        ]);
        out
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(usize, &mut Vec<f64>)) {
        for (i, t) in self.tensors_mut().into_iter().enumerate() {
            f(i, t);
        }
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        let src = other.tensors();
        for (dst, s) in self.tensors_mut().into_iter().zip(src) {
            for (d, v) in dst.iter_mut().zip(s) {
                *d += scale * v;
            }
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }
}

/// Checkpoint header stored ahead of the `f32` payload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub dims: LmConfig,
    pub seed: u64,
    pub step: usize,
    pub tensors: Vec<(String, Vec<usize>)>,
    /// Free-form run configuration echoed by the writer.
    #[serde(default)]
    pub config: serde_json::Value,
}

pub const CHECKPOINT_FORMAT: &str = "toy-lm-v1";

impl ToyLmParams {
    pub fn checkpoint_bytes(&self, seed: u64, step: usize, config: serde_json::Value) -> Result<Vec<u8>> {
        let header = CheckpointHeader {
            format: CHECKPOINT_FORMAT.into(),
            dims: self.config,
            seed,
            step,
            tensors: self.layout(),
            config,
        };
        let payload: Vec<f32> = self
            .tensors()
            .iter()
            .flat_map(|t| t.iter().map(|&x| x as f32))
            .collect();
        crate::io::encode(&header, &payload)
    }

    pub fn save_checkpoint(&self, path: &Path, seed: u64, step: usize, config: serde_json::Value) -> Result<()> {
        crate::io::write_bytes(path, &self.checkpoint_bytes(seed, step, config)?)
    }

    pub fn load_checkpoint(path: &Path) -> Result<(Self, CheckpointHeader)> {
        let (header, payload): (CheckpointHeader, Vec<f32>) = crate::io::read(path)?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(Error::Data(format!("{}: unknown checkpoint format {}", path.display(), header.format)));
        }
        let mut params = Self::init(header.dims, 0)?;
        if params.layout() != header.tensors {
            return Err(Error::Data(format!("{}: tensor layout does not match dims", path.display())));
        }
        if payload.len() != params.num_params() {
            return Err(Error::Data(format!(
                "{}: payload holds {} values, expected {}",
                path.display(),
                payload.len(),
                params.num_params()
            )));
        }
        let mut off = 0;
        params.for_each_mut(|_, t| {
            for x in t.iter_mut() {
                *x = payload[off] as f64;
                off += 1;
            }
        });
        Ok((params, header))
    }
}
