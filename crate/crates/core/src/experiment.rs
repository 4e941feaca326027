//! Needle-retrieval experiment: train on short videos, test on long ones.
//!
//! The model is trained with plain frame-scalable encoding on videos of at
//! most `max_clips` clips, then evaluated on videos two and four times longer
//! with three strategies (full schedule with interleaving, the truncated
//! schedule, and a fixed 16-frame baseline), and with a sweep over the number
//! of uniformly spread clips.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bench::{make_needle_dataset_with_pool, BenchSample, NeedleSpec};
use crate::encoder::{ClipEncoderParams, EncoderVariant};
use crate::error::{invalid, Result};
use crate::eval::{encode_sample, evaluate, qa_example, sweep_clips, sweep_lengths_ife, ClipSweep, IfeSweep, QaModel, Strategy};
use crate::lm::{train, Example, LmConfig, ToyLmParams, TrainConfig, TrainReport};
use crate::par::{self, Execution};
use crate::rng;
use crate::schedule::{interleave_factor, EncodingConfig};
use crate::vocab;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub encoding: EncodingConfig,
    pub needle: NeedleSpec,
    pub lm: LmConfig,
    pub train: TrainConfig,
    /// Training samples per clip count `1..=max_clips`.
    pub train_per_length: usize,
    pub eval_samples: usize,
    /// Evaluation lengths in seconds; each beyond the training budget.
    pub eval_lengths: Vec<f64>,
    pub sweep_length: f64,
    pub sweep_clips: Vec<usize>,
    #[serde(default)]
    pub execution: Execution,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let encoding = EncodingConfig { frames_per_clip: 8, tokens_per_clip: 8, max_clips: 10, embed_dim: 32 };
        Self {
            seed: 17,
            encoding,
            needle: NeedleSpec::default(),
            lm: LmConfig {
                vocab: vocab::CLASS_BASE as usize + 4,
                d_model: 32,
                heads: 2,
                layers: 2,
                mlp_hidden: 64,
                max_positions: 112,
            },
            train: TrainConfig {
                learning_rate: 3e-3,
                steps: 600,
                batch_size: 16,
                seed: 17,
                ..TrainConfig::default()
            },
            train_per_length: 48,
            eval_samples: 512,
            eval_lengths: vec![160.0, 320.0],
            sweep_length: 320.0,
            sweep_clips: vec![1, 2, 4, 6, 8, 10],
            execution: Execution::Parallel,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoding.validate()?;
        self.needle.validate()?;
        self.lm.validate()?;
        self.train.validate()?;
        let mut bad = Vec::new();
        if self.lm.d_model != self.encoding.embed_dim {
            bad.push(format!(
                "lm.d_model {} must equal encoding.embed_dim {}",
                self.lm.d_model, self.encoding.embed_dim
            ));
        }
        if vocab::class_capacity(self.lm.vocab) < self.needle.classes {
            bad.push(format!("lm.vocab {} cannot hold {} classes", self.lm.vocab, self.needle.classes));
        }
        if self.train_per_length == 0 || self.eval_samples == 0 {
            bad.push("train_per_length and eval_samples must be >= 1".into());
        }
        let budget = self.budget_s();
        if self.needle.needle_s >= self.encoding.frames_per_clip as f64 {
            bad.push("needle must be shorter than one clip of training video".into());
        }
        if self.eval_lengths.iter().any(|&l| !(l > budget)) {
            bad.push(format!("eval lengths must exceed the training budget of {budget} s"));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(invalid(bad.join("; ")))
        }
    }

    /// Longest training video, in seconds.
    pub fn budget_s(&self) -> f64 {
        (self.encoding.max_clips * self.encoding.frames_per_clip) as f64
    }

    pub fn init_model(&self) -> Result<QaModel> {
        Ok(QaModel {
            encoding: self.encoding,
            encoder: ClipEncoderParams::for_config(
                &self.encoding,
                EncoderVariant::Mock,
                self.needle.frame_dim,
                rng::derive_seed(self.seed, "encoder", 0),
            )?,
            lm: ToyLmParams::init(self.lm, rng::derive_seed(self.seed, "lm", 0))?,
        })
    }
}

/// Needle videos of every clip count from 1 to `max_clips`.
pub fn training_set(cfg: &ExperimentConfig, pool: &crate::video::FrameStream) -> Result<Vec<BenchSample>> {
    let mut out = Vec::new();
    for k in 1..=cfg.encoding.max_clips {
        let len = (k * cfg.encoding.frames_per_clip) as f64;
        out.extend(make_needle_dataset_with_pool(
            cfg.train_per_length,
            len,
            &cfg.needle,
            rng::derive_seed(cfg.seed, "train-set", k as u64),
            pool,
            cfg.execution,
        )?);
    }
    Ok(out)
}

pub fn training_examples(model: &QaModel, samples: &[BenchSample], exec: Execution) -> Result<Vec<Example>> {
    par::map(exec, samples, |s| {
        let (prefix, _) = encode_sample(model, s, Strategy::FseIfe, Execution::Sequential)?;
        qa_example(prefix, s)
    })
    .into_iter()
    .collect()
}

/// Trains the language model in place; the encoder stays fixed.
pub fn train_model(cfg: &ExperimentConfig, model: &mut QaModel, pool: &crate::video::FrameStream) -> Result<TrainReport> {
    let samples = training_set(cfg, pool)?;
    let examples = training_examples(model, &samples, cfg.execution)?;
    train(&examples, &cfg.train, &mut model.lm)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub final_loss: f64,
    /// Accuracy on fresh videos within the training budget.
    pub in_budget_accuracy: f64,
    pub ife: IfeSweep,
    pub clips: ClipSweep,
    pub train_seconds: f64,
    pub eval_seconds: f64,
}

/// Evaluation datasets, one per length in `cfg.eval_lengths`.
pub fn eval_sets(cfg: &ExperimentConfig, pool: &crate::video::FrameStream) -> Result<Vec<Vec<BenchSample>>> {
    cfg.eval_lengths
        .iter()
        .enumerate()
        .map(|(i, &len)| {
            make_needle_dataset_with_pool(
                cfg.eval_samples,
                len,
                &cfg.needle,
                rng::derive_seed(cfg.seed, "eval-set", i as u64),
                pool,
                cfg.execution,
            )
        })
        .collect()
}

/// Runs both sweeps with an already trained model.
pub fn evaluate_model(
    cfg: &ExperimentConfig,
    model: &QaModel,
    pool: &crate::video::FrameStream,
) -> Result<(f64, IfeSweep, ClipSweep)> {
    let in_budget = make_needle_dataset_with_pool(
        cfg.eval_samples,
        cfg.budget_s(),
        &cfg.needle,
        rng::derive_seed(cfg.seed, "in-budget-set", 0),
        pool,
        cfg.execution,
    )?;
    let in_budget = evaluate(model, &in_budget, Strategy::FseIfe, cfg.execution)?.average;

    let sets = eval_sets(cfg, pool)?;
    let gammas = cfg
        .eval_lengths
        .iter()
        .map(|&l| interleave_factor(l, &cfg.encoding))
        .collect::<Result<Vec<_>>>()?;
    let ife = sweep_lengths_ife(model, &sets, &gammas, cfg.execution)?;

    let sweep_set = make_needle_dataset_with_pool(
        cfg.eval_samples,
        cfg.sweep_length,
        &cfg.needle,
        rng::derive_seed(cfg.seed, "sweep-set", 0),
        pool,
        cfg.execution,
    )?;
    let clips = sweep_clips(model, &sweep_set, &cfg.sweep_clips, cfg.execution)?;
    Ok((in_budget, ife, clips))
}

pub fn run(cfg: &ExperimentConfig) -> Result<(QaModel, TrainReport, ExperimentReport)> {
    cfg.validate()?;
    let pool = cfg.needle.pool()?;
    let mut model = cfg.init_model()?;
    let t = Instant::now();
    let losses = train_model(cfg, &mut model, &pool)?;
    let train_seconds = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let (in_budget_accuracy, ife, clips) = evaluate_model(cfg, &model, &pool)?;
    let report = ExperimentReport {
        config: cfg.clone(),
        final_loss: losses.losses.last().map(|l| l.1).unwrap_or(f64::NAN),
        in_budget_accuracy,
        ife,
        clips,
        train_seconds,
        eval_seconds: t.elapsed().as_secs_f64(),
    };
    Ok((model, losses, report))
}
