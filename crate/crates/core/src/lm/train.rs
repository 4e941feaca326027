use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::par::Execution;
use crate::rng;

use super::model::{loss_and_grads, Example};
use super::params::ToyLmParams;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    #[serde(default)]
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            steps: 2000,
            batch_size: 16,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(1.0),
            execution: Execution::Parallel,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            bad.push("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            bad.push("batch_size must be >= 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            bad.push("betas must lie in [0, 1)");
        }
        if !(self.eps > 0.0) {
            bad.push("eps must be positive");
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            bad.push("clip_norm must be positive");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(invalid(bad.join("; ")))
        }
    }
}

/// Adaptive-moment optimiser state.
pub struct Adam {
    m: ToyLmParams,
    v: ToyLmParams,
    t: u64,
}

impl Adam {
    pub fn new(params: &ToyLmParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ToyLmParams, grads: &ToyLmParams, cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        let gs = grads.tensors();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, g), m), v) in params.tensors_mut().into_iter().zip(gs).zip(ms).zip(vs) {
            for i in 0..p.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.eps);
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// `(step, mean batch loss before the update)`.
    pub losses: Vec<(usize, f64)>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,loss\n");
        for (step, loss) in &self.losses {
            s.push_str(&format!("{step},{loss}\n"));
        }
        s
    }
}

/// Batch indices for `step`; a pure function of `(seed, step)`.
pub fn batch_indices(seed: u64, step: usize, batch_size: usize, dataset_len: usize) -> Vec<usize> {
    let mut r = rng::stream(seed, "train-batch", step as u64);
    (0..batch_size).map(|_| r.random_range(0..dataset_len)).collect()
}

/// Trains `params` in place with Adam.
pub fn train(dataset: &[Example], cfg: &TrainConfig, params: &mut ToyLmParams) -> Result<TrainReport> {
    cfg.validate()?;
    let mut report = TrainReport::default();
    if cfg.steps == 0 {
        return Ok(report);
    }
    if dataset.is_empty() {
        return Err(invalid("training dataset is empty"));
    }
    let mut opt = Adam::new(params);
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for step in 0..cfg.steps {
        batch.clear();
        batch.extend(
            batch_indices(cfg.seed, step, cfg.batch_size, dataset.len())
                .into_iter()
                .map(|i| dataset[i].clone()),
        );
        let (loss, mut grads) = loss_and_grads(&batch, params, cfg.execution)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        if let Some(clip) = cfg.clip_norm {
            let norm = grads.l2_norm();
            if norm > clip {
                let s = clip / norm;
                grads.for_each_mut(|_, t| t.iter_mut().for_each(|x| *x *= s));
            }
        }
        opt.step(params, &grads, cfg);
        report.losses.push((step, loss));
    }
    if !params.is_finite() {
        return Err(Error::Divergence {
            step: cfg.steps,
            loss: f64::NAN,
        });
    }
    Ok(report)
}
