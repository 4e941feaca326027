//! Clip-count arithmetic and frame selection.
//!
//! Every long video is cut into clips of `frames_per_clip` frames, one clip per
//! `frames_per_clip` seconds (rounded up), so at least one frame per second is
//! kept. When the clip count exceeds what the model saw in training
//! (`max_clips`), the sampled frames are split round-robin into `gamma` groups
//! that each fit the training budget.
//!
//! Durations are `f64` seconds. Ceilings are taken exactly on the binary value
//! of the duration, so `160.0 / 16` is `10`, never `11`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Clip geometry shared by the scheduler, encoder and model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodingConfig {
    /// Frames encoded together as one clip.
    pub frames_per_clip: usize,
    /// Embeddings produced per clip.
    pub tokens_per_clip: usize,
    /// Largest clip count seen during training.
    pub max_clips: usize,
    /// Embedding width.
    pub embed_dim: usize,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        Self {
            frames_per_clip: 16,
            tokens_per_clip: 96,
            max_clips: 10,
            embed_dim: 64,
        }
    }
}

impl EncodingConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.frames_per_clip == 0 {
            bad.push("frames_per_clip");
        }
        if self.tokens_per_clip == 0 {
            bad.push("tokens_per_clip");
        }
        if self.max_clips == 0 {
            bad.push("max_clips");
        }
        if self.embed_dim == 0 {
            bad.push("embed_dim");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(invalid(format!("encoding config fields must be >= 1: {}", bad.join(", "))))
        }
    }

    /// Positional span available to video embeddings: `max_clips * tokens_per_clip`.
    pub fn position_budget(&self) -> usize {
        self.max_clips * self.tokens_per_clip
    }
}

/// Duration and frame-rate of a video.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub id: String,
    pub duration_s: f64,
    pub fps: f64,
    pub total_frames: usize,
}

impl VideoMeta {
    /// Builds metadata with `total_frames = round(duration * fps)`.
    pub fn new(id: impl Into<String>, duration_s: f64, fps: f64) -> Result<Self> {
        check_duration(duration_s)?;
        if !(fps.is_finite() && fps > 0.0) {
            return Err(invalid(format!("fps must be positive, got {fps}")));
        }
        let total_frames = (duration_s * fps).round() as usize;
        let meta = Self {
            id: id.into(),
            duration_s,
            fps,
            total_frames,
        };
        meta.validate()?;
        Ok(meta)
    }

    pub fn validate(&self) -> Result<()> {
        check_duration(self.duration_s)?;
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(invalid(format!("fps must be positive, got {}", self.fps)));
        }
        if self.total_frames == 0 {
            return Err(invalid(format!("video {} has no frames", self.id)));
        }
        let expected = self.duration_s * self.fps;
        if (self.total_frames as f64 - expected).abs() > 1.0 + 1e-9 {
            return Err(invalid(format!(
                "video {}: total_frames {} inconsistent with duration*fps = {expected}",
                self.id, self.total_frames
            )));
        }
        Ok(())
    }
}

/// The derived sampling schedule for one video.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchedulePlan {
    pub gamma: usize,
    pub sampled_frames: usize,
    pub clip_count: usize,
    pub frame_indices: Vec<usize>,
    pub groups: Vec<Vec<usize>>,
}

impl SchedulePlan {
    pub fn clips_per_group(&self) -> usize {
        self.clip_count / self.gamma
    }
}

fn check_duration(duration_s: f64) -> Result<()> {
    if duration_s.is_finite() && duration_s > 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("duration must be positive and finite, got {duration_s}")))
    }
}

fn check_count(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        Err(invalid(format!("{name} must be >= 1")))
    } else {
        Ok(())
    }
}

/// Smallest `n` with `n * denom >= value`, exact for every finite `value > 0`.
///
/// Products of integers below 2^53 are exact in `f64`, so the correction loop
/// compares rationals without rounding.
fn ceil_div_exact(value: f64, denom: usize) -> usize {
    let d = denom as f64;
    let mut n = (value / d).ceil().max(1.0) as usize;
    while (n as f64) * d < value {
        n += 1;
    }
    while n > 1 && ((n - 1) as f64) * d >= value {
        n -= 1;
    }
    n
}

/// Clips needed to keep at least one frame per second: `ceil(duration / frames_per_clip)`.
pub fn num_clips(duration_s: f64, frames_per_clip: usize) -> Result<usize> {
    check_duration(duration_s)?;
    check_count("frames_per_clip", frames_per_clip)?;
    Ok(ceil_div_exact(duration_s, frames_per_clip))
}

/// Positional repetition factor: `ceil(num_clips / max_clips)`.
pub fn interleave_factor(duration_s: f64, cfg: &EncodingConfig) -> Result<usize> {
    cfg.validate()?;
    let n = num_clips(duration_s, cfg.frames_per_clip)?;
    Ok(n.div_ceil(cfg.max_clips))
}

/// Clip count after rounding up to a multiple of `gamma`.
pub fn interleaved_clip_count(duration_s: f64, cfg: &EncodingConfig) -> Result<usize> {
    let n = num_clips(duration_s, cfg.frames_per_clip)?;
    let gamma = interleave_factor(duration_s, cfg)?;
    Ok(n.div_ceil(gamma) * gamma)
}

/// Frames to sample: `interleaved_clip_count * frames_per_clip`.
pub fn sampled_frame_count(duration_s: f64, cfg: &EncodingConfig) -> Result<usize> {
    Ok(interleaved_clip_count(duration_s, cfg)? * cfg.frames_per_clip)
}

/// Center-of-stratum uniform sampling: index `i` is `floor((i + 0.5) * total / s)`.
///
/// Indices repeat when `s > total_frames`.
pub fn uniform_sample_indices(total_frames: usize, s: usize) -> Result<Vec<usize>> {
    check_count("total_frames", total_frames)?;
    check_count("sample count", s)?;
    let total = total_frames as u128;
    let denom = 2 * s as u128;
    Ok((0..s as u128)
        .map(|i| (((2 * i + 1) * total / denom) as usize).min(total_frames - 1))
        .collect())
}

/// Round-robin split: group `g` takes positions `g, g + gamma, g + 2*gamma, ...`.
pub fn split_groups<T: Clone>(items: &[T], gamma: usize) -> Result<Vec<Vec<T>>> {
    check_count("gamma", gamma)?;
    if !items.len().is_multiple_of(gamma) {
        return Err(invalid(format!(
            "cannot split {} items into {gamma} equal groups",
            items.len()
        )));
    }
    Ok((0..gamma)
        .map(|g| items.iter().skip(g).step_by(gamma).cloned().collect())
        .collect())
}

/// Inverse of [`split_groups`].
pub fn merge_groups<T: Clone>(groups: &[Vec<T>]) -> Result<Vec<T>> {
    let Some(first) = groups.first() else {
        return Ok(Vec::new());
    };
    if groups.iter().any(|g| g.len() != first.len()) {
        return Err(invalid("groups have unequal lengths"));
    }
    let mut out = Vec::with_capacity(first.len() * groups.len());
    for p in 0..first.len() {
        for g in groups {
            out.push(g[p].clone());
        }
    }
    Ok(out)
}

/// Frame count of the fixed-budget comparison sampler.
pub const BASELINE_FRAMES: usize = 16;

/// Fixed-budget sampler used by the comparison baseline: `k` frames regardless of length.
pub fn baseline_sample_indices(total_frames: usize, k: usize) -> Result<Vec<usize>> {
    uniform_sample_indices(total_frames, k)
}

/// Composes the clip arithmetic, uniform sampling and the group split for one video.
pub fn make_schedule(meta: &VideoMeta, cfg: &EncodingConfig) -> Result<SchedulePlan> {
    meta.validate()?;
    cfg.validate()?;
    let gamma = interleave_factor(meta.duration_s, cfg)?;
    let clip_count = interleaved_clip_count(meta.duration_s, cfg)?;
    let sampled_frames = clip_count * cfg.frames_per_clip;
    let frame_indices = uniform_sample_indices(meta.total_frames, sampled_frames)?;
    let groups = split_groups(&frame_indices, gamma)?;
    Ok(SchedulePlan {
        gamma,
        sampled_frames,
        clip_count,
        frame_indices,
        groups,
    })
}
