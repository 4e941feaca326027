use serde::{Deserialize, Serialize};

use super::prompt::{build_prompt, match_answer};
use super::report::{accuracy, EvalReport, SampleRecord};
use crate::bench::BenchSample;
use crate::encoder::ClipEncoderParams;
use crate::error::{invalid, Result};
use crate::lm::{generate, Example, ToyLmParams};
use crate::par::{self, Execution};
use crate::pipeline::{encode_frames, EmbeddingSeq};
use crate::schedule::{
    baseline_sample_indices, interleave_factor, make_schedule, uniform_sample_indices, EncodingConfig, BASELINE_FRAMES,
};
use crate::vocab;

/// Everything needed to answer a question about a frame stream.
#[derive(Clone, Debug)]
pub struct QaModel {
    pub encoding: EncodingConfig,
    pub encoder: ClipEncoderParams,
    pub lm: ToyLmParams,
}

/// How frames are chosen and encoded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "clips")]
pub enum Strategy {
    /// The full schedule with `gamma`-way interleaving.
    FseIfe,
    /// The first `max_clips` clips of the full schedule, no interleaving.
    FseTruncated,
    /// A fixed number of frames spread over the whole video.
    Baseline,
    /// Exactly `n` clips spread over the whole video, no interleaving.
    Clips(usize),
}

/// Frame indices and interleaving factor for one strategy.
pub fn select_frames(sample: &BenchSample, strategy: Strategy, cfg: &EncodingConfig) -> Result<(Vec<usize>, usize)> {
    let meta = &sample.stream.meta;
    match strategy {
        Strategy::FseIfe => {
            let plan = make_schedule(meta, cfg)?;
            Ok((plan.frame_indices, plan.gamma))
        }
        Strategy::FseTruncated => {
            let plan = make_schedule(meta, cfg)?;
            let keep = plan.frame_indices.len().min(cfg.max_clips * cfg.frames_per_clip);
            Ok((plan.frame_indices[..keep].to_vec(), 1))
        }
        Strategy::Baseline => {
            if !BASELINE_FRAMES.is_multiple_of(cfg.frames_per_clip) {
                return Err(invalid(format!(
                    "the {BASELINE_FRAMES}-frame baseline needs a clip length dividing it, got {}",
                    cfg.frames_per_clip
                )));
            }
            Ok((baseline_sample_indices(meta.total_frames, BASELINE_FRAMES)?, 1))
        }
        Strategy::Clips(n) => {
            let frames = n * cfg.frames_per_clip;
            if n == 0 || frames > meta.total_frames {
                return Err(invalid(format!(
                    "{n} clips need {frames} frames, video has {}",
                    meta.total_frames
                )));
            }
            Ok((uniform_sample_indices(meta.total_frames, frames)?, 1))
        }
    }
}

/// Encoded prefix plus whether it contains any original/needle frame.
pub fn encode_sample(
    model: &QaModel,
    sample: &BenchSample,
    strategy: Strategy,
    exec: Execution,
) -> Result<(EmbeddingSeq, bool)> {
    let (idx, gamma) = select_frames(sample, strategy, &model.encoding)?;
    let span = sample.original_frames();
    let visible = idx.iter().any(|i| span.contains(i));
    let seq = encode_frames(&sample.stream, &idx, gamma, &model.encoder, &model.encoding, exec)?;
    Ok((seq, visible))
}

/// Teacher-forced training sequence: prompt, answer letter, end of sequence.
pub fn qa_example(prefix: EmbeddingSeq, sample: &BenchSample) -> Result<Example> {
    let mut tokens = build_prompt(sample)?.tokens();
    let last = tokens.len() - 1;
    tokens.push(vocab::option_token(sample.answer_index));
    Ok(Example {
        prefix,
        targets: vec![(last, vocab::option_token(sample.answer_index)), (last + 1, vocab::EOS)],
        tokens,
    })
}

/// Longest answer the toy model may generate.
const MAX_ANSWER_TOKENS: usize = 4;

pub fn answer(model: &QaModel, sample: &BenchSample, strategy: Strategy) -> Result<SampleRecord> {
    let (prefix, visible) = encode_sample(model, sample, strategy, Execution::Sequential)?;
    let prompt = build_prompt(sample)?;
    let out = generate(&prefix, &prompt.tokens(), &model.lm, MAX_ANSWER_TOKENS, vocab::EOS)?;
    let generated = vocab::detokenize(&out);
    let matched = match_answer(&generated, &sample.options);
    Ok(SampleRecord {
        name: sample.name.clone(),
        subset_tag: sample.subset_tag,
        gold: sample.answer_index,
        predicted: matched.map(|m| m.0),
        rule: matched.map(|m| m.1),
        generated,
        original_visible: visible,
    })
}

/// Answers every sample (in parallel when enabled) and aggregates in input order.
pub fn evaluate(model: &QaModel, dataset: &[BenchSample], strategy: Strategy, exec: Execution) -> Result<EvalReport> {
    let records = par::map(exec, dataset, |s| answer(model, s, strategy));
    accuracy(records.into_iter().collect::<Result<_>>()?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipPoint {
    pub clips: usize,
    pub accuracy: Option<f64>,
    /// Why the point was not evaluated.
    pub skipped: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipSweep {
    pub points: Vec<ClipPoint>,
}

impl ClipSweep {
    pub fn at(&self, clips: usize) -> Option<f64> {
        self.points.iter().find(|p| p.clips == clips).and_then(|p| p.accuracy)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("clips,accuracy\n");
        for p in &self.points {
            let a = p.accuracy.map(|a| format!("{a:.1}")).unwrap_or_default();
            s.push_str(&format!("{},{a}\n", p.clips));
        }
        s
    }
}

/// Accuracy with exactly `n` uniformly spread clips, for each requested `n`.
pub fn sweep_clips(model: &QaModel, dataset: &[BenchSample], clip_counts: &[usize], exec: Execution) -> Result<ClipSweep> {
    if dataset.is_empty() {
        return Err(invalid("clip sweep over an empty dataset"));
    }
    let min_frames = dataset.iter().map(|s| s.stream.len()).min().unwrap_or(0);
    let mut points = Vec::with_capacity(clip_counts.len());
    for &n in clip_counts {
        let needed = n * model.encoding.frames_per_clip;
        if n == 0 || needed > min_frames {
            points.push(ClipPoint {
                clips: n,
                accuracy: None,
                skipped: Some(format!("{n} clips need {needed} frames, shortest video has {min_frames}")),
            });
            continue;
        }
        let report = evaluate(model, dataset, Strategy::Clips(n), exec)?;
        points.push(ClipPoint { clips: n, accuracy: Some(report.average), skipped: None });
    }
    Ok(ClipSweep { points })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IfePoint {
    pub length_s: f64,
    pub gamma: usize,
    pub ife: f64,
    pub truncated: f64,
    pub baseline: f64,
    /// Truncated accuracy restricted to samples whose needle lies outside the truncated window.
    pub truncated_outside: Option<f64>,
    pub outside_count: usize,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IfeSweep {
    pub points: Vec<IfePoint>,
}

impl IfeSweep {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("length_s,gamma,ife,truncated,baseline,truncated_outside,outside_count,samples\n");
        for p in &self.points {
            let out = p.truncated_outside.map(|a| format!("{a:.1}")).unwrap_or_default();
            s.push_str(&format!(
                "{},{},{:.1},{:.1},{:.1},{out},{},{}\n",
                p.length_s, p.gamma, p.ife, p.truncated, p.baseline, p.outside_count, p.samples
            ));
        }
        s
    }
}

/// Paired evaluation with and without interleaving, one dataset per length.
///
/// `gammas[i]` must equal the interleaving factor implied by the length of
/// `datasets[i]`.
pub fn sweep_lengths_ife(
    model: &QaModel,
    datasets: &[Vec<BenchSample>],
    gammas: &[usize],
    exec: Execution,
) -> Result<IfeSweep> {
    if datasets.len() != gammas.len() {
        return Err(invalid(format!("{} datasets but {} gammas", datasets.len(), gammas.len())));
    }
    let mut points = Vec::new();
    for (data, &gamma) in datasets.iter().zip(gammas) {
        let first = data.first().ok_or_else(|| invalid("IFE sweep over an empty dataset"))?;
        let length_s = first.stream.meta.duration_s;
        if data.iter().any(|s| s.stream.meta.duration_s != length_s) {
            return Err(invalid("every sample of one sweep point must share a length"));
        }
        let expected = interleave_factor(length_s, &model.encoding)?;
        if expected != gamma {
            return Err(invalid(format!("length {length_s} s implies gamma {expected}, got {gamma}")));
        }
        let ife = evaluate(model, data, Strategy::FseIfe, exec)?;
        let truncated = evaluate(model, data, Strategy::FseTruncated, exec)?;
        let baseline = evaluate(model, data, Strategy::Baseline, exec)?;
        points.push(IfePoint {
            length_s,
            gamma,
            ife: ife.average,
            truncated: truncated.average,
            baseline: baseline.average,
            truncated_outside: truncated.accuracy_where(|r| !r.original_visible),
            outside_count: truncated.records.iter().filter(|r| !r.original_visible).count(),
            samples: data.len(),
        });
    }
    Ok(IfeSweep { points })
}
