//! Long-video benchmark construction.
//!
//! Short videos are padded to a target length by splicing them into a segment
//! of a long distractor video. Both the distractor start and the insertion
//! point are derived from the video's file name, so every build is
//! reproducible without a random seed. The same machinery produces synthetic
//! needle-retrieval datasets: a short clip of a known class hidden somewhere
//! in a long distractor stream.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::par::{self, Execution};
use crate::rng;
use crate::schedule::VideoMeta;
use crate::video::{Frame, FrameStream, LABEL_DISTRACTOR, LABEL_NEEDLE_BASE};
use crate::vocab;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SubsetTag {
    /// Action sequence.
    AS,
    /// Action prediction.
    AP,
    /// Unexpected action.
    UA,
    /// Object interaction.
    OI,
    #[serde(rename = "synthetic")]
    Synthetic,
}

impl SubsetTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SubsetTag::AS => "AS",
            SubsetTag::AP => "AP",
            SubsetTag::UA => "UA",
            SubsetTag::OI => "OI",
            SubsetTag::Synthetic => "synthetic",
        }
    }
}

/// One extended-video multiple-choice item.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchSample {
    pub name: String,
    pub stream: FrameStream,
    pub question: String,
    pub options: Vec<String>,
    pub answer_index: usize,
    /// Where the original video starts inside the extended one (t1).
    pub insert_start_s: f64,
    pub original_len_s: f64,
    pub subset_tag: SubsetTag,
}

impl BenchSample {
    /// Frame range occupied by the original (or needle) video.
    pub fn original_frames(&self) -> std::ops::Range<usize> {
        let fps = self.stream.meta.fps;
        let start = (self.insert_start_s * fps).round() as usize;
        let len = self
            .stream
            .frames
            .iter()
            .skip(start)
            .take_while(|f| !f.is_distractor())
            .count();
        start..start + len
    }
}

/// `sum_i ord(c_i) * 31^(i mod 5)` over the characters of `name`.
///
/// Pure integer arithmetic with no intermediate reduction; callers reduce
/// the result with their own modulus.
pub fn hashstr(name: &str) -> u128 {
    const POWERS: [u128; 5] = [1, 31, 961, 29_791, 923_521];
    name.chars()
        .enumerate()
        .map(|(i, c)| c as u128 * POWERS[i % 5])
        .sum()
}

/// Result of splicing an original video into a distractor segment.
#[derive(Clone, Debug, PartialEq)]
pub struct Extension {
    pub stream: FrameStream,
    /// Distractor start in the pool, whole seconds (t0).
    pub distractor_start_s: u64,
    /// Insertion point in the distractor segment, whole seconds (t1).
    pub insert_s: u64,
    /// Frame index where the original begins.
    pub insert_frame: usize,
}

/// Pads `original` to exactly `target_s` seconds with a segment of `pool`.
///
/// The distractor start is `hashstr(id) mod max(1, floor(pool - (target - L)))`
/// and the insertion point `hashstr(id + ":insert") mod (floor(target - L) + 1)`,
/// both in whole seconds. The pool is resampled to the original's frame rate by
/// nearest frame.
pub fn extend_stream(original: &FrameStream, pool: &FrameStream, target_s: f64) -> Result<Extension> {
    original.validate()?;
    let name = &original.meta.id;
    let fps = original.meta.fps;
    let len_s = original.meta.duration_s;
    if !(target_s.is_finite() && len_s < target_s) {
        return Err(invalid(format!(
            "original {name} ({len_s} s) must be shorter than the target ({target_s} s)"
        )));
    }
    if pool.is_empty() || pool.frame_dim() != original.frame_dim() {
        return Err(Error::Data(format!(
            "distractor pool frame width {} does not match original width {}",
            pool.frame_dim(),
            original.frame_dim()
        )));
    }
    let span_s = target_s - len_s;
    let pool_s = pool.meta.duration_s;
    if pool_s < span_s {
        return Err(Error::Data(format!(
            "distractor pool of {pool_s} s cannot supply {span_s} s"
        )));
    }
    let total = (target_s * fps).round() as usize;
    let needed = total.checked_sub(original.len()).ok_or_else(|| {
        invalid(format!("original {name} has more frames than the target length allows"))
    })?;

    let start_modulus = ((pool_s - span_s).floor() as u128).max(1);
    let t0 = (hashstr(name) % start_modulus) as u64;
    let t1 = (hashstr(&format!("{name}:insert")) % (span_s.floor() as u128 + 1)) as u64;

    let pool_fps = pool.meta.fps;
    let last = pool.len() - 1;
    let distractor: Vec<Frame> = (0..needed)
        .map(|k| {
            let time = t0 as f64 + k as f64 / fps;
            let idx = ((time * pool_fps).round() as usize).min(last);
            Frame::new(pool.frames[idx].features.clone(), LABEL_DISTRACTOR)
        })
        .collect();

    let insert_frame = ((t1 as f64 * fps).round() as usize).min(needed);
    let mut frames = Vec::with_capacity(total);
    frames.extend_from_slice(&distractor[..insert_frame]);
    frames.extend(original.frames.iter().cloned());
    frames.extend_from_slice(&distractor[insert_frame..]);

    let meta = VideoMeta {
        id: format!("{name}@{target_s}s"),
        duration_s: target_s,
        fps,
        total_frames: total,
    };
    Ok(Extension {
        stream: FrameStream::new(meta, frames)?,
        distractor_start_s: t0,
        insert_s: t1,
        insert_frame,
    })
}

/// A short source video with its multiple-choice annotation.
#[derive(Clone, Debug, PartialEq)]
pub struct OriginalItem {
    pub stream: FrameStream,
    pub question: String,
    pub options: Vec<String>,
    pub answer_index: usize,
    pub subset_tag: SubsetTag,
}

/// Extends an annotated video to `target_s`.
pub fn extend_item(item: &OriginalItem, pool: &FrameStream, target_s: f64) -> Result<BenchSample> {
    let ext = extend_stream(&item.stream, pool, target_s)?;
    Ok(BenchSample {
        name: item.stream.meta.id.clone(),
        insert_start_s: ext.insert_frame as f64 / item.stream.meta.fps,
        stream: ext.stream,
        question: item.question.clone(),
        options: item.options.clone(),
        answer_index: item.answer_index,
        original_len_s: item.stream.meta.duration_s,
        subset_tag: item.subset_tag,
    })
}

/// Parameters of the synthetic needle-retrieval task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeedleSpec {
    /// Seeds the class signatures and the distractor pool; shared by every
    /// dataset of one task so train and test sets agree on what a class is.
    pub task_seed: u64,
    pub classes: usize,
    pub frame_dim: usize,
    pub fps: f64,
    pub needle_s: f64,
    pub pool_s: f64,
    pub pool_fps: f64,
    /// Stationary standard deviation of distractor features per dimension.
    pub distractor_std: f64,
    /// Norm of the feature direction shared by all needle frames.
    pub salience: f64,
    /// Norm of each class signature.
    pub signature: f64,
    /// Per-dimension noise on needle frames.
    pub needle_noise: f64,
}

impl Default for NeedleSpec {
    fn default() -> Self {
        Self {
            task_seed: 0,
            classes: 4,
            frame_dim: 16,
            fps: 2.0,
            needle_s: 4.0,
            pool_s: 3600.0,
            pool_fps: 15.0,
            distractor_std: 0.5,
            salience: 3.0,
            signature: 2.0,
            needle_noise: 0.3,
        }
    }
}

impl NeedleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 1 || self.classes > vocab::OPTION_COUNT as usize {
            return Err(invalid(format!("needle classes must be 1..=4, got {}", self.classes)));
        }
        if self.frame_dim == 0 {
            return Err(invalid("frame_dim must be >= 1"));
        }
        for (name, v) in [
            ("fps", self.fps),
            ("needle_s", self.needle_s),
            ("pool_s", self.pool_s),
            ("pool_fps", self.pool_fps),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    fn unit(&self, r: &mut impl Rng) -> Vec<f32> {
        let v: Vec<f32> = (0..self.frame_dim).map(|_| r.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f32>().sqrt().max(1e-6);
        v.into_iter().map(|x| x / n).collect()
    }

    fn salience_direction(&self) -> Vec<f32> {
        self.unit(&mut rng::stream(self.task_seed, "needle-salience", 0))
    }

    fn class_signature(&self, class: usize) -> Vec<f32> {
        self.unit(&mut rng::stream(self.task_seed, "needle-class", class as u64))
    }

    /// The distractor video: a smooth first-order autoregressive feature walk.
    pub fn pool(&self) -> Result<FrameStream> {
        self.validate()?;
        let meta = VideoMeta::new("distractor-pool", self.pool_s, self.pool_fps)?;
        let mut r = rng::stream(self.task_seed, "distractor-pool", 0);
        let rho: f32 = 0.98;
        let innov = self.distractor_std as f32 * (1.0 - rho * rho).sqrt();
        let mut state: Vec<f32> = (0..self.frame_dim)
            .map(|_| r.sample::<f32, _>(StandardNormal) * self.distractor_std as f32)
            .collect();
        let mut frames = Vec::with_capacity(meta.total_frames);
        for _ in 0..meta.total_frames {
            frames.push(Frame::new(state.clone(), LABEL_DISTRACTOR));
            for s in state.iter_mut() {
                *s = rho * *s + innov * r.sample::<f32, _>(StandardNormal);
            }
        }
        FrameStream::new(meta, frames)
    }

    /// A short stream whose every frame shows needle class `class`.
    pub fn needle_stream(&self, name: &str, class: usize, noise_seed: u64) -> Result<FrameStream> {
        self.validate()?;
        let meta = VideoMeta::new(name, self.needle_s, self.fps)?;
        let sal = self.salience_direction();
        let sig = self.class_signature(class);
        let mut r = rng::stream(noise_seed, "needle-noise", 0);
        let frames = (0..meta.total_frames)
            .map(|_| {
                let f = sal
                    .iter()
                    .zip(&sig)
                    .map(|(a, b)| {
                        a * self.salience as f32 + b * self.signature as f32 + self.needle_noise as f32 * r.sample::<f32, _>(StandardNormal)
                    })
                    .collect();
                Frame::new(f, LABEL_NEEDLE_BASE + class as u32)
            })
            .collect();
        FrameStream::new(meta, frames)
    }
}

/// `count` needle samples of `length_s` seconds, classes balanced round-robin.
pub fn make_needle_dataset(
    count: usize,
    length_s: f64,
    spec: &NeedleSpec,
    seed: u64,
    exec: Execution,
) -> Result<Vec<BenchSample>> {
    let pool = spec.pool()?;
    make_needle_dataset_with_pool(count, length_s, spec, seed, &pool, exec)
}

/// As [`make_needle_dataset`] with a prebuilt distractor pool.
pub fn make_needle_dataset_with_pool(
    count: usize,
    length_s: f64,
    spec: &NeedleSpec,
    seed: u64,
    pool: &FrameStream,
    exec: Execution,
) -> Result<Vec<BenchSample>> {
    if count == 0 {
        return Err(invalid("needle dataset needs at least one sample"));
    }
    spec.validate()?;
    let options: Vec<String> = (0..spec.classes as u32).map(vocab::class_name).collect();
    par::map_range(exec, count, |i| {
        let class = i % spec.classes;
        let name = format!("needle-{:016x}", rng::derive_seed(seed, "needle-name", i as u64));
        let needle = spec.needle_stream(&name, class, rng::derive_seed(seed, "needle-noise", i as u64))?;
        extend_item(
            &OriginalItem {
                stream: needle,
                question: vocab::NEEDLE_QUESTION.to_string(),
                options: options.clone(),
                answer_index: class,
                subset_tag: SubsetTag::Synthetic,
            },
            pool,
            length_s,
        )
    })
    .into_iter()
    .collect()
}

// ---------------------------------------------------------------------------
// Files

#[derive(Serialize, Deserialize)]
struct StreamHeader {
    meta: VideoMeta,
    frame_dim: usize,
    labels: Vec<u32>,
}

pub fn save_stream(path: &Path, stream: &FrameStream) -> Result<()> {
    let header = StreamHeader {
        meta: stream.meta.clone(),
        frame_dim: stream.frame_dim(),
        labels: stream.labels(),
    };
    crate::io::write(path, &header, &stream.flat_features())
}

pub fn load_stream(path: &Path) -> Result<FrameStream> {
    let (h, data): (StreamHeader, Vec<f32>) = crate::io::read(path)?;
    FrameStream::from_flat(h.meta, h.frame_dim, &data, &h.labels)
}

/// JSON sidecar describing precomputed per-frame features stored as raw `f32` LE.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSidecar {
    pub id: String,
    pub fps: f64,
    pub frame_dim: usize,
    /// Raw payload path, relative to the sidecar.
    pub features: String,
    /// Per-frame labels; every frame is an original frame when absent.
    #[serde(default)]
    pub labels: Option<Vec<u32>>,
}

/// Ingests precomputed features described by a JSON sidecar.
pub fn load_feature_sidecar(path: &Path) -> Result<FrameStream> {
    let side: FeatureSidecar = serde_json::from_str(&crate::io::read_text(path)?)?;
    let bin = path.parent().unwrap_or(Path::new(".")).join(&side.features);
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    if bytes.len() % 4 != 0 || side.frame_dim == 0 || (bytes.len() / 4) % side.frame_dim != 0 {
        return Err(Error::Data(format!(
            "{}: {} bytes is not a whole number of {}-wide f32 frames",
            bin.display(),
            bytes.len(),
            side.frame_dim
        )));
    }
    let data = crate::io::read_f32_le(&bytes);
    let n = data.len() / side.frame_dim;
    if n == 0 {
        return Err(Error::Data(format!("{}: no frames", bin.display())));
    }
    let labels = side.labels.unwrap_or_else(|| vec![crate::video::LABEL_ORIGINAL; n]);
    let meta = VideoMeta {
        id: side.id,
        duration_s: n as f64 / side.fps,
        fps: side.fps,
        total_frames: n,
    };
    FrameStream::from_flat(meta, side.frame_dim, &data, &labels)
}

/// One manifest line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    /// Stream file, relative to the manifest.
    pub stream: String,
    pub t1: f64,
    pub answer_index: usize,
    pub subset_tag: SubsetTag,
    pub question: String,
    pub options: Vec<String>,
    pub original_len_s: f64,
    pub target_s: f64,
}

/// Writes stream files under `dir/streams/` and `dir/manifest.jsonl`; returns the manifest path.
pub fn write_bench(dir: &Path, samples: &[BenchSample]) -> Result<PathBuf> {
    let mut lines = String::new();
    for (i, s) in samples.iter().enumerate() {
        let rel = format!("streams/{i:05}.bin");
        save_stream(&dir.join(&rel), &s.stream)?;
        let entry = ManifestEntry {
            name: s.name.clone(),
            stream: rel,
            t1: s.insert_start_s,
            answer_index: s.answer_index,
            subset_tag: s.subset_tag,
            question: s.question.clone(),
            options: s.options.clone(),
            original_len_s: s.original_len_s,
            target_s: s.stream.meta.duration_s,
        };
        lines.push_str(&serde_json::to_string(&entry)?);
        lines.push('\n');
    }
    let manifest = dir.join("manifest.jsonl");
    crate::io::write_text(&manifest, &lines)?;
    Ok(manifest)
}

pub fn read_bench(manifest: &Path) -> Result<Vec<BenchSample>> {
    let text = crate::io::read_text(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let e: ManifestEntry = serde_json::from_str(line)
                .map_err(|err| Error::Data(format!("{} line {}: {err}", manifest.display(), i + 1)))?;
            let stream = load_stream(&base.join(&e.stream))?;
            Ok(BenchSample {
                name: e.name,
                stream,
                question: e.question,
                options: e.options,
                answer_index: e.answer_index,
                insert_start_s: e.t1,
                original_len_s: e.original_len_s,
                subset_tag: e.subset_tag,
            })
        })
        .collect()
}
