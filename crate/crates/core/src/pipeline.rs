//! Assembly of video embeddings into the sequence the language model consumes.
//!
//! Each group of sampled frames is encoded independently with the plain
//! clip-by-clip concatenation, then the groups are interleaved row by row so
//! that every `gamma` consecutive rows share one positional index. Keeping a
//! single group and dropping the rest yields exactly the plain encoding of that
//! group's frames.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{encode_group, ClipEncoderParams};
use crate::error::{invalid, shape, Error, Result};
use crate::par::{self, Execution};
use crate::schedule::{split_groups, EncodingConfig, SchedulePlan};
use crate::video::{Frame, FrameStream};

/// Embedding rows paired with explicit positional indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSeq {
    /// Row-major `len x dim`.
    pub rows: Vec<f32>,
    pub dim: usize,
    pub positions: Vec<usize>,
    pub gamma: usize,
}

#[derive(Serialize, Deserialize)]
struct DumpHeader {
    rows: usize,
    d: usize,
    gamma: usize,
    positions: Vec<usize>,
}

impl EmbeddingSeq {
    pub fn new(rows: Vec<f32>, dim: usize, positions: Vec<usize>, gamma: usize) -> Result<Self> {
        let s = Self {
            rows,
            dim,
            positions,
            gamma,
        };
        s.validate()?;
        Ok(s)
    }

    /// Rows with positions `0..len` and `gamma = 1`.
    pub fn sequential(rows: Vec<f32>, dim: usize) -> Result<Self> {
        if dim == 0 || !rows.len().is_multiple_of(dim) {
            return Err(shape(format!("{} values do not form rows of width {dim}", rows.len())));
        }
        let n = rows.len() / dim;
        Self::new(rows, dim, (0..n).collect(), 1)
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            rows: Vec::new(),
            dim,
            positions: Vec::new(),
            gamma: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || !self.rows.len().is_multiple_of(self.dim) {
            return Err(shape(format!("{} values do not form rows of width {}", self.rows.len(), self.dim)));
        }
        if self.gamma == 0 {
            return Err(invalid("gamma must be >= 1"));
        }
        if self.positions.len() != self.len() {
            return Err(shape(format!("{} positions for {} rows", self.positions.len(), self.len())));
        }
        if self.positions.windows(2).any(|w| w[0] > w[1]) {
            return Err(invalid("positions must be non-decreasing"));
        }
        let mut run = 0;
        for (i, p) in self.positions.iter().enumerate() {
            run = if i > 0 && self.positions[i - 1] == *p { run + 1 } else { 1 };
            if run > self.gamma {
                return Err(invalid(format!("position {p} repeats more than gamma = {} times", self.gamma)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn max_position(&self) -> Option<usize> {
        self.positions.last().copied()
    }

    /// First position available to text following this prefix.
    pub fn text_offset(&self) -> usize {
        self.max_position().map_or(0, |p| p + 1)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = DumpHeader {
            rows: self.len(),
            d: self.dim,
            gamma: self.gamma,
            positions: self.positions.clone(),
        };
        crate::io::write(path, &header, &self.rows)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (h, rows): (DumpHeader, Vec<f32>) = crate::io::read(path)?;
        if rows.len() != h.rows * h.d {
            return Err(Error::Data(format!(
                "embedding dump declares {}x{} but holds {} values",
                h.rows,
                h.d,
                rows.len()
            )));
        }
        Self::new(rows, h.d, h.positions, h.gamma)
    }
}

/// Position of flat row `k` is `offset + k / gamma`.
pub fn assign_positions(count: usize, gamma: usize, offset: usize) -> Result<Vec<usize>> {
    if gamma == 0 {
        return Err(invalid("gamma must be >= 1"));
    }
    if !count.is_multiple_of(gamma) {
        return Err(shape(format!("{count} rows are not divisible by gamma = {gamma}")));
    }
    Ok((0..count).map(|k| offset + k / gamma).collect())
}

/// Interleaves equally long groups: output row `p * gamma + g` is row `p` of group `g`.
pub fn ife_interleave(groups: &[EmbeddingSeq]) -> Result<EmbeddingSeq> {
    let first = groups.first().ok_or_else(|| invalid("no groups to interleave"))?;
    let (m, dim) = (first.len(), first.dim);
    if groups.iter().any(|g| g.len() != m || g.dim != dim) {
        return Err(shape("groups must have identical row counts and widths"));
    }
    let gamma = groups.len();
    let mut rows = Vec::with_capacity(m * gamma * dim);
    for p in 0..m {
        for g in groups {
            rows.extend_from_slice(g.row(p));
        }
    }
    let positions = assign_positions(m * gamma, gamma, 0)?;
    EmbeddingSeq::new(rows, dim, positions, gamma)
}

/// Recovers group `g` from an interleaved sequence, with positions `0..m`.
pub fn extract_group(interleaved: &EmbeddingSeq, g: usize) -> Result<EmbeddingSeq> {
    let gamma = interleaved.gamma;
    if g >= gamma {
        return Err(invalid(format!("group {g} out of range for gamma = {gamma}")));
    }
    if !interleaved.len().is_multiple_of(gamma) {
        return Err(shape("interleaved length is not a multiple of gamma"));
    }
    let rows: Vec<f32> = (g..interleaved.len())
        .step_by(gamma)
        .flat_map(|i| interleaved.row(i).iter().copied())
        .collect();
    EmbeddingSeq::sequential(rows, interleaved.dim)
}

/// Plain concatenation of per-clip encodings with sequential positions.
pub fn fse_concat(clips: &[Vec<f32>], dim: usize) -> Result<EmbeddingSeq> {
    EmbeddingSeq::sequential(clips.concat(), dim)
}

/// Gathers frames by index.
pub fn gather_frames(stream: &FrameStream, indices: &[usize]) -> Result<Vec<Frame>> {
    indices
        .iter()
        .map(|&i| {
            stream.frames.get(i).cloned().ok_or_else(|| {
                Error::Data(format!(
                    "frame index {i} outside stream {} of {} frames",
                    stream.meta.id,
                    stream.len()
                ))
            })
        })
        .collect()
}

/// Encodes the frames at `indices` with `gamma`-way interleaving.
///
/// `gamma = 1` is plain frame-scalable encoding.
pub fn encode_frames(
    stream: &FrameStream,
    indices: &[usize],
    gamma: usize,
    params: &ClipEncoderParams,
    cfg: &EncodingConfig,
    exec: Execution,
) -> Result<EmbeddingSeq> {
    let frames = gather_frames(stream, indices)?;
    let groups = split_groups(&frames, gamma)?;
    let encoded = par::map(exec, &groups, |g| encode_group(g, params, cfg));
    let encoded: Vec<EmbeddingSeq> = encoded.into_iter().collect::<Result<_>>()?;
    ife_interleave(&encoded)
}

/// Full schedule: every sampled frame, split into `plan.gamma` groups and interleaved.
pub fn encode_video(
    stream: &FrameStream,
    plan: &SchedulePlan,
    params: &ClipEncoderParams,
    cfg: &EncodingConfig,
    exec: Execution,
) -> Result<EmbeddingSeq> {
    encode_frames(stream, &plan.frame_indices, plan.gamma, params, cfg, exec)
}
