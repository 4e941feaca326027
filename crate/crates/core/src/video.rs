//! Abstract videos: ordered per-frame feature vectors with provenance labels.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::schedule::VideoMeta;

/// Label of a frame drawn from the distractor pool.
pub const LABEL_DISTRACTOR: u32 = 0;
/// Label of a frame from an original (non-synthetic) video.
pub const LABEL_ORIGINAL: u32 = 1;
/// Needle class `c` is labelled `LABEL_NEEDLE_BASE + c`.
pub const LABEL_NEEDLE_BASE: u32 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub features: Vec<f32>,
    pub source_label: u32,
}

impl Frame {
    pub fn new(features: Vec<f32>, source_label: u32) -> Self {
        Self {
            features,
            source_label,
        }
    }

    pub fn is_distractor(&self) -> bool {
        self.source_label == LABEL_DISTRACTOR
    }

    /// Needle class carried by this frame, if any.
    pub fn needle_class(&self) -> Option<u32> {
        self.source_label.checked_sub(LABEL_NEEDLE_BASE)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameStream {
    pub meta: VideoMeta,
    pub frames: Vec<Frame>,
}

impl FrameStream {
    pub fn new(meta: VideoMeta, frames: Vec<Frame>) -> Result<Self> {
        let s = Self { meta, frames };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.meta.validate()?;
        if self.frames.len() != self.meta.total_frames {
            return Err(invalid(format!(
                "stream {}: {} frames but meta declares {}",
                self.meta.id,
                self.frames.len(),
                self.meta.total_frames
            )));
        }
        let dim = self.frame_dim();
        for (i, f) in self.frames.iter().enumerate() {
            if f.features.len() != dim {
                return Err(Error::Data(format!(
                    "stream {}: frame {i} has {} features, expected {dim}",
                    self.meta.id,
                    f.features.len()
                )));
            }
            if f.features.iter().any(|x| !x.is_finite()) {
                return Err(Error::Data(format!(
                    "stream {}: frame {i} has non-finite features",
                    self.meta.id
                )));
            }
        }
        Ok(())
    }

    pub fn frame_dim(&self) -> usize {
        self.frames.first().map_or(0, |f| f.features.len())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn labels(&self) -> Vec<u32> {
        self.frames.iter().map(|f| f.source_label).collect()
    }

    /// Row-major `len x frame_dim` feature payload.
    pub fn flat_features(&self) -> Vec<f32> {
        self.frames
            .iter()
            .flat_map(|f| f.features.iter().copied())
            .collect()
    }

    /// Rebuilds frames from a flat payload and per-frame labels.
    pub fn from_flat(meta: VideoMeta, frame_dim: usize, data: &[f32], labels: &[u32]) -> Result<Self> {
        if frame_dim == 0 || data.len() != labels.len() * frame_dim {
            return Err(Error::Data(format!(
                "stream {}: payload of {} floats does not match {} frames of width {frame_dim}",
                meta.id,
                data.len(),
                labels.len()
            )));
        }
        let frames = data
            .chunks_exact(frame_dim)
            .zip(labels)
            .map(|(c, &l)| Frame::new(c.to_vec(), l))
            .collect();
        Self::new(meta, frames)
    }

    /// SHA-256 over metadata, labels and the exact feature bits.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.meta.id.as_bytes());
        h.update(self.meta.duration_s.to_le_bytes());
        h.update(self.meta.fps.to_le_bytes());
        h.update((self.meta.total_frames as u64).to_le_bytes());
        for f in &self.frames {
            h.update(f.source_label.to_le_bytes());
            for x in &f.features {
                h.update(x.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
