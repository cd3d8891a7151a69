//! Compressed-domain sequence data: GOP-structured frames with motion and
//! residual side data, label maps, the synthetic scene generator, and the
//! on-disk container format.

mod container;
mod gen;

pub use container::{load_sequence, save_sequence, CONTAINER_VERSION};
pub use gen::{default_scene, generate_sequence, SceneSpec, SpriteShape, SpriteSpec};

use crate::warp::{ImageBuf, MotionMap, ResidualMap};
use thiserror::Error;

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated payload while reading {0}")]
    Truncated(String),
    #[error("checksum mismatch in frame {frame}")]
    ChecksumMismatch { frame: usize },
    #[error("invalid scene spec: {0}")]
    InvalidScene(String),
    #[error("invalid sequence: {0}")]
    Invalid(String),
}

/// Label value marking pixels excluded from losses and scoring.
pub const IGNORE_LABEL: u8 = 255;

/// Per-pixel class ids; 255 = ignore.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub ids: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, ids: Vec<u8>) -> Result<LabelMap> {
        if ids.len() != height * width {
            return Err(DataError::Invalid(format!(
                "label payload {} != {height}x{width}",
                ids.len()
            )));
        }
        Ok(LabelMap { height, width, ids })
    }

    pub fn filled(height: usize, width: usize, id: u8) -> LabelMap {
        LabelMap {
            height,
            width,
            ids: vec![id; height * width],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.ids[y * self.width + x]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameKind {
    /// Intra-coded: stored as a complete image.
    Intra,
    /// Predicted: stored with motion vectors and a residual map.
    Predicted,
}

#[derive(Clone, Debug)]
pub struct Frame {
    pub kind: FrameKind,
    /// H x W x 3 values in [0, 1].
    pub image: ImageBuf,
    pub motion: Option<MotionMap>,
    pub residual: Option<ResidualMap>,
    pub label: Option<LabelMap>,
}

impl Frame {
    pub fn is_key(&self) -> bool {
        self.kind == FrameKind::Intra
    }
}

/// Ordered frames in GOP structure: each GOP is one intra frame followed by
/// `gop_length - 1` predicted frames.
#[derive(Clone, Debug)]
pub struct GopSequence {
    pub gop_length: usize,
    pub class_count: usize,
    pub frames: Vec<Frame>,
}

impl GopSequence {
    /// Frames in order, with `is_key` set on intra frames.
    pub fn schedule(&self) -> impl Iterator<Item = (&Frame, bool)> {
        self.frames.iter().map(|f| (f, f.is_key()))
    }

    pub fn height(&self) -> usize {
        self.frames.first().map_or(0, |f| f.image.height)
    }

    pub fn width(&self) -> usize {
        self.frames.first().map_or(0, |f| f.image.width)
    }

    /// Indices of intra frames.
    pub fn key_indices(&self) -> Vec<usize> {
        self.frames
            .iter()
            .enumerate()
            .filter(|(_, f)| f.is_key())
            .map(|(i, _)| i)
            .collect()
    }

    /// Structural invariants: GOP layout, side-data presence, label range,
    /// consistent dimensions.
    pub fn validate(&self) -> Result<()> {
        if self.gop_length == 0 {
            return Err(DataError::Invalid("gop_length must be >= 1".into()));
        }
        let (h, w) = (self.height(), self.width());
        for (i, frame) in self.frames.iter().enumerate() {
            let expect_key = i % self.gop_length == 0;
            if frame.is_key() != expect_key {
                return Err(DataError::Invalid(format!(
                    "frame {i} should be {} under gop_length {}",
                    if expect_key { "intra" } else { "predicted" },
                    self.gop_length
                )));
            }
            if frame.image.height != h || frame.image.width != w || frame.image.channels != 3 {
                return Err(DataError::Invalid(format!(
                    "frame {i} dims {}x{}x{} differ from sequence {h}x{w}x3",
                    frame.image.height, frame.image.width, frame.image.channels
                )));
            }
            match frame.kind {
                FrameKind::Intra => {
                    if frame.motion.is_some() || frame.residual.is_some() {
                        return Err(DataError::Invalid(format!(
                            "intra frame {i} carries motion/residual side data"
                        )));
                    }
                }
                FrameKind::Predicted => {
                    if frame.motion.is_none() || frame.residual.is_none() {
                        return Err(DataError::Invalid(format!(
                            "predicted frame {i} is missing motion/residual side data"
                        )));
                    }
                }
            }
            if let Some(label) = &frame.label {
                if label.height != h || label.width != w {
                    return Err(DataError::Invalid(format!(
                        "frame {i} label dims mismatch"
                    )));
                }
                if let Some(&bad) = label
                    .ids
                    .iter()
                    .find(|&&v| v != IGNORE_LABEL && v as usize >= self.class_count)
                {
                    return Err(DataError::Invalid(format!(
                        "frame {i} label {bad} outside class range 0..{}",
                        self.class_count
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_flags_keys_by_gop() {
        let spec = default_scene(3);
        let seq = generate_sequence(&spec, 2).unwrap();
        assert_eq!(seq.frames.len(), 24);
        let keys: Vec<usize> = seq
            .schedule()
            .enumerate()
            .filter(|(_, (_, k))| *k)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(keys, vec![0, 12]);
    }

    #[test]
    fn gop_length_one_makes_every_frame_key() {
        let mut spec = default_scene(5);
        spec.gop_length = 1;
        let seq = generate_sequence(&spec, 3).unwrap();
        assert_eq!(seq.frames.len(), 3);
        assert!(seq.schedule().all(|(_, k)| k));
    }

    #[test]
    fn empty_sequence_schedules_nothing() {
        let seq = GopSequence {
            gop_length: 12,
            class_count: 4,
            frames: vec![],
        };
        assert_eq!(seq.schedule().count(), 0);
    }
}
