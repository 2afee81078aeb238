//! Pixel-level operations: matting composite, mixup background
//! randomization, background-only augmentations, and the spatial/temporal
//! video augmentations used at train time.
//!
//! Pixels live in normalized `f64` [0, 1]; 8-bit files are converted on
//! load/save with round-half-up. Frames, masks, and videos are immutable
//! after construction and cheap to clone (the pixel buffer is shared).

mod augment;
mod composite;
pub mod io;

pub use augment::{color_jitter, random_rotate, rotate, spatial_augment, temporal_augment};
pub use composite::{composite_matting, mixup_background, resize, sample_lambda};

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of color channels; frames are always RGB.
pub const CHANNELS: usize = 3;

#[derive(Debug, Error)]
pub enum MediaError {
    #[error("dimension mismatch on {axis}: expected {expected}, got {got}")]
    DimensionMismatch {
        axis: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("pixel buffer length {got} does not match {height}x{width}x{channels}")]
    BadBufferLength {
        height: usize,
        width: usize,
        channels: usize,
        got: usize,
    },
    #[error("pixel value {value} at index {index} outside [0, 1]")]
    PixelOutOfRange { value: f64, index: usize },
    #[error("lambda {0} outside [0, 1]")]
    LambdaOutOfRange(f64),
    #[error("target size {1}={0} must be at least 1")]
    BadTargetSize(usize, &'static str),
    #[error("video must contain at least one frame")]
    EmptyVideo,
    #[error("frame {index} has dims {got_h}x{got_w}, expected {exp_h}x{exp_w}")]
    InconsistentFrames {
        index: usize,
        exp_h: usize,
        exp_w: usize,
        got_h: usize,
        got_w: usize,
    },
    #[error("scene class label must be nonempty")]
    EmptyClassLabel,
    #[error("invalid augment config: {0}")]
    BadAugmentConfig(String),
    #[error("failed to read image {path}: {source}")]
    ImageRead {
        path: std::path::PathBuf,
        source: image::ImageError,
    },
    #[error("failed to write image {path}: {source}")]
    ImageWrite {
        path: std::path::PathBuf,
        source: image::ImageError,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("frame directory {0} contains no .png frames")]
    EmptyFrameDir(std::path::PathBuf),
}

/// An RGB image with values in [0, 1], row-major `[y][x][c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    data: Arc<[f64]>,
}

impl Frame {
    /// Validating constructor; every value must be in [0, 1].
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self, MediaError> {
        if data.len() != height * width * CHANNELS {
            return Err(MediaError::BadBufferLength {
                height,
                width,
                channels: CHANNELS,
                got: data.len(),
            });
        }
        for (index, &value) in data.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(MediaError::PixelOutOfRange { value, index });
            }
        }
        Ok(Self::from_parts(height, width, data))
    }

    /// Internal constructor for ops whose outputs are in range by
    /// construction.
    pub(crate) fn from_parts(height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width * CHANNELS);
        Frame {
            height,
            width,
            data: data.into(),
        }
    }

    /// Constant-color frame.
    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Result<Self, MediaError> {
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Frame::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * CHANNELS + c]
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn same_dims(&self, other: &Frame) -> Result<(), MediaError> {
        if self.height != other.height {
            return Err(MediaError::DimensionMismatch {
                axis: "height",
                expected: self.height,
                got: other.height,
            });
        }
        if self.width != other.width {
            return Err(MediaError::DimensionMismatch {
                axis: "width",
                expected: self.width,
                got: other.width,
            });
        }
        Ok(())
    }
}

/// Per-frame soft alpha map in [0, 1]; 1 = signer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    height: usize,
    width: usize,
    alpha: Arc<[f64]>,
}

impl Mask {
    pub fn new(height: usize, width: usize, alpha: Vec<f64>) -> Result<Self, MediaError> {
        if alpha.len() != height * width {
            return Err(MediaError::BadBufferLength {
                height,
                width,
                channels: 1,
                got: alpha.len(),
            });
        }
        for (index, &value) in alpha.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(MediaError::PixelOutOfRange { value, index });
            }
        }
        Ok(Mask {
            height,
            width,
            alpha: alpha.into(),
        })
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self, MediaError> {
        Mask::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.alpha[y * self.width + x]
    }

    pub fn matches_frame(&self, frame: &Frame) -> Result<(), MediaError> {
        if self.height != frame.height() {
            return Err(MediaError::DimensionMismatch {
                axis: "height",
                expected: frame.height(),
                got: self.height,
            });
        }
        if self.width != frame.width() {
            return Err(MediaError::DimensionMismatch {
                axis: "width",
                expected: frame.width(),
                got: self.width,
            });
        }
        Ok(())
    }
}

/// An identified, gloss-labeled sequence of frames sharing one resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    pub id: String,
    frames: Vec<Frame>,
    pub glosses: Vec<String>,
}

impl Video {
    pub fn new(id: String, frames: Vec<Frame>, glosses: Vec<String>) -> Result<Self, MediaError> {
        let first = frames.first().ok_or(MediaError::EmptyVideo)?;
        let (h, w) = (first.height(), first.width());
        for (index, f) in frames.iter().enumerate() {
            if f.height() != h || f.width() != w {
                return Err(MediaError::InconsistentFrames {
                    index,
                    exp_h: h,
                    exp_w: w,
                    got_h: f.height(),
                    got_w: f.width(),
                });
            }
        }
        Ok(Video { id, frames, glosses })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }
}

/// A labeled scene image used as a replacement or mixup background.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneImage {
    pub id: String,
    pub class_label: String,
    pub image: Frame,
}

impl SceneImage {
    pub fn new(id: String, class_label: String, image: Frame) -> Result<Self, MediaError> {
        if class_label.is_empty() {
            return Err(MediaError::EmptyClassLabel);
        }
        Ok(SceneImage {
            id,
            class_label,
            image,
        })
    }
}

/// Knobs for background randomization and video augmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub jitter_strength: f64,
    pub rotation_max_deg: f64,
    pub crop_size: usize,
    pub resize_size: usize,
    pub hflip_prob: f64,
    pub dup_frac_max: f64,
    pub del_frac_max: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            lambda_min: 0.1,
            lambda_max: 0.6,
            jitter_strength: 0.4,
            rotation_max_deg: 15.0,
            crop_size: 224,
            resize_size: 256,
            hflip_prob: 0.5,
            dup_frac_max: 0.20,
            del_frac_max: 0.20,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), MediaError> {
        let bad = |msg: String| Err(MediaError::BadAugmentConfig(msg));
        if !(0.0 <= self.lambda_min && self.lambda_min <= self.lambda_max && self.lambda_max <= 1.0)
        {
            return bad(format!(
                "need 0 <= lambda_min <= lambda_max <= 1, got [{}, {}]",
                self.lambda_min, self.lambda_max
            ));
        }
        if self.jitter_strength < 0.0 {
            return bad(format!("jitter_strength {} < 0", self.jitter_strength));
        }
        if self.rotation_max_deg < 0.0 {
            return bad(format!("rotation_max_deg {} < 0", self.rotation_max_deg));
        }
        if self.crop_size == 0 || self.resize_size == 0 {
            return bad("crop_size and resize_size must be >= 1".to_string());
        }
        if self.crop_size > self.resize_size {
            return bad(format!(
                "crop_size {} > resize_size {}",
                self.crop_size, self.resize_size
            ));
        }
        for (name, v) in [
            ("hflip_prob", self.hflip_prob),
            ("dup_frac_max", self.dup_frac_max),
            ("del_frac_max", self.del_frac_max),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} {v} outside [0, 1]"));
            }
        }
        Ok(())
    }
}
