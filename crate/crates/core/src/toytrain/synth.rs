//! Procedural desk-scale data: gesture videos rendered as a moving sprite on
//! a monochrome background, plus parametric background textures for shift
//! tests and the train-time randomization pool.
//!
//! Sprite masks are binary, so re-rendering a clean frame over any scene via
//! `composite_matting` with its own mask is exact.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::benchgen::{SceneCatalog, SceneEntry};
use crate::media::{composite_matting, Frame, Mask, Video};
use crate::seeding::{self, DetRng};

use super::TrainError;

/// Families of procedural background textures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextureKind {
    Stripes,
    Checker,
    Noise,
    Gradient,
}

impl TextureKind {
    pub const ALL: [TextureKind; 4] = [
        TextureKind::Stripes,
        TextureKind::Checker,
        TextureKind::Noise,
        TextureKind::Gradient,
    ];

    pub fn label(self) -> &'static str {
        match self {
            TextureKind::Stripes => "stripes",
            TextureKind::Checker => "checker",
            TextureKind::Noise => "noise",
            TextureKind::Gradient => "gradient",
        }
    }
}

/// Synthetic dataset settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub frame_height: usize,
    pub frame_width: usize,
    /// Number of gesture classes (gloss vocabulary, blanks excluded).
    pub vocab: usize,
    pub seq_len_min: usize,
    pub seq_len_max: usize,
    pub frames_per_gloss_min: usize,
    pub frames_per_gloss_max: usize,
    pub sprite_radius: f64,
    pub sprite_color: [f64; 3],
    /// Monochrome studio background value.
    pub clean_background: f64,
    /// Texture families used for the shifted test twins.
    pub shift_backgrounds: Vec<TextureKind>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_train: 60,
            n_test: 20,
            frame_height: 32,
            frame_width: 32,
            vocab: 5,
            seq_len_min: 3,
            seq_len_max: 4,
            frames_per_gloss_min: 3,
            frames_per_gloss_max: 4,
            sprite_radius: 3.4,
            sprite_color: [0.95, 0.15, 0.10],
            clean_background: 0.55,
            shift_backgrounds: TextureKind::ALL.to_vec(),
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.vocab < 2 {
            return Err(TrainError::BadConfig("vocab must be >= 2".into()));
        }
        if self.seq_len_min < 1 || self.seq_len_min > self.seq_len_max {
            return Err(TrainError::BadConfig("bad seq_len range".into()));
        }
        if self.frames_per_gloss_min < 1 || self.frames_per_gloss_min > self.frames_per_gloss_max {
            return Err(TrainError::BadConfig("bad frames_per_gloss range".into()));
        }
        if self.frame_height < 8 || self.frame_width < 8 {
            return Err(TrainError::BadConfig("frames must be at least 8x8".into()));
        }
        if self.shift_backgrounds.is_empty() {
            return Err(TrainError::BadConfig("need at least one shift background".into()));
        }
        if !(0.0..=1.0).contains(&self.clean_background) {
            return Err(TrainError::BadConfig("clean_background outside [0, 1]".into()));
        }
        Ok(())
    }
}

/// Gloss token for class `c` in `1..=vocab`.
pub fn gloss_token(c: usize) -> String {
    format!("G{c}")
}

/// Inverse of [`gloss_token`]; `None` for unknown tokens or out-of-range
/// classes.
pub fn gloss_label(token: &str, vocab: usize) -> Option<usize> {
    let n: usize = token.strip_prefix('G')?.parse().ok()?;
    (1..=vocab).contains(&n).then_some(n)
}

/// A rendered video together with its exact per-frame signer masks.
#[derive(Debug, Clone)]
pub struct MaskedVideo {
    pub video: Video,
    pub masks: Vec<Mask>,
}

/// Output of the synthetic generator. `test_shifted[i]` is the twin of
/// `test_clean[i]`: identical sprites and labels, held-out background.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub train: Vec<MaskedVideo>,
    pub test_clean: Vec<MaskedVideo>,
    pub test_shifted: Vec<Video>,
}

/// Class anchor positions, evenly spaced on a circle around the frame
/// center.
fn anchor(cfg: &SynthConfig, class: usize) -> (f64, f64) {
    let cy = (cfg.frame_height as f64 - 1.0) / 2.0;
    let cx = (cfg.frame_width as f64 - 1.0) / 2.0;
    let radius = 0.30 * cfg.frame_height.min(cfg.frame_width) as f64;
    let angle = 2.0 * PI * (class - 1) as f64 / cfg.vocab as f64 - PI / 2.0;
    (cy + radius * angle.sin(), cx + radius * angle.cos())
}

/// Render one frame: a hard-edged disc at (cy, cx) over the monochrome
/// background, via the matting composite so the mask is exact by
/// construction.
fn render_frame(cfg: &SynthConfig, cy: f64, cx: f64) -> (Frame, Mask) {
    let (h, w) = (cfg.frame_height, cfg.frame_width);
    let r2 = cfg.sprite_radius * cfg.sprite_radius;
    let mut alpha = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let dy = y as f64 - cy;
            let dx = x as f64 - cx;
            alpha.push(if dy * dy + dx * dx <= r2 { 1.0 } else { 0.0 });
        }
    }
    let mask = Mask::new(h, w, alpha).expect("alpha in range");
    let sprite = Frame::filled(h, w, cfg.sprite_color).expect("color in range");
    let scene = Frame::filled(h, w, [cfg.clean_background; 3]).expect("background in range");
    let frame = composite_matting(&sprite, &scene, &mask).expect("matching dims");
    (frame, mask)
}

/// Gloss sequence without immediate repeats.
fn sample_glosses(cfg: &SynthConfig, rng: &mut DetRng) -> Vec<usize> {
    let len = rng.random_range(cfg.seq_len_min..=cfg.seq_len_max);
    let mut seq = Vec::with_capacity(len);
    for _ in 0..len {
        loop {
            let c = rng.random_range(1..=cfg.vocab);
            if seq.last() != Some(&c) {
                seq.push(c);
                break;
            }
        }
    }
    seq
}

/// Render a full video: each gloss is a segment of frames with the sprite
/// oscillating along a class-specific direction around the class anchor.
fn render_video(cfg: &SynthConfig, id: String, rng: &mut DetRng) -> MaskedVideo {
    let classes = sample_glosses(cfg, rng);
    let mut frames = Vec::new();
    let mut masks = Vec::new();
    for &class in &classes {
        let (ay, ax) = anchor(cfg, class);
        let n = rng.random_range(cfg.frames_per_gloss_min..=cfg.frames_per_gloss_max);
        let phase: f64 = rng.random_range(0.0..=PI);
        let dir = 2.0 * PI * class as f64 / cfg.vocab as f64;
        for t in 0..n {
            let amp = 1.5 * (2.0 * PI * t as f64 / n as f64 + phase).sin();
            let (frame, mask) = render_frame(cfg, ay + amp * dir.sin(), ax + amp * dir.cos());
            frames.push(frame);
            masks.push(mask);
        }
    }
    let glosses = classes.iter().map(|&c| gloss_token(c)).collect();
    let video = Video::new(id, frames, glosses).expect("at least one frame");
    MaskedVideo { video, masks }
}

/// Luminance bands and chroma tints differ between the train pool and the
/// held-out shift set, so the shifted test backgrounds are never seen during
/// training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TextureBand {
    TrainPool,
    HeldOut,
}

/// Sample one procedural texture: a coarse luminance pattern (stripes,
/// checker, block noise, or a ramp) plus an independent chroma offset per
/// grid cell. Structures are coarse so they survive the model's
/// average-pool stage. The held-out band uses fewer, larger cells, wider
/// contrast, and stronger chroma than the train-pool band, so shifted test
/// backgrounds are never in the training distribution.
pub fn make_texture(
    kind: TextureKind,
    h: usize,
    w: usize,
    band: TextureBand,
    rng: &mut DetRng,
) -> Frame {
    // Both bands draw from the same contrast and chroma statistics (scenes
    // look alike); the held-out band differs in structure scale and, always,
    // in the concrete samples.
    let freq = match band {
        TextureBand::TrainPool => rng.random_range(4..=6) as f64,
        TextureBand::HeldOut => rng.random_range(2..=3) as f64,
    };
    let chroma: f64 = rng.random_range(0.05..=0.25);
    let lo: f64 = rng.random_range(0.0..=0.25);
    let hi: f64 = rng.random_range(0.70..=1.0);
    let vertical = rng.random_bool(0.5);
    let angle: f64 = rng.random_range(0.0..=PI);
    let cells = freq as usize;
    let block_values: Vec<f64> = (0..cells * cells)
        .map(|_| rng.random_range(lo..=hi))
        .collect();
    // Per-cell chroma offsets (red and blue channels push against each
    // other, green stays mild).
    let cell_chroma: Vec<[f64; 3]> = (0..cells * cells)
        .map(|_| {
            let dr: f64 = rng.random_range(-chroma..=chroma);
            let dg: f64 = rng.random_range(-chroma / 3.0..=chroma / 3.0);
            [dr, dg, -dr]
        })
        .collect();

    let value = |gy: usize, gx: usize, fy: f64, fx: f64| -> f64 {
        match kind {
            TextureKind::Stripes => {
                let g = if vertical { gx } else { gy };
                if g % 2 == 0 {
                    lo
                } else {
                    hi
                }
            }
            TextureKind::Checker => {
                if (gy + gx) % 2 == 0 {
                    lo
                } else {
                    hi
                }
            }
            TextureKind::Noise => block_values[gy * cells + gx],
            TextureKind::Gradient => {
                let proj = (fy * angle.sin() + fx * angle.cos() + 1.0) / 2.0;
                lo + (hi - lo) * proj.clamp(0.0, 1.0)
            }
        }
    };

    let mut data = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            let fy = y as f64 / h as f64;
            let fx = x as f64 / w as f64;
            let gy = ((fy * freq).floor() as usize).min(cells - 1);
            let gx = ((fx * freq).floor() as usize).min(cells - 1);
            let v = value(gy, gx, fy, fx);
            let tint = cell_chroma[gy * cells + gx];
            for c in 0..3 {
                data.push((v + tint[c]).clamp(0.0, 1.0));
            }
        }
    }
    Frame::from_parts(h, w, data)
}

/// Generate the train set, the clean test set, and its background-shifted
/// twins.
pub fn gen_synthetic_dataset(cfg: &SynthConfig) -> Result<SynthDataset, TrainError> {
    cfg.validate()?;
    let mut train = Vec::with_capacity(cfg.n_train);
    for i in 0..cfg.n_train {
        let mut rng = seeding::rng_from(seeding::derive_seed(cfg.seed, &["train", &i.to_string()]));
        train.push(render_video(cfg, format!("train_{i:03}"), &mut rng));
    }

    let mut test_clean = Vec::with_capacity(cfg.n_test);
    let mut test_shifted = Vec::with_capacity(cfg.n_test);
    for i in 0..cfg.n_test {
        let mut rng = seeding::rng_from(seeding::derive_seed(cfg.seed, &["test", &i.to_string()]));
        let clean = render_video(cfg, format!("test_{i:03}"), &mut rng);

        let kind = cfg.shift_backgrounds[i % cfg.shift_backgrounds.len()];
        let mut tex_rng =
            seeding::rng_from(seeding::derive_seed(cfg.seed, &["shift", &i.to_string()]));
        let texture = make_texture(
            kind,
            cfg.frame_height,
            cfg.frame_width,
            TextureBand::HeldOut,
            &mut tex_rng,
        );
        let shifted_frames: Result<Vec<Frame>, _> = clean
            .video
            .frames()
            .iter()
            .zip(&clean.masks)
            .map(|(frame, mask)| composite_matting(frame, &texture, mask))
            .collect();
        let shifted = Video::new(
            format!("test_{i:03}_shift"),
            shifted_frames?,
            clean.video.glosses.clone(),
        )?;
        test_clean.push(clean);
        test_shifted.push(shifted);
    }
    Ok(SynthDataset {
        train,
        test_clean,
        test_shifted,
    })
}

/// A scene catalog of train-pool textures (one class per texture family).
pub fn make_training_scene_catalog(
    frame_height: usize,
    frame_width: usize,
    images_per_class: usize,
    seed: u64,
) -> Result<SceneCatalog, TrainError> {
    let mut entries = Vec::new();
    for kind in TextureKind::ALL {
        for i in 0..images_per_class {
            let mut rng = seeding::rng_from(seeding::derive_seed(
                seed,
                &["brpool", kind.label(), &i.to_string()],
            ));
            let frame = make_texture(
                kind,
                frame_height,
                frame_width,
                TextureBand::TrainPool,
                &mut rng,
            );
            entries.push(SceneEntry::from_frame(
                format!("{}/{i:02}", kind.label()),
                kind.label().to_string(),
                frame,
            ));
        }
    }
    Ok(SceneCatalog::from_entries(entries)?)
}
