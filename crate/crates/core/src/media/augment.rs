//! Background-only and whole-video augmentations.

use rand::seq::index;
use rand::Rng;

use super::composite::{bilinear, resize};
use super::{AugmentConfig, Frame, Video, MediaError, CHANNELS};

fn luma(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Multiply brightness, contrast, and saturation by independent uniform
/// factors in `[1-strength, 1+strength]`, clamping to [0, 1] after each
/// stage. A factor of exactly 1 leaves that stage bit-identical.
pub fn color_jitter<R: Rng + ?Sized>(image: &Frame, rng: &mut R, strength: f64) -> Frame {
    let lo = 1.0 - strength;
    let hi = 1.0 + strength;
    let brightness: f64 = rng.random_range(lo..=hi);
    let contrast: f64 = rng.random_range(lo..=hi);
    let saturation: f64 = rng.random_range(lo..=hi);

    let mut data: Vec<f64> = image.data().to_vec();

    if brightness != 1.0 {
        for v in &mut data {
            *v = (*v * brightness).clamp(0.0, 1.0);
        }
    }
    if contrast != 1.0 {
        // Anchor on the mean grayscale value of the whole image.
        let n = (data.len() / CHANNELS) as f64;
        let mean: f64 = data
            .chunks_exact(CHANNELS)
            .map(|p| luma(p[0], p[1], p[2]))
            .sum::<f64>()
            / n;
        for v in &mut data {
            *v = (mean + (*v - mean) * contrast).clamp(0.0, 1.0);
        }
    }
    if saturation != 1.0 {
        for p in data.chunks_exact_mut(CHANNELS) {
            let gray = luma(p[0], p[1], p[2]);
            for v in p {
                *v = (gray + (*v - gray) * saturation).clamp(0.0, 1.0);
            }
        }
    }
    Frame::from_parts(image.height(), image.width(), data)
}

/// Rotate about the image center by `angle_deg` with bilinear sampling;
/// positive angles turn content from the +y axis toward the +x axis
/// (clockwise on screen for y-down rasters). Pixels that map outside the
/// source are filled by edge replication.
pub fn rotate(image: &Frame, angle_deg: f64) -> Frame {
    if angle_deg == 0.0 {
        return image.clone();
    }
    let theta = angle_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    let cy = (image.height() as f64 - 1.0) / 2.0;
    let cx = (image.width() as f64 - 1.0) / 2.0;
    let mut data = Vec::with_capacity(image.data().len());
    for y in 0..image.height() {
        let dy = y as f64 - cy;
        for x in 0..image.width() {
            let dx = x as f64 - cx;
            // Inverse mapping: rotate the destination offset by -theta.
            let sx = cx + cos * dx + sin * dy;
            let sy = cy - sin * dx + cos * dy;
            for c in 0..CHANNELS {
                data.push(bilinear(image, sy, sx, c).clamp(0.0, 1.0));
            }
        }
    }
    Frame::from_parts(image.height(), image.width(), data)
}

/// Rotate by a uniform angle in `[-max_deg, +max_deg]`.
pub fn random_rotate<R: Rng + ?Sized>(image: &Frame, rng: &mut R, max_deg: f64) -> Frame {
    let angle: f64 = rng.random_range(-max_deg..=max_deg);
    rotate(image, angle)
}

fn hflip(frame: &Frame) -> Frame {
    let (h, w) = (frame.height(), frame.width());
    let mut data = Vec::with_capacity(frame.data().len());
    for y in 0..h {
        for x in 0..w {
            let p = frame.pixel(y, w - 1 - x);
            data.extend_from_slice(&p);
        }
    }
    Frame::from_parts(h, w, data)
}

/// Resize every frame to `resize_size`, crop `crop_size` at one shared random
/// offset, then flip all frames or none with probability `hflip_prob`.
pub fn spatial_augment<R: Rng + ?Sized>(
    video: &Video,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<Video, MediaError> {
    cfg.validate()?;
    let slack = cfg.resize_size - cfg.crop_size;
    let dy = rng.random_range(0..=slack);
    let dx = rng.random_range(0..=slack);
    let flip = rng.random_bool(cfg.hflip_prob);

    let mut frames = Vec::with_capacity(video.len());
    for frame in video.frames() {
        let resized = resize(frame, cfg.resize_size, cfg.resize_size)?;
        let cropped = crop(&resized, dy, dx, cfg.crop_size, cfg.crop_size);
        frames.push(if flip { hflip(&cropped) } else { cropped });
    }
    Video::new(video.id.clone(), frames, video.glosses.clone())
}

fn crop(frame: &Frame, dy: usize, dx: usize, h: usize, w: usize) -> Frame {
    let mut data = Vec::with_capacity(h * w * CHANNELS);
    for y in 0..h {
        for x in 0..w {
            data.extend_from_slice(&frame.pixel(dy + y, dx + x));
        }
    }
    Frame::from_parts(h, w, data)
}

/// Insert up to `dup_frac_max * L` duplicated frames (each adjacent to its
/// source), then delete up to `del_frac_max * L'` frames, never dropping the
/// last one. Gloss labels are untouched.
pub fn temporal_augment<R: Rng + ?Sized>(
    video: &Video,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<Video, MediaError> {
    cfg.validate()?;
    let len = video.len();
    let max_dup = (cfg.dup_frac_max * len as f64).floor() as usize;
    let n_dup = rng.random_range(0..=max_dup);
    let dup_sources: Vec<usize> = {
        let mut idx = index::sample(rng, len, n_dup).into_vec();
        idx.sort_unstable();
        idx
    };

    let mut frames: Vec<Frame> = Vec::with_capacity(len + n_dup);
    let mut next_dup = dup_sources.iter().peekable();
    for (i, frame) in video.frames().iter().enumerate() {
        frames.push(frame.clone());
        if next_dup.peek() == Some(&&i) {
            frames.push(frame.clone());
            next_dup.next();
        }
    }

    let grown = frames.len();
    let max_del = ((cfg.del_frac_max * grown as f64).floor() as usize).min(grown - 1);
    let n_del = rng.random_range(0..=max_del);
    let mut del: Vec<usize> = index::sample(rng, grown, n_del).into_vec();
    del.sort_unstable();
    for &i in del.iter().rev() {
        frames.remove(i);
    }

    Video::new(video.id.clone(), frames, video.glosses.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_from;

    fn gray_ramp(h: usize, w: usize) -> Frame {
        let mut data = Vec::new();
        for i in 0..h * w {
            let v = i as f64 / (h * w) as f64;
            data.extend_from_slice(&[v, v, v]);
        }
        Frame::new(h, w, data).unwrap()
    }

    fn toy_video(n: usize) -> Video {
        let frames = (0..n)
            .map(|i| Frame::filled(4, 4, [i as f64 / n as f64; 3]).unwrap())
            .collect();
        Video::new("v".into(), frames, vec!["A".into(), "B".into()]).unwrap()
    }

    #[test]
    fn jitter_zero_strength_is_identity() {
        let f = gray_ramp(3, 3);
        let out = color_jitter(&f, &mut rng_from(4), 0.0);
        assert_eq!(out.data(), f.data());
    }

    #[test]
    fn jitter_deterministic_under_seed() {
        let f = gray_ramp(4, 4);
        let a = color_jitter(&f, &mut rng_from(7), 0.4);
        let b = color_jitter(&f, &mut rng_from(7), 0.4);
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn jitter_preserves_gray_chroma() {
        let f = gray_ramp(4, 4);
        let out = color_jitter(&f, &mut rng_from(11), 0.4);
        for p in out.data().chunks_exact(3) {
            assert!((p[0] - p[1]).abs() < 1e-12);
            assert!((p[1] - p[2]).abs() < 1e-12);
        }
    }

    #[test]
    fn rotate_zero_is_identity() {
        let f = gray_ramp(5, 5);
        let out = random_rotate(&f, &mut rng_from(2), 0.0);
        assert_eq!(out.data(), f.data());
    }

    #[test]
    fn rotate_quarter_turn_moves_marked_pixel() {
        // Single bright pixel at (1, 4) in a 9x9 frame, center (4, 4), i.e.
        // offset (dy, dx) = (-3, 0). The forward map sends a source offset
        // (dx, dy) to R(theta) * (dx, dy), so a 90 degree turn takes
        // (0, -3) to (3, 0): the pixel must land at (y, x) = (4, 7).
        let mut data = vec![0.0; 9 * 9 * 3];
        let idx = (9 + 4) * 3;
        data[idx] = 1.0;
        data[idx + 1] = 1.0;
        data[idx + 2] = 1.0;
        let f = Frame::new(9, 9, data).unwrap();
        let out = rotate(&f, 90.0);
        let mut best = (0, 0, 0.0);
        for y in 0..9 {
            for x in 0..9 {
                let v = out.get(y, x, 0);
                if v > best.2 {
                    best = (y, x, v);
                }
            }
        }
        assert!((best.0 as i64 - 4).abs() <= 1, "y = {}", best.0);
        assert!((best.1 as i64 - 7).abs() <= 1, "x = {}", best.1);
        assert!(best.2 > 0.9);
    }

    #[test]
    fn rotate_deterministic_under_seed() {
        let f = gray_ramp(6, 6);
        let a = random_rotate(&f, &mut rng_from(3), 15.0);
        let b = random_rotate(&f, &mut rng_from(3), 15.0);
        assert_eq!(a.data(), b.data());
    }

    fn small_cfg() -> AugmentConfig {
        AugmentConfig {
            crop_size: 3,
            resize_size: 4,
            ..AugmentConfig::default()
        }
    }

    #[test]
    fn spatial_shares_crop_and_flip_across_frames() {
        // Two distinct ramp frames; if offsets or flips differed, the frames
        // would disagree with applying the same transform separately.
        let f0 = gray_ramp(6, 6);
        let f1 = {
            let data: Vec<f64> = f0.data().iter().map(|v| (v * 0.5).clamp(0.0, 1.0)).collect();
            Frame::new(6, 6, data).unwrap()
        };
        let video = Video::new("v".into(), vec![f0.clone(), f1.clone()], vec![]).unwrap();
        let cfg = small_cfg();
        let out = spatial_augment(&video, &cfg, &mut rng_from(21)).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out.height(), 3);
        assert_eq!(out.width(), 3);
        // Halving frame 0's pixels must reproduce frame 1's output exactly:
        // only true when both frames saw the identical offsets and flip.
        let halved: Vec<f64> = out.frames()[0].data().iter().map(|v| v * 0.5).collect();
        for (a, b) in halved.iter().zip(out.frames()[1].data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn spatial_output_dims_match_crop() {
        let video = toy_video(3);
        let cfg = small_cfg();
        let out = spatial_augment(&video, &cfg, &mut rng_from(8)).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out.height(), cfg.crop_size);
        assert_eq!(out.width(), cfg.crop_size);
    }

    #[test]
    fn temporal_respects_length_bounds() {
        let video = toy_video(10);
        let cfg = AugmentConfig::default();
        for seed in 0..50 {
            let out = temporal_augment(&video, &cfg, &mut rng_from(seed)).unwrap();
            assert!(out.len() >= 8 && out.len() <= 12, "len = {}", out.len());
            assert_eq!(out.glosses, video.glosses);
        }
    }

    #[test]
    fn temporal_zero_fracs_is_identity() {
        let video = toy_video(5);
        let cfg = AugmentConfig {
            dup_frac_max: 0.0,
            del_frac_max: 0.0,
            ..AugmentConfig::default()
        };
        let out = temporal_augment(&video, &cfg, &mut rng_from(1)).unwrap();
        assert_eq!(out.frames(), video.frames());
    }

    #[test]
    fn temporal_deterministic_under_seed() {
        let video = toy_video(10);
        let cfg = AugmentConfig::default();
        let a = temporal_augment(&video, &cfg, &mut rng_from(99)).unwrap();
        let b = temporal_augment(&video, &cfg, &mut rng_from(99)).unwrap();
        assert_eq!(a.frames(), b.frames());
    }

    #[test]
    fn temporal_single_frame_survives() {
        let video = toy_video(1);
        let cfg = AugmentConfig::default();
        let out = temporal_augment(&video, &cfg, &mut rng_from(5)).unwrap();
        assert!(!out.is_empty());
    }

    #[test]
    fn temporal_duplicates_are_adjacent() {
        let video = toy_video(10);
        let cfg = AugmentConfig {
            dup_frac_max: 0.2,
            del_frac_max: 0.0,
            ..AugmentConfig::default()
        };
        for seed in 0..20 {
            let out = temporal_augment(&video, &cfg, &mut rng_from(seed)).unwrap();
            // With deletion off, the output must be the source sequence with
            // some frames repeated in place: strip consecutive repeats and
            // recover the original order.
            let mut dedup: Vec<&Frame> = Vec::new();
            for f in out.frames() {
                if dedup.last().map(|l| *l == f) != Some(true) {
                    dedup.push(f);
                }
            }
            let orig: Vec<&Frame> = video.frames().iter().collect();
            assert_eq!(dedup, orig, "seed {seed}");
        }
    }
}
