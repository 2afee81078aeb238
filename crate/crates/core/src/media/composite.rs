//! Matting composite, mixup background randomization, and bilinear resize.

use rand::Rng;

use super::{AugmentConfig, Frame, Mask, MediaError, CHANNELS};

/// Convex combination `m*fg + (1-m)*bg`, clamped to the per-pixel hull so
/// floating-point spill can never push a value past either input.
#[inline]
fn convex(fg: f64, bg: f64, m: f64) -> f64 {
    let v = m * fg + (1.0 - m) * bg;
    v.clamp(fg.min(bg), fg.max(bg))
}

/// Replace the background of `sign` with `scene` through a per-pixel alpha
/// mask: `out = mask*sign + (1-mask)*scene`.
pub fn composite_matting(sign: &Frame, scene: &Frame, mask: &Mask) -> Result<Frame, MediaError> {
    sign.same_dims(scene)?;
    mask.matches_frame(sign)?;
    let mut data = Vec::with_capacity(sign.data().len());
    for (i, &m) in mask.alpha().iter().enumerate() {
        let base = i * CHANNELS;
        for c in 0..CHANNELS {
            data.push(convex(sign.data()[base + c], scene.data()[base + c], m));
        }
    }
    Ok(Frame::from_parts(sign.height(), sign.width(), data))
}

/// Mask-free background randomization: `out = lambda*scene + (1-lambda)*sign`.
///
/// Computed as a matting composite with the constant mask `1-lambda`, making
/// the two operations pixel-exact aliases of one another.
pub fn mixup_background(sign: &Frame, scene: &Frame, lambda: f64) -> Result<Frame, MediaError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(MediaError::LambdaOutOfRange(lambda));
    }
    sign.same_dims(scene)?;
    let m = 1.0 - lambda;
    let mut data = Vec::with_capacity(sign.data().len());
    for (s, b) in sign.data().iter().zip(scene.data()) {
        data.push(convex(*s, *b, m));
    }
    Ok(Frame::from_parts(sign.height(), sign.width(), data))
}

/// Uniform mixup weight in `[lambda_min, lambda_max]`.
pub fn sample_lambda<R: Rng + ?Sized>(cfg: &AugmentConfig, rng: &mut R) -> f64 {
    rng.random_range(cfg.lambda_min..=cfg.lambda_max)
}

/// Bilinear sample with edge replication; `sy`/`sx` are continuous source
/// coordinates.
pub(super) fn bilinear(frame: &Frame, sy: f64, sx: f64, c: usize) -> f64 {
    let max_y = (frame.height() - 1) as f64;
    let max_x = (frame.width() - 1) as f64;
    let sy = sy.clamp(0.0, max_y);
    let sx = sx.clamp(0.0, max_x);
    let y0 = sy.floor();
    let x0 = sx.floor();
    let fy = sy - y0;
    let fx = sx - x0;
    let y0 = y0 as usize;
    let x0 = x0 as usize;
    let y1 = (y0 + 1).min(frame.height() - 1);
    let x1 = (x0 + 1).min(frame.width() - 1);
    let v00 = frame.get(y0, x0, c);
    let v01 = frame.get(y0, x1, c);
    let v10 = frame.get(y1, x0, c);
    let v11 = frame.get(y1, x1, c);
    let top = v00 * (1.0 - fx) + v01 * fx;
    let bot = v10 * (1.0 - fx) + v11 * fx;
    top * (1.0 - fy) + bot * fy
}

/// Bilinear resize to `h` x `w` (pixel-center convention).
pub fn resize(image: &Frame, h: usize, w: usize) -> Result<Frame, MediaError> {
    if h == 0 {
        return Err(MediaError::BadTargetSize(h, "height"));
    }
    if w == 0 {
        return Err(MediaError::BadTargetSize(w, "width"));
    }
    if h == image.height() && w == image.width() {
        return Ok(image.clone());
    }
    let scale_y = image.height() as f64 / h as f64;
    let scale_x = image.width() as f64 / w as f64;
    let mut data = Vec::with_capacity(h * w * CHANNELS);
    for y in 0..h {
        let sy = (y as f64 + 0.5) * scale_y - 0.5;
        for x in 0..w {
            let sx = (x as f64 + 0.5) * scale_x - 0.5;
            for c in 0..CHANNELS {
                data.push(bilinear(image, sy, sx, c).clamp(0.0, 1.0));
            }
        }
    }
    Ok(Frame::from_parts(h, w, data))
}
