//! 8-bit PNG interchange. A video on disk is a directory of zero-padded
//! numbered frames (`000001.png`, ...); masks are grayscale with 255 =
//! signer. Conversion to the normalized pixel domain is `v / 255`, back is
//! round-half-up.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};

use super::{Frame, Mask, MediaError, Video};

fn to_unit(v: u8) -> f64 {
    f64::from(v) / 255.0
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn load_frame_png(path: &Path) -> Result<Frame, MediaError> {
    let img = image::open(path)
        .map_err(|source| MediaError::ImageRead {
            path: path.to_path_buf(),
            source,
        })?
        .into_rgb8();
    let (w, h) = img.dimensions();
    let data = img.as_raw().iter().map(|&v| to_unit(v)).collect();
    Ok(Frame::from_parts(h as usize, w as usize, data))
}

pub fn save_frame_png(frame: &Frame, path: &Path) -> Result<(), MediaError> {
    let bytes: Vec<u8> = frame.data().iter().map(|&v| to_byte(v)).collect();
    let img = RgbImage::from_raw(frame.width() as u32, frame.height() as u32, bytes)
        .expect("buffer length matches dimensions");
    img.save(path).map_err(|source| MediaError::ImageWrite {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_mask_png(path: &Path) -> Result<Mask, MediaError> {
    let img = image::open(path)
        .map_err(|source| MediaError::ImageRead {
            path: path.to_path_buf(),
            source,
        })?
        .into_luma8();
    let (w, h) = img.dimensions();
    let alpha = img.as_raw().iter().map(|&v| to_unit(v)).collect();
    Mask::new(h as usize, w as usize, alpha)
}

pub fn save_mask_png(mask: &Mask, path: &Path) -> Result<(), MediaError> {
    let bytes: Vec<u8> = mask.alpha().iter().map(|&v| to_byte(v)).collect();
    let img = GrayImage::from_raw(mask.width() as u32, mask.height() as u32, bytes)
        .expect("buffer length matches dimensions");
    img.save(path).map_err(|source| MediaError::ImageWrite {
        path: path.to_path_buf(),
        source,
    })
}

/// Frame filename for 1-based index `i`: `000001.png`, `000002.png`, ...
pub fn frame_file_name(i: usize) -> String {
    format!("{i:06}.png")
}

/// Sorted list of `.png` paths in a frame directory.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>, MediaError> {
    let entries = fs::read_dir(dir).map_err(|source| MediaError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "png").unwrap_or(false))
        .collect();
    if paths.is_empty() {
        return Err(MediaError::EmptyFrameDir(dir.to_path_buf()));
    }
    paths.sort();
    Ok(paths)
}

pub fn load_video_dir(id: &str, dir: &Path, glosses: Vec<String>) -> Result<Video, MediaError> {
    let mut frames = Vec::new();
    for path in list_frames(dir)? {
        frames.push(load_frame_png(&path)?);
    }
    Video::new(id.to_string(), frames, glosses)
}

/// Write a video's frames into `dir` using the numbered layout.
pub fn save_video_frames(video: &Video, dir: &Path) -> Result<(), MediaError> {
    fs::create_dir_all(dir).map_err(|source| MediaError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    for (i, frame) in video.frames().iter().enumerate() {
        save_frame_png(frame, &dir.join(frame_file_name(i + 1)))?;
    }
    Ok(())
}

pub fn load_mask_dir(dir: &Path) -> Result<Vec<Mask>, MediaError> {
    let mut masks = Vec::new();
    for path in list_frames(dir)? {
        masks.push(load_mask_png(&path)?);
    }
    Ok(masks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_png_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.png");
        // Values already on the 8-bit grid survive the roundtrip bit-exactly.
        let data: Vec<f64> = (0..4 * 3 * 3).map(|i| (i % 256) as f64 / 255.0).collect();
        let frame = Frame::new(4, 3, data).unwrap();
        save_frame_png(&frame, &path).unwrap();
        let back = load_frame_png(&path).unwrap();
        assert_eq!(back.data(), frame.data());
    }

    #[test]
    fn byte_conversion_rounds_half_up() {
        assert_eq!(to_byte(0.5 / 255.0), 1);
        assert_eq!(to_byte(0.49 / 255.0), 0);
        assert_eq!(to_byte(1.0), 255);
        assert_eq!(to_byte(0.0), 0);
    }

    #[test]
    fn video_dir_roundtrip_preserves_order() {
        let dir = tempfile::tempdir().unwrap();
        let frames: Vec<Frame> = (0..12)
            .map(|i| Frame::filled(2, 2, [i as f64 / 255.0 * 20.0; 3]).unwrap())
            .collect();
        let video = Video::new("v1".into(), frames, vec!["HELLO".into()]).unwrap();
        save_video_frames(&video, dir.path()).unwrap();
        let back = load_video_dir("v1", dir.path(), video.glosses.clone()).unwrap();
        assert_eq!(back.len(), 12);
        for (a, b) in back.frames().iter().zip(video.frames()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 0.5 / 255.0 + 1e-12);
            }
        }
    }

    #[test]
    fn mask_png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let mask = Mask::new(2, 2, vec![0.0, 1.0, 128.0 / 255.0, 3.0 / 255.0]).unwrap();
        save_mask_png(&mask, &path).unwrap();
        let back = load_mask_png(&path).unwrap();
        assert_eq!(back.alpha(), mask.alpha());
    }

    #[test]
    fn empty_dir_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            list_frames(dir.path()).unwrap_err(),
            MediaError::EmptyFrameDir(_)
        ));
    }
}
