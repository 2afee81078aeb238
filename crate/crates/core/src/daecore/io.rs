//! Flat binary parameter format: a little-endian header
//! `{version: u32, tensor count: u32, (rows: u32, cols: u32) per tensor}`
//! followed by all values as f64 in row-major order, plus a JSON sidecar
//! carrying the loss configuration.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::{Activation, DaeError, DaeParams, Linear, LossConfig};

pub const FORMAT_VERSION: u32 = 1;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DaeError + '_ {
    move |source| DaeError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Serialize tensors `(data, rows, cols)` into the flat binary layout.
pub fn write_tensors<W: Write>(
    w: &mut W,
    tensors: &[(&[f64], usize, usize)],
) -> std::io::Result<()> {
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for &(data, rows, cols) in tensors {
        debug_assert_eq!(data.len(), rows * cols);
        w.write_all(&(rows as u32).to_le_bytes())?;
        w.write_all(&(cols as u32).to_le_bytes())?;
    }
    for &(data, _, _) in tensors {
        for v in data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Inverse of [`write_tensors`].
pub fn read_tensors<R: Read>(r: &mut R) -> std::io::Result<Vec<(Vec<f64>, usize, usize)>> {
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4)?;
    let version = u32::from_le_bytes(buf4);
    if version != FORMAT_VERSION {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("unsupported format version {version}"),
        ));
    }
    r.read_exact(&mut buf4)?;
    let count = u32::from_le_bytes(buf4) as usize;
    let mut shapes = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut buf4)?;
        let rows = u32::from_le_bytes(buf4) as usize;
        r.read_exact(&mut buf4)?;
        let cols = u32::from_le_bytes(buf4) as usize;
        shapes.push((rows, cols));
    }
    let mut out = Vec::with_capacity(count);
    let mut buf8 = [0u8; 8];
    for (rows, cols) in shapes {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            r.read_exact(&mut buf8)?;
            data.push(f64::from_le_bytes(buf8));
        }
        out.push((data, rows, cols));
    }
    Ok(out)
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Write the parameter file and its `LossConfig` JSON sidecar.
pub fn save_dae(path: &Path, params: &DaeParams, cfg: &LossConfig) -> Result<(), DaeError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let tensors = params.tensors();
    write_tensors(&mut w, &tensors).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))?;

    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(cfg).expect("loss config serializes");
    std::fs::write(&side, json + "\n").map_err(io_err(&side))?;
    Ok(())
}

/// Read a parameter file plus sidecar written by [`save_dae`].
pub fn load_dae(path: &Path) -> Result<(DaeParams, LossConfig), DaeError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);
    let tensors = read_tensors(&mut r).map_err(io_err(path))?;
    let params = params_from_tensors(path, tensors)?;

    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(io_err(&side))?;
    let cfg: LossConfig = serde_json::from_str(&text).map_err(|e| DaeError::BadCheckpoint {
        path: side,
        reason: e.to_string(),
    })?;
    cfg.validate()?;
    Ok((params, cfg))
}

fn params_from_tensors(
    path: &Path,
    tensors: Vec<(Vec<f64>, usize, usize)>,
) -> Result<DaeParams, DaeError> {
    let bad = |reason: String| DaeError::BadCheckpoint {
        path: path.to_path_buf(),
        reason,
    };
    if tensors.len() != 8 {
        return Err(bad(format!("expected 8 tensors, found {}", tensors.len())));
    }
    let mut it = tensors.into_iter();
    let mut layer = |name: &str| -> Result<Linear, DaeError> {
        let (w, rows, cols) = it.next().expect("count checked");
        let (b, b_rows, b_cols) = it.next().expect("count checked");
        if b_rows != rows || b_cols != 1 {
            return Err(bad(format!(
                "{name}: bias shape {b_rows}x{b_cols} does not match weight rows {rows}"
            )));
        }
        Ok(Linear { rows, cols, w, b })
    };
    let enc1 = layer("enc1")?;
    let enc2 = layer("enc2")?;
    let dec1 = layer("dec1")?;
    let dec2 = layer("dec2")?;
    let (d, dh) = (enc1.cols, enc1.rows);
    let consistent = enc2.rows == dh
        && enc2.cols == dh
        && dec1.rows == dh
        && dec1.cols == dh
        && dec2.rows == d
        && dec2.cols == dh;
    if !consistent {
        return Err(bad("layer shapes do not compose D -> Dh -> D".to_string()));
    }
    Ok(DaeParams {
        enc1,
        enc2,
        dec1,
        dec2,
        activation: Activation::Relu,
    })
}
