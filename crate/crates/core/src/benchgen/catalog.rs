//! Scene catalogs and CSLR manifests.
//!
//! A scene catalog is either a directory tree `<class>/<image>.png`, a JSON
//! Lines index with rows `{id, class_label, path}`, or an in-memory image
//! set. A CSLR manifest is JSON Lines with rows
//! `{video_id, frames_dir, mask_dir, glosses}`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::BenchgenError;
use crate::media::{self, Frame, SceneImage};

/// One scene image reference; pixels may live on disk or in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneEntry {
    pub id: String,
    pub class_label: String,
    source: SceneSource,
}

#[derive(Debug, Clone, PartialEq)]
enum SceneSource {
    File(PathBuf),
    Memory(Frame),
}

impl SceneEntry {
    pub fn from_file(id: String, class_label: String, path: PathBuf) -> Self {
        SceneEntry {
            id,
            class_label,
            source: SceneSource::File(path),
        }
    }

    pub fn from_frame(id: String, class_label: String, frame: Frame) -> Self {
        SceneEntry {
            id,
            class_label,
            source: SceneSource::Memory(frame),
        }
    }

    pub fn path(&self) -> Option<&Path> {
        match &self.source {
            SceneSource::File(p) => Some(p),
            SceneSource::Memory(_) => None,
        }
    }

    /// Load pixels (from disk if needed) into a full [`SceneImage`].
    pub fn load(&self) -> Result<SceneImage, BenchgenError> {
        let image = match &self.source {
            SceneSource::Memory(frame) => frame.clone(),
            SceneSource::File(path) => {
                media::io::load_frame_png(path).map_err(|source| BenchgenError::CorruptImage {
                    path: path.to_path_buf(),
                    source,
                })?
            }
        };
        SceneImage::new(self.id.clone(), self.class_label.clone(), image)
            .map_err(BenchgenError::Media)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SceneIndexRow {
    id: String,
    class_label: String,
    path: PathBuf,
}

/// Scene images grouped by class, classes iterated in sorted order.
#[derive(Debug, Clone, Default)]
pub struct SceneCatalog {
    classes: BTreeMap<String, Vec<SceneEntry>>,
}

impl SceneCatalog {
    pub fn from_entries(entries: Vec<SceneEntry>) -> Result<Self, BenchgenError> {
        if entries.is_empty() {
            return Err(BenchgenError::EmptyCatalog);
        }
        let mut classes: BTreeMap<String, Vec<SceneEntry>> = BTreeMap::new();
        for e in entries {
            if e.class_label.is_empty() {
                return Err(BenchgenError::EmptyClassLabel { id: e.id });
            }
            classes.entry(e.class_label.clone()).or_default().push(e);
        }
        for list in classes.values_mut() {
            list.sort_by(|a, b| a.id.cmp(&b.id));
        }
        Ok(SceneCatalog { classes })
    }

    /// Walk a `<class>/<image>.png` directory tree.
    pub fn from_dir(root: &Path) -> Result<Self, BenchgenError> {
        let mut entries = Vec::new();
        let read = |p: &Path| {
            fs::read_dir(p).map_err(|source| BenchgenError::Io {
                path: p.to_path_buf(),
                source,
            })
        };
        for class_dir in read(root)? {
            let class_dir = class_dir
                .map_err(|source| BenchgenError::Io {
                    path: root.to_path_buf(),
                    source,
                })?
                .path();
            if !class_dir.is_dir() {
                continue;
            }
            let class_label = class_dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            for img in read(&class_dir)? {
                let img = img
                    .map_err(|source| BenchgenError::Io {
                        path: class_dir.clone(),
                        source,
                    })?
                    .path();
                if img.extension().map(|e| e == "png").unwrap_or(false) {
                    let stem = img
                        .file_stem()
                        .map(|n| n.to_string_lossy().into_owned())
                        .unwrap_or_default();
                    entries.push(SceneEntry::from_file(
                        format!("{class_label}/{stem}"),
                        class_label.clone(),
                        img,
                    ));
                }
            }
        }
        SceneCatalog::from_entries(entries)
    }

    /// Read a JSON Lines index of `{id, class_label, path}` rows.
    pub fn from_jsonl(path: &Path) -> Result<Self, BenchgenError> {
        let text = fs::read_to_string(path).map_err(|source| BenchgenError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: SceneIndexRow =
                serde_json::from_str(line).map_err(|e| BenchgenError::BadManifestRow {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    reason: e.to_string(),
                })?;
            entries.push(SceneEntry::from_file(row.id, row.class_label, row.path));
        }
        SceneCatalog::from_entries(entries)
    }

    pub fn class_labels(&self) -> Vec<&str> {
        self.classes.keys().map(String::as_str).collect()
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class(&self, label: &str) -> Option<&[SceneEntry]> {
        self.classes.get(label).map(Vec::as_slice)
    }

    pub fn n_images(&self) -> usize {
        self.classes.values().map(Vec::len).sum()
    }
}

/// One source video row of a CSLR manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CslrEntry {
    pub video_id: String,
    pub frames_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_dir: Option<PathBuf>,
    pub glosses: Vec<String>,
}

pub fn load_cslr_manifest(path: &Path) -> Result<Vec<CslrEntry>, BenchgenError> {
    let text = fs::read_to_string(path).map_err(|source| BenchgenError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: CslrEntry =
            serde_json::from_str(line).map_err(|e| BenchgenError::BadManifestRow {
                path: path.to_path_buf(),
                line: lineno + 1,
                reason: e.to_string(),
            })?;
        entries.push(row);
    }
    if entries.is_empty() {
        return Err(BenchgenError::EmptyManifest(path.to_path_buf()));
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media::io::save_frame_png;

    #[test]
    fn catalog_from_dir_groups_by_class() {
        let dir = tempfile::tempdir().unwrap();
        for class in ["beach", "office"] {
            let cdir = dir.path().join(class);
            fs::create_dir_all(&cdir).unwrap();
            for i in 0..3 {
                let f = Frame::filled(2, 2, [0.2 * i as f64; 3]).unwrap();
                save_frame_png(&f, &cdir.join(format!("img_{i}.png"))).unwrap();
            }
        }
        let catalog = SceneCatalog::from_dir(dir.path()).unwrap();
        assert_eq!(catalog.n_classes(), 2);
        assert_eq!(catalog.class_labels(), vec!["beach", "office"]);
        assert_eq!(catalog.n_images(), 6);
        let entry = &catalog.class("beach").unwrap()[0];
        let img = entry.load().unwrap();
        assert_eq!(img.class_label, "beach");
        assert_eq!(img.image.height(), 2);
    }

    #[test]
    fn jsonl_catalog_and_bad_rows() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("x.png");
        save_frame_png(&Frame::filled(1, 1, [0.5; 3]).unwrap(), &img_path).unwrap();
        let index = dir.path().join("scenes.jsonl");
        fs::write(
            &index,
            format!(
                "{}\n",
                serde_json::json!({"id": "a", "class_label": "c", "path": img_path})
            ),
        )
        .unwrap();
        let catalog = SceneCatalog::from_jsonl(&index).unwrap();
        assert_eq!(catalog.n_images(), 1);

        fs::write(&index, "not json\n").unwrap();
        assert!(matches!(
            SceneCatalog::from_jsonl(&index).unwrap_err(),
            BenchgenError::BadManifestRow { line: 1, .. }
        ));
    }

    #[test]
    fn cslr_manifest_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        let entry = CslrEntry {
            video_id: "v1".into(),
            frames_dir: "frames/v1".into(),
            mask_dir: Some("masks/v1".into()),
            glosses: vec!["HELLO".into(), "WORLD".into()],
        };
        fs::write(&path, serde_json::to_string(&entry).unwrap() + "\n").unwrap();
        let loaded = load_cslr_manifest(&path).unwrap();
        assert_eq!(loaded, vec![entry]);
    }

    #[test]
    fn empty_manifest_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        fs::write(&path, "\n").unwrap();
        assert!(matches!(
            load_cslr_manifest(&path).unwrap_err(),
            BenchgenError::EmptyManifest(_)
        ));
    }

    #[test]
    fn corrupt_image_error_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("bad.png");
        fs::write(&img_path, b"not a png").unwrap();
        let entry = SceneEntry::from_file("x".into(), "c".into(), img_path.clone());
        let err = entry.load().unwrap_err();
        assert!(err.to_string().contains("bad.png"));
    }
}
