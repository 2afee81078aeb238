//! Benchmark synthesis: uniform scene-subset selection, random scene
//! assignment, matting, and multi-split emission with deterministic seeding.
//!
//! All randomness flows from `(master_seed, split_id)`-derived streams and
//! the per-split assignment is fixed before any pixels are touched, so
//! output bytes are independent of worker count and iteration order.

mod catalog;

pub use catalog::{load_cslr_manifest, CslrEntry, SceneCatalog, SceneEntry};

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::media::{self, MediaError};
use crate::seeding::{self, DetRng};

#[derive(Debug, Error)]
pub enum BenchgenError {
    #[error("scene catalog is empty")]
    EmptyCatalog,
    #[error("scene entry {id} has an empty class label")]
    EmptyClassLabel { id: String },
    #[error("scene subset exhausted before video {video_id} could be assigned")]
    SubsetExhausted { video_id: String },
    #[error("video {video_id} is not part of this split's assignment")]
    UnknownVideo { video_id: String },
    #[error("duplicate video id {0} in manifest")]
    DuplicateVideoId(String),
    #[error("video {video_id} has no mask directory but masks are required")]
    MissingMaskDir { video_id: String },
    #[error("video {video_id} is missing a mask for frame {frame_index}")]
    MissingMask { video_id: String, frame_index: usize },
    #[error("video {video_id} has {frames} frames but {masks} masks")]
    MaskCountMismatch {
        video_id: String,
        frames: usize,
        masks: usize,
    },
    #[error("corrupt image {path}: {source}")]
    CorruptImage { path: PathBuf, source: MediaError },
    #[error("bad manifest row at {path}:{line}: {reason}")]
    BadManifestRow {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("manifest {0} contains no rows")]
    EmptyManifest(PathBuf),
    #[error("invalid benchmark config: {0}")]
    BadConfig(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Media(#[from] MediaError),
}

/// Per-video output row of a generated split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub video_id: String,
    pub frames_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_dir: Option<PathBuf>,
    pub glosses: Vec<String>,
    pub scene_class: String,
    pub scene_image_id: String,
    pub split_id: u32,
    pub seed: u64,
}

/// Benchmark generation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub master_seed: u64,
    pub n_splits: u32,
    /// Scene images sampled per class for the training-side pool.
    pub k_per_class: usize,
    /// First split id; lets Dev and Test subsets run on disjoint id ranges
    /// (and therefore disjoint seed lineages).
    pub first_split_id: u32,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            master_seed: 0,
            n_splits: 3,
            k_per_class: 10,
            first_split_id: 0,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<(), BenchgenError> {
        if self.n_splits < 1 {
            return Err(BenchgenError::BadConfig("n_splits must be >= 1".into()));
        }
        if self.k_per_class < 1 {
            return Err(BenchgenError::BadConfig("k_per_class must be >= 1".into()));
        }
        Ok(())
    }
}

/// Select a scene subset the size of the video pool, with per-class counts
/// differing by at most one. Classes with too few images are sampled with
/// replacement (with a warning); otherwise sampling is without replacement.
pub fn select_scene_subset(
    catalog: &SceneCatalog,
    n_videos: usize,
    rng: &mut DetRng,
) -> Result<Vec<SceneEntry>, BenchgenError> {
    if catalog.n_classes() == 0 {
        return Err(BenchgenError::EmptyCatalog);
    }
    let labels = catalog.class_labels();
    let n_classes = labels.len();
    let base = n_videos / n_classes;
    let remainder = n_videos % n_classes;

    // Which classes receive one extra image.
    let extra = index::sample(rng, n_classes, remainder).into_vec();
    let mut counts = vec![base; n_classes];
    for i in extra {
        counts[i] += 1;
    }

    let mut subset = Vec::with_capacity(n_videos);
    for (label, count) in labels.iter().zip(counts) {
        let images = catalog.class(label).expect("label from catalog");
        if images.len() >= count {
            let mut picks = index::sample(rng, images.len(), count).into_vec();
            picks.sort_unstable();
            subset.extend(picks.into_iter().map(|i| images[i].clone()));
        } else {
            log::warn!(
                "scene class {label} has {} images but {count} were requested; \
                 sampling with replacement",
                images.len()
            );
            for _ in 0..count {
                let i = rng.random_range(0..images.len());
                subset.push(images[i].clone());
            }
        }
    }
    Ok(subset)
}

/// The fixed video -> scene assignment of one split.
///
/// Built once per split: videos (in sorted id order) each draw a uniformly
/// random class that still has unassigned subset entries, then a uniformly
/// random image of that class. Every subset entry is consumed exactly once,
/// and the whole mapping is a pure function of the subset, the sorted video
/// ids, and the seed.
#[derive(Debug)]
pub struct SceneAssigner {
    assignments: BTreeMap<String, SceneEntry>,
}

impl SceneAssigner {
    pub fn new(
        subset: Vec<SceneEntry>,
        video_ids: &[String],
        seed: u64,
    ) -> Result<Self, BenchgenError> {
        let mut ids: Vec<&String> = video_ids.iter().collect();
        ids.sort();
        if ids.len() > subset.len() {
            return Err(BenchgenError::SubsetExhausted {
                video_id: ids[subset.len()].clone(),
            });
        }

        let mut by_class: BTreeMap<String, Vec<SceneEntry>> = BTreeMap::new();
        for e in subset {
            by_class.entry(e.class_label.clone()).or_default().push(e);
        }

        let mut rng = seeding::rng_from(seed);
        let mut assignments = BTreeMap::new();
        for id in ids {
            let classes: Vec<String> = by_class.keys().cloned().collect();
            let class = &classes[rng.random_range(0..classes.len())];
            let pool = by_class.get_mut(class).expect("nonempty class");
            let entry = pool.swap_remove(rng.random_range(0..pool.len()));
            if pool.is_empty() {
                by_class.remove(class);
            }
            assignments.insert(id.clone(), entry);
        }
        Ok(SceneAssigner { assignments })
    }

    /// Consume the assignment for one video.
    pub fn assign(&mut self, video_id: &str) -> Result<SceneEntry, BenchgenError> {
        if self.assignments.is_empty() {
            return Err(BenchgenError::SubsetExhausted {
                video_id: video_id.to_string(),
            });
        }
        self.assignments
            .remove(video_id)
            .ok_or_else(|| BenchgenError::UnknownVideo {
                video_id: video_id.to_string(),
            })
    }

    /// Look up without consuming.
    pub fn peek(&self, video_id: &str) -> Option<&SceneEntry> {
        self.assignments.get(video_id)
    }

    pub fn remaining(&self) -> usize {
        self.assignments.len()
    }
}

/// Generate one split: composite every video against its assigned scene and
/// write frames plus a sorted JSON Lines manifest under `out_dir`.
pub fn generate_split(
    manifest: &[CslrEntry],
    catalog: &SceneCatalog,
    config: &BenchmarkConfig,
    split_id: u32,
    out_dir: &Path,
) -> Result<Vec<SampleRecord>, BenchgenError> {
    config.validate()?;
    let mut seen = std::collections::BTreeSet::new();
    for entry in manifest {
        if !seen.insert(&entry.video_id) {
            return Err(BenchgenError::DuplicateVideoId(entry.video_id.clone()));
        }
        if entry.mask_dir.is_none() {
            return Err(BenchgenError::MissingMaskDir {
                video_id: entry.video_id.clone(),
            });
        }
    }

    let split_seed = seeding::split_seed(config.master_seed, split_id);
    let mut subset_rng = seeding::rng_from(seeding::named_seed(split_seed, "subset"));
    let subset = select_scene_subset(catalog, manifest.len(), &mut subset_rng)?;
    let ids: Vec<String> = manifest.iter().map(|e| e.video_id.clone()).collect();
    let mut assigner =
        SceneAssigner::new(subset, &ids, seeding::named_seed(split_seed, "assign"))?;

    let jobs: Vec<(&CslrEntry, SceneEntry)> = manifest
        .iter()
        .map(|entry| assigner.assign(&entry.video_id).map(|scene| (entry, scene)))
        .collect::<Result<_, _>>()?;

    fs::create_dir_all(out_dir).map_err(|source| BenchgenError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;

    let mut records: Vec<SampleRecord> = jobs
        .into_par_iter()
        .map(|(entry, scene)| composite_video(entry, scene, config, split_id, out_dir))
        .collect::<Result<_, _>>()?;

    records.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    write_manifest(&records, &out_dir.join("manifest.jsonl"))?;
    Ok(records)
}

fn composite_video(
    entry: &CslrEntry,
    scene: SceneEntry,
    config: &BenchmarkConfig,
    split_id: u32,
    out_dir: &Path,
) -> Result<SampleRecord, BenchgenError> {
    let video_id = &entry.video_id;
    let frame_paths = media::io::list_frames(&entry.frames_dir)?;
    let mask_dir = entry.mask_dir.as_ref().expect("checked by caller");
    let mask_paths = match media::io::list_frames(mask_dir) {
        Ok(p) => p,
        Err(MediaError::EmptyFrameDir(_)) => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    if mask_paths.len() < frame_paths.len() {
        return Err(BenchgenError::MissingMask {
            video_id: video_id.clone(),
            frame_index: mask_paths.len() + 1,
        });
    }
    if mask_paths.len() > frame_paths.len() {
        return Err(BenchgenError::MaskCountMismatch {
            video_id: video_id.clone(),
            frames: frame_paths.len(),
            masks: mask_paths.len(),
        });
    }

    let scene_img = scene.load()?;
    let video_out = out_dir.join(video_id);
    fs::create_dir_all(&video_out).map_err(|source| BenchgenError::Io {
        path: video_out.clone(),
        source,
    })?;

    let mut scene_resized: Option<crate::media::Frame> = None;
    for (i, (frame_path, mask_path)) in frame_paths.iter().zip(&mask_paths).enumerate() {
        let frame = media::io::load_frame_png(frame_path).map_err(|source| {
            BenchgenError::CorruptImage {
                path: frame_path.clone(),
                source,
            }
        })?;
        let mask = media::io::load_mask_png(mask_path).map_err(|source| {
            BenchgenError::CorruptImage {
                path: mask_path.clone(),
                source,
            }
        })?;
        let scene_frame = match &scene_resized {
            Some(s) if s.height() == frame.height() && s.width() == frame.width() => s.clone(),
            _ => {
                let resized = media::resize(&scene_img.image, frame.height(), frame.width())?;
                scene_resized = Some(resized.clone());
                resized
            }
        };
        let composited = media::composite_matting(&frame, &scene_frame, &mask)?;
        media::io::save_frame_png(&composited, &video_out.join(media::io::frame_file_name(i + 1)))?;
    }

    Ok(SampleRecord {
        video_id: video_id.clone(),
        frames_dir: video_out,
        mask_dir: entry.mask_dir.clone(),
        glosses: entry.glosses.clone(),
        scene_class: scene.class_label.clone(),
        scene_image_id: scene.id.clone(),
        split_id,
        seed: seeding::video_seed(config.master_seed, split_id, video_id),
    })
}

/// Run `generate_split` for `first_split_id .. first_split_id + n_splits`,
/// each under `out_dir/split_<id>`.
pub fn generate_benchmark(
    manifest: &[CslrEntry],
    catalog: &SceneCatalog,
    config: &BenchmarkConfig,
    out_dir: &Path,
) -> Result<Vec<Vec<SampleRecord>>, BenchgenError> {
    config.validate()?;
    let mut splits = Vec::with_capacity(config.n_splits as usize);
    for i in 0..config.n_splits {
        let split_id = config.first_split_id + i;
        let split_dir = out_dir.join(format!("split_{split_id}"));
        splits.push(generate_split(manifest, catalog, config, split_id, &split_dir)?);
    }
    Ok(splits)
}

/// Training-side pool: exactly `k` images per class (with replacement when a
/// class is smaller than `k`).
pub fn select_training_pool(
    catalog: &SceneCatalog,
    k: usize,
    rng: &mut DetRng,
) -> Result<Vec<SceneEntry>, BenchgenError> {
    if k < 1 {
        return Err(BenchgenError::BadConfig("k must be >= 1".into()));
    }
    if catalog.n_classes() == 0 {
        return Err(BenchgenError::EmptyCatalog);
    }
    let mut pool = Vec::with_capacity(k * catalog.n_classes());
    for label in catalog.class_labels() {
        let images = catalog.class(label).expect("label from catalog");
        if images.len() >= k {
            let mut picks = index::sample(rng, images.len(), k).into_vec();
            picks.sort_unstable();
            pool.extend(picks.into_iter().map(|i| images[i].clone()));
        } else {
            log::warn!(
                "scene class {label} has {} images but k={k}; sampling with replacement",
                images.len()
            );
            for _ in 0..k {
                let i = rng.random_range(0..images.len());
                pool.push(images[i].clone());
            }
        }
    }
    Ok(pool)
}

/// Write records as JSON Lines (already sorted by the caller).
pub fn write_manifest(records: &[SampleRecord], path: &Path) -> Result<(), BenchgenError> {
    let file = fs::File::create(path).map_err(|source| BenchgenError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("record serializes");
        writeln!(w, "{line}").map_err(|source| BenchgenError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    }
    w.flush().map_err(|source| BenchgenError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Read back a manifest written by [`write_manifest`].
pub fn read_manifest(path: &Path) -> Result<Vec<SampleRecord>, BenchgenError> {
    let text = fs::read_to_string(path).map_err(|source| BenchgenError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: SampleRecord =
            serde_json::from_str(line).map_err(|e| BenchgenError::BadManifestRow {
                path: path.to_path_buf(),
                line: lineno + 1,
                reason: e.to_string(),
            })?;
        out.push(row);
    }
    Ok(out)
}
