//! Grouped-directory datasets: `<root>/<group_id>/{front,side,back}.png` plus `<root>/manifest.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image::ImageTensor;
use super::render::{render_scene, SceneSpec};
use super::view::ViewLabel;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
/// Resolution of images written by [`generate_dataset`].
pub const DATASET_IMAGE_SIZE: usize = 128;

/// Where the pixels of one view live.
#[derive(Debug, Clone)]
pub enum ImageSource {
    File(PathBuf),
    Memory(Arc<ImageTensor>),
}

impl ImageSource {
    pub fn load(&self) -> Result<ImageTensor> {
        match self {
            ImageSource::File(path) => ImageTensor::load_png(path),
            ImageSource::Memory(img) => Ok(img.as_ref().clone()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ImageGroup {
    pub group_id: String,
    pub views: BTreeMap<ViewLabel, ImageSource>,
    pub metadata: BTreeMap<String, String>,
}

impl ImageGroup {
    pub fn is_complete(&self) -> bool {
        ViewLabel::ALL.iter().all(|v| self.views.contains_key(v))
    }

    pub fn missing_view(&self) -> Option<ViewLabel> {
        ViewLabel::ALL
            .into_iter()
            .find(|v| !self.views.contains_key(v))
    }

    /// Loads one view resized to `size` x `size`.
    pub fn load_view(&self, view: ViewLabel, size: usize) -> Result<ImageTensor> {
        let source = self
            .views
            .get(&view)
            .ok_or_else(|| Error::IncompleteGroup {
                group_id: self.group_id.clone(),
                missing: view.to_string(),
            })?;
        source.load()?.resize_square(size)
    }

    /// Shape class recorded by the synthetic generator, when present.
    pub fn shape_class(&self) -> Option<usize> {
        self.metadata
            .get("shape_class")
            .and_then(|s| s.parse().ok())
    }

    /// Builds an in-memory group by rendering all three views of `spec`.
    pub fn from_scene(group_id: impl Into<String>, spec: &SceneSpec, size: usize) -> Result<Self> {
        let mut views = BTreeMap::new();
        for view in ViewLabel::ALL {
            views.insert(
                view,
                ImageSource::Memory(Arc::new(render_scene(spec, view, size)?)),
            );
        }
        let mut metadata = BTreeMap::new();
        metadata.insert(
            "shape_class".to_string(),
            spec.shape_class.index().to_string(),
        );
        Ok(Self {
            group_id: group_id.into(),
            views,
            metadata,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestGroup {
    pub group_id: String,
    pub views: BTreeMap<ViewLabel, String>,
    pub shape_class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub seed: u64,
    pub groups: Vec<ManifestGroup>,
}

impl DatasetManifest {
    pub fn read(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Deterministic scene list for a dataset seed.
pub fn dataset_scenes(n_groups: usize, seed: u64) -> Vec<SceneSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_groups).map(|_| SceneSpec::random(&mut rng)).collect()
}

pub fn group_id(index: usize) -> String {
    format!("g{index:05}")
}

/// Renders `n_groups` synthetic groups at 128 x 128 into `out_dir` and writes the manifest.
pub fn generate_dataset(n_groups: usize, seed: u64, out_dir: &Path) -> Result<DatasetManifest> {
    if n_groups == 0 {
        return Err(Error::InvalidArgument("n_groups must be at least 1".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut groups = Vec::with_capacity(n_groups);
    for (i, spec) in dataset_scenes(n_groups, seed).iter().enumerate() {
        let id = group_id(i);
        let dir = out_dir.join(&id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut views = BTreeMap::new();
        for view in ViewLabel::ALL {
            let file = format!("{}.png", view.name());
            render_scene(spec, view, DATASET_IMAGE_SIZE)?.save_png(&dir.join(&file))?;
            views.insert(view, format!("{id}/{file}"));
        }
        groups.push(ManifestGroup {
            group_id: id,
            views,
            shape_class: spec.shape_class.index(),
        });
    }
    let manifest = DatasetManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        seed,
        groups,
    };
    let path = out_dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// A group dropped during loading, with the reason.
#[derive(Debug, Clone, PartialEq)]
pub struct Exclusion {
    pub group_id: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub groups: Vec<ImageGroup>,
    pub exclusions: Vec<Exclusion>,
}

/// Reads every subdirectory of `root` as one group. Incomplete or unreadable groups are
/// excluded and reported; extra files (e.g. a fourth "full body" view) are ignored.
pub fn load_grouped_dataset(root: &Path) -> Result<LoadedDataset> {
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::NoGroups(root.to_path_buf()));
    }

    let shape_classes: BTreeMap<String, usize> = match DatasetManifest::read(root) {
        Ok(m) => m
            .groups
            .into_iter()
            .map(|g| (g.group_id, g.shape_class))
            .collect(),
        Err(_) => BTreeMap::new(),
    };

    let mut groups = Vec::new();
    let mut exclusions = Vec::new();
    for dir in dirs {
        let group_id = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut views = BTreeMap::new();
        for view in ViewLabel::ALL {
            let path = dir.join(format!("{}.png", view.name()));
            if path.is_file() {
                views.insert(view, ImageSource::File(path));
            }
        }
        let mut group = ImageGroup {
            group_id: group_id.clone(),
            views,
            metadata: BTreeMap::new(),
        };
        if let Some(missing) = group.missing_view() {
            log::warn!("excluding group {group_id}: missing {missing} view");
            exclusions.push(Exclusion {
                group_id,
                reason: format!("missing {missing} view"),
            });
            continue;
        }
        if let Some(err) = group.views.values().find_map(|s| s.load().err()) {
            log::warn!("excluding group {group_id}: {err}");
            exclusions.push(Exclusion {
                group_id,
                reason: err.to_string(),
            });
            continue;
        }
        if let Some(class) = shape_classes.get(&group_id) {
            group
                .metadata
                .insert("shape_class".into(), class.to_string());
        }
        groups.push(group);
    }
    if groups.is_empty() {
        return Err(Error::NoGroups(root.to_path_buf()));
    }
    Ok(LoadedDataset { groups, exclusions })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generates_and_counts_files() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = generate_dataset(4, 1, dir.path()).unwrap();
        assert_eq!(manifest.groups.len(), 4);
        let pngs = walk_pngs(dir.path());
        assert_eq!(pngs, 12);
        assert_eq!(DatasetManifest::read(dir.path()).unwrap(), manifest);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = generate_dataset(3, 9, a.path()).unwrap();
        let mb = generate_dataset(3, 9, b.path()).unwrap();
        assert_eq!(ma, mb);
        for g in &ma.groups {
            for rel in g.views.values() {
                assert_eq!(
                    fs::read(a.path().join(rel)).unwrap(),
                    fs::read(b.path().join(rel)).unwrap()
                );
            }
        }
    }

    #[test]
    fn empty_root_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_grouped_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("no groups found"));
    }

    #[test]
    fn incomplete_and_corrupt_groups_are_excluded() {
        let dir = tempfile::tempdir().unwrap();
        generate_dataset(5, 2, dir.path()).unwrap();
        fs::remove_file(dir.path().join("g00001/back.png")).unwrap();
        let loaded = load_grouped_dataset(dir.path()).unwrap();
        assert_eq!(loaded.groups.len(), 4);
        assert_eq!(loaded.exclusions.len(), 1);
        assert_eq!(loaded.exclusions[0].group_id, "g00001");

        fs::write(dir.path().join("g00002/side.png"), b"not a png").unwrap();
        let loaded = load_grouped_dataset(dir.path()).unwrap();
        assert_eq!(loaded.groups.len(), 3);
        assert_eq!(loaded.exclusions.len(), 2);
    }

    fn walk_pngs(root: &Path) -> usize {
        let mut n = 0;
        for entry in fs::read_dir(root).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                n += walk_pngs(&p);
            } else if p.extension().is_some_and(|e| e == "png") {
                n += 1;
            }
        }
        n
    }
}
