//! Tab-separated dataset manifests and the condition registries built from
//! them.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index pair into a [`ConditionRegistry`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CameraCondition {
    pub camera: usize,
    pub iso: usize,
}

/// Sorted camera names and ascending ISO levels. Indices into these lists
/// are what the models see, so the registry travels with every checkpoint.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionRegistry {
    pub cameras: Vec<String>,
    pub isos: Vec<u32>,
}

impl ConditionRegistry {
    pub fn new(cameras: impl IntoIterator<Item = String>, isos: impl IntoIterator<Item = u32>) -> Self {
        let mut cameras: Vec<String> = cameras.into_iter().collect();
        cameras.sort();
        cameras.dedup();
        let mut isos: Vec<u32> = isos.into_iter().collect();
        isos.sort_unstable();
        isos.dedup();
        ConditionRegistry { cameras, isos }
    }

    pub fn num_cameras(&self) -> usize {
        self.cameras.len()
    }

    pub fn num_isos(&self) -> usize {
        self.isos.len()
    }

    pub fn condition(&self, camera: &str, iso: u32) -> Result<CameraCondition> {
        let camera_idx = self
            .cameras
            .iter()
            .position(|c| c == camera)
            .ok_or_else(|| Error::UnknownCondition(format!("camera {camera:?} not in registry {:?}", self.cameras)))?;
        let iso_idx = self
            .isos
            .iter()
            .position(|&i| i == iso)
            .ok_or_else(|| Error::UnknownCondition(format!("ISO {iso} not in registry {:?}", self.isos)))?;
        Ok(CameraCondition {
            camera: camera_idx,
            iso: iso_idx,
        })
    }

    pub fn check(&self, cond: CameraCondition) -> Result<()> {
        if cond.camera >= self.cameras.len() {
            return Err(Error::UnknownCondition(format!(
                "camera index {} out of range for {} cameras",
                cond.camera,
                self.cameras.len()
            )));
        }
        if cond.iso >= self.isos.len() {
            return Err(Error::UnknownCondition(format!(
                "ISO index {} out of range for {} ISO levels",
                cond.iso,
                self.isos.len()
            )));
        }
        Ok(())
    }

    pub fn camera_name(&self, cond: CameraCondition) -> &str {
        &self.cameras[cond.camera]
    }

    pub fn iso_value(&self, cond: CameraCondition) -> u32 {
        self.isos[cond.iso]
    }

    /// Every (camera, ISO) combination, in registry order.
    pub fn all_conditions(&self) -> Vec<CameraCondition> {
        let mut out = Vec::with_capacity(self.cameras.len() * self.isos.len());
        for camera in 0..self.cameras.len() {
            for iso in 0..self.isos.len() {
                out.push(CameraCondition { camera, iso });
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub clean_path: PathBuf,
    pub noisy_path: Option<PathBuf>,
    pub camera_name: String,
    pub iso_value: u32,
    pub scene_id: String,
}

/// A validated list of image pairs. Relative paths resolve against `root`,
/// the directory holding the manifest file.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
    pub registry: ConditionRegistry,
}

impl DatasetManifest {
    /// Builds a manifest from in-memory entries, deriving the registry.
    pub fn new(root: impl Into<PathBuf>, entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert((e.clean_path.clone(), e.noisy_path.clone())) {
                return Err(Error::validation(format!(
                    "duplicate row for clean {} / noisy {}",
                    e.clean_path.display(),
                    e.noisy_path.as_deref().map_or("-".into(), |p| p.display().to_string())
                )));
            }
        }
        let registry = ConditionRegistry::new(
            entries.iter().map(|e| e.camera_name.clone()),
            entries.iter().map(|e| e.iso_value),
        );
        Ok(DatasetManifest {
            root: root.into(),
            entries,
            registry,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn condition_of(&self, entry: &ManifestEntry) -> Result<CameraCondition> {
        self.registry.condition(&entry.camera_name, entry.iso_value)
    }

    /// Checks that every referenced image exists.
    pub fn validate_files(&self) -> Result<()> {
        for e in &self.entries {
            for p in std::iter::once(&e.clean_path).chain(e.noisy_path.iter()) {
                let full = self.resolve(p);
                if !full.is_file() {
                    return Err(Error::validation(format!("referenced image missing: {}", full.display())));
                }
            }
        }
        Ok(())
    }

    /// Keeps only rows whose camera matches; the registry is preserved so
    /// condition indices stay stable.
    pub fn filter_camera(&self, camera: &str) -> DatasetManifest {
        DatasetManifest {
            root: self.root.clone(),
            entries: self.entries.iter().filter(|e| e.camera_name == camera).cloned().collect(),
            registry: self.registry.clone(),
        }
    }

    pub fn subset(&self, indices: &[usize]) -> DatasetManifest {
        DatasetManifest {
            root: self.root.clone(),
            entries: indices.iter().map(|&i| self.entries[i].clone()).collect(),
            registry: self.registry.clone(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# clean_path\tnoisy_path\tcamera_name\tiso_value\tscene_id\n");
        for e in &self.entries {
            let noisy = e.noisy_path.as_deref().map_or("-".to_string(), |p| p.display().to_string());
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}",
                e.clean_path.display(),
                noisy,
                e.camera_name,
                e.iso_value,
                e.scene_id
            );
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Reads and validates a manifest file.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let manifest = parse_manifest(&text, &path.display().to_string(), root)?;
    manifest.validate_files()?;
    Ok(manifest)
}

pub(crate) fn parse_manifest(text: &str, origin: &str, root: PathBuf) -> Result<DatasetManifest> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .comment(Some(b'#'))
        .has_headers(false)
        .flexible(true)
        .quoting(false)
        .from_reader(text.as_bytes());
    let mut entries = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Parse {
            path: origin.to_string(),
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |msg: String| Error::Parse {
            path: origin.to_string(),
            line,
            msg,
        };
        let fields: Vec<&str> = rec.iter().map(str::trim).collect();
        if fields.iter().all(|f| f.is_empty()) {
            continue;
        }
        if fields.len() != 5 {
            return Err(bad(format!("expected 5 tab-separated fields, found {}", fields.len())));
        }
        if fields[0].is_empty() || fields[2].is_empty() || fields[4].is_empty() {
            return Err(bad("empty clean_path, camera_name or scene_id".into()));
        }
        let iso_value: u32 = fields[3]
            .parse()
            .map_err(|_| bad(format!("iso_value {:?} is not a non-negative integer", fields[3])))?;
        entries.push(ManifestEntry {
            clean_path: PathBuf::from(fields[0]),
            noisy_path: (fields[1] != "-").then(|| PathBuf::from(fields[1])),
            camera_name: fields[2].to_string(),
            iso_value,
            scene_id: fields[4].to_string(),
        });
    }
    DatasetManifest::new(root, entries)
}
