use crate::data_io::manifest::{CameraCondition, DatasetManifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::image::Image;

/// A clean image, its optional noisy counterpart and acquisition metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub clean: Image,
    pub noisy: Option<Image>,
    pub condition: CameraCondition,
    pub scene_id: String,
}

impl ImagePair {
    pub fn new(clean: Image, noisy: Option<Image>, condition: CameraCondition, scene_id: impl Into<String>) -> Result<Self> {
        if let Some(n) = &noisy {
            if n.dims() != clean.dims() {
                return Err(Error::validation(format!(
                    "clean is {:?} but noisy is {:?}",
                    clean.dims(),
                    n.dims()
                )));
            }
        }
        if !clean.is_finite() || noisy.as_ref().is_some_and(|n| !n.is_finite()) {
            return Err(Error::validation("image contains non-finite values"));
        }
        Ok(ImagePair {
            clean,
            noisy,
            condition,
            scene_id: scene_id.into(),
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.clean.dims()
    }

    /// `noisy − clean`, when a noisy image is present.
    pub fn noise(&self) -> Option<Image> {
        self.noisy.as_ref().map(|n| n.zip_map(&self.clean, |a, b| a - b))
    }

    pub fn require_noise(&self) -> Result<Image> {
        self.noise()
            .ok_or_else(|| Error::validation(format!("scene {} has no noisy image", self.scene_id)))
    }

    pub(crate) fn map_images(&self, f: impl Fn(&Image) -> Image) -> ImagePair {
        ImagePair {
            clean: f(&self.clean),
            noisy: self.noisy.as_ref().map(&f),
            condition: self.condition,
            scene_id: self.scene_id.clone(),
        }
    }
}

/// Decodes the images referenced by one manifest row.
pub fn load_pair(manifest: &DatasetManifest, entry: &ManifestEntry) -> Result<ImagePair> {
    let condition = manifest.condition_of(entry)?;
    let clean = Image::load_png(&manifest.resolve(&entry.clean_path))?;
    let noisy = match &entry.noisy_path {
        Some(p) => Some(Image::load_png(&manifest.resolve(p))?),
        None => None,
    };
    ImagePair::new(clean, noisy, condition, entry.scene_id.clone())
}

/// Loads every row in manifest order.
pub fn load_all(manifest: &DatasetManifest) -> Result<Vec<ImagePair>> {
    manifest.entries.iter().map(|e| load_pair(manifest, e)).collect()
}
