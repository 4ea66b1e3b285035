use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data_io::{CameraCondition, DatasetManifest, ManifestEntry, oracle::MANIFEST_NAME};
use crate::error::{Error, Result};
use crate::gan::end_to_end_synthesize;
use crate::image::Image;
use crate::train::model::NoiseModel;

/// How each synthesized image picks its camera settings.
#[derive(Clone, Debug, PartialEq)]
pub enum ConditionPolicy {
    Fixed { camera: String, iso: u32 },
    /// Camera and ISO drawn independently and uniformly from the registry.
    Uniform,
}

impl ConditionPolicy {
    /// Parses `uniform` or `CAMERA:ISO`.
    pub fn parse(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("uniform") {
            return Ok(ConditionPolicy::Uniform);
        }
        let (cam, iso) = s
            .rsplit_once(':')
            .ok_or_else(|| Error::Configuration(format!("condition policy {s:?} is neither 'uniform' nor CAMERA:ISO")))?;
        let iso = iso
            .parse()
            .map_err(|_| Error::Configuration(format!("ISO {iso:?} in policy {s:?} is not an integer")))?;
        Ok(ConditionPolicy::Fixed {
            camera: cam.to_string(),
            iso,
        })
    }
}

/// Synthesizes a noisy partner for every clean image in `clean_manifest`
/// and writes `clean_NNNN.png`, `noisy_NNNN.png` and `manifest.tsv` into
/// `out_dir`.
pub fn make_denoiser_dataset(
    model: &NoiseModel,
    clean_manifest: &DatasetManifest,
    policy: &ConditionPolicy,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    let reg = &model.registry;
    let fixed = match policy {
        ConditionPolicy::Fixed { camera, iso } => Some(reg.condition(camera, *iso)?),
        ConditionPolicy::Uniform => None,
    };
    if reg.num_cameras() == 0 || reg.num_isos() == 0 {
        return Err(Error::validation("model registry is empty"));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(clean_manifest.len());
    for (i, e) in clean_manifest.entries.iter().enumerate() {
        let clean = Image::load_png(&clean_manifest.resolve(&e.clean_path))?;
        let cond = fixed.unwrap_or_else(|| CameraCondition {
            camera: rng.random_range(0..reg.num_cameras()),
            iso: rng.random_range(0..reg.num_isos()),
        });
        let synth = end_to_end_synthesize(&model.flow, model.generator.as_ref(), &clean, cond, &mut rng)?;
        let clean_path = PathBuf::from(format!("clean_{i:04}.png"));
        let noisy_path = PathBuf::from(format!("noisy_{i:04}.png"));
        clean.save_png(&out_dir.join(&clean_path))?;
        synth.noisy.save_png(&out_dir.join(&noisy_path))?;
        entries.push(ManifestEntry {
            clean_path,
            noisy_path: Some(noisy_path),
            camera_name: reg.camera_name(cond).to_string(),
            iso_value: reg.iso_value(cond),
            scene_id: e.scene_id.clone(),
        });
    }
    let manifest = DatasetManifest::new(out_dir, entries)?;
    manifest.write(&out_dir.join(MANIFEST_NAME))?;
    Ok(manifest)
}
