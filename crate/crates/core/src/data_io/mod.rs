//! Datasets: manifests, image pairs, patches and the virtual-camera oracle.

pub mod manifest;
pub mod oracle;
pub mod pair;
pub mod patches;

pub use manifest::{load_manifest, CameraCondition, ConditionRegistry, DatasetManifest, ManifestEntry};
pub use oracle::{
    generate_oracle_dataset, synthetic_scene, uniform_intensity_image, CorrelationKernel, IsoGain, OracleItem,
    OracleMeta, SynthCameraParams,
};
pub use pair::{load_all, load_pair, ImagePair};
pub use patches::{augment, extract_patches, grid_origins, Dihedral};
