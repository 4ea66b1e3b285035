use std::collections::BTreeSet;
use std::path::Path;

use camnoise_tensor::{backward, no_grad, Adam, AdamConfig, Conv2d, Init, Module, Param, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::analysis::write_rows;
use crate::checkpoint::Checkpoint;
use crate::data_io::{augment, extract_patches, load_all, DatasetManifest, ImagePair};
use crate::error::{Error, Result};
use crate::eval::metrics::{psnr, ssim};
use crate::flow::substream;
use crate::image::{Image, CHANNELS};
use crate::train::{lr_schedule, split_scenes};

pub const DENOISER_KIND: &str = "denoiser";

const TAG_INIT: u64 = 30;
const TAG_SHUFFLE: u64 = 31;
const TAG_AUGMENT: u64 = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserSpec {
    /// Convolution layers, including the first and last.
    pub depth: usize,
    pub channels: usize,
    /// Predict the noise and subtract it from the input.
    pub residual: bool,
}

impl Default for DenoiserSpec {
    fn default() -> Self {
        DenoiserSpec {
            depth: 9,
            channels: 48,
            residual: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    pub spec: DenoiserSpec,
    pub epochs: usize,
    pub lr_initial: f64,
    pub lr_halving_period: usize,
    pub batch_size: usize,
    pub patch_size: usize,
    pub patch_stride: usize,
    pub augment: bool,
    pub seed: u64,
    pub steps_per_epoch: Option<usize>,
    pub max_steps: Option<u64>,
    pub validation_fraction: f64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            spec: DenoiserSpec::default(),
            epochs: 20,
            lr_initial: 1e-3,
            lr_halving_period: 5,
            batch_size: 8,
            patch_size: 40,
            patch_stride: 40,
            augment: true,
            seed: 0,
            steps_per_epoch: None,
            max_steps: None,
            validation_fraction: 0.1,
        }
    }
}

impl DenoiserConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let c: DenoiserConfig = toml::from_str(text).map_err(|e| Error::Configuration(e.message().to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.spec;
        if s.depth < 2 || s.channels == 0 {
            return Err(Error::Configuration("denoiser needs depth >= 2 and channels >= 1".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.patch_size == 0 || self.patch_stride == 0 {
            return Err(Error::Configuration("epochs, batch_size and patch sizes must be positive".into()));
        }
        if !(self.lr_initial > 0.0) || self.lr_halving_period == 0 {
            return Err(Error::Configuration("lr_initial and lr_halving_period must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Configuration("validation_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// DnCNN-style plain convolution stack without batch norm.
#[derive(Clone, Debug)]
pub struct Denoiser {
    pub spec: DenoiserSpec,
    layers: Vec<Conv2d>,
}

impl Denoiser {
    /// The last layer starts at zero, so a fresh residual denoiser is the
    /// identity.
    pub fn new(spec: &DenoiserSpec, seed: u64) -> Result<Self> {
        if spec.depth < 2 || spec.channels == 0 {
            return Err(Error::Configuration("denoiser needs depth >= 2 and channels >= 1".into()));
        }
        let mut rng = substream(seed, TAG_INIT);
        let gain = std::f64::consts::SQRT_2;
        let mut layers = Vec::with_capacity(spec.depth);
        for i in 0..spec.depth {
            let cin = if i == 0 { CHANNELS } else { spec.channels };
            let last = i + 1 == spec.depth;
            let cout = if last { CHANNELS } else { spec.channels };
            let init = if last { Init::Zeros } else { Init::Scaled(gain) };
            layers.push(Conv2d::new(&format!("denoiser/conv{i}"), cin, cout, 3, 1, init, &mut rng));
        }
        Ok(Denoiser {
            spec: spec.clone(),
            layers,
        })
    }

    /// Batched forward on 0..255 images, unclipped.
    pub fn forward(&self, noisy: &Tensor) -> Tensor {
        let x = noisy.scale(1.0 / 255.0);
        let mut t = x.clone();
        let n = self.layers.len();
        for (i, l) in self.layers.iter().enumerate() {
            t = l.forward(&t);
            if i + 1 < n {
                t = t.relu();
            }
        }
        let out = if self.spec.residual { x.sub(&t) } else { t };
        out.scale(255.0)
    }

    /// Denoised image clipped to `[0, 255]`.
    pub fn denoise(&self, noisy: &Image) -> Image {
        let t = no_grad(|| self.forward(&Image::batch(&[noisy])));
        Image::unbatch(&t).remove(0).map(|v| v.clamp(0.0, 255.0))
    }

    pub fn to_checkpoint(&self, config: &DenoiserConfig) -> Checkpoint {
        let meta = serde_json::json!({ "spec": self.spec, "config": config });
        let mut ck = Checkpoint::new(DENOISER_KIND, meta);
        ck.push_params(&self.params());
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(DENOISER_KIND)?;
        let spec: DenoiserSpec = serde_json::from_value(ck.meta["spec"].clone())
            .map_err(|e| Error::Checkpoint(format!("bad denoiser metadata: {e}")))?;
        let d = Denoiser::new(&spec, 0)?;
        let params = d.params();
        ck.load_params(&params)?;
        ck.ensure_only(&params.iter().map(|p| p.name().to_string()).collect::<Vec<_>>())?;
        Ok(d)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read(path)?)
    }
}

impl Module for Denoiser {
    fn params(&self) -> Vec<Param> {
        self.layers.iter().flat_map(Module::params).collect()
    }
}

#[derive(Clone, Debug)]
pub struct DenoiserOutcome {
    pub denoiser: Denoiser,
    pub losses: Vec<f64>,
    /// Mean PSNR on the held-out scenes after each epoch.
    pub val_psnr: Vec<f64>,
}

/// L2 regression from noisy to clean patches.
pub fn train_denoiser(config: &DenoiserConfig, manifest: &DatasetManifest) -> Result<DenoiserOutcome> {
    let pairs = load_all(manifest)?;
    train_denoiser_on(config, pairs)
}

pub fn train_denoiser_on(config: &DenoiserConfig, pairs: Vec<ImagePair>) -> Result<DenoiserOutcome> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::validation("denoiser training needs at least one pair"));
    }
    for p in &pairs {
        p.require_noise()?;
    }
    let scenes: BTreeSet<String> = pairs.iter().map(|p| p.scene_id.clone()).collect();
    let (train_scenes, _) = split_scenes(&scenes, config.validation_fraction, config.seed);
    let mut patches = Vec::new();
    let mut val = Vec::new();
    for p in pairs {
        if train_scenes.contains(&p.scene_id) {
            patches.extend(extract_patches(&p, config.patch_size, config.patch_stride)?);
        } else {
            val.push(p);
        }
    }
    if patches.is_empty() {
        return Err(Error::validation("no training patches for the denoiser"));
    }
    let model = Denoiser::new(&config.spec, config.seed)?;
    let params = model.params();
    let mut opt = Adam::new(
        AdamConfig {
            lr: config.lr_initial,
            ..AdamConfig::default()
        },
        &params,
    );
    let mut shuffle = substream(config.seed, TAG_SHUFFLE);
    let mut aug = substream(config.seed, TAG_AUGMENT);
    let b = config.batch_size;
    let n = patches.len();
    let mut losses = Vec::new();
    let mut val_psnr = Vec::new();
    let mut step = 0u64;
    'epochs: for epoch in 0..config.epochs {
        opt.set_lr(lr_schedule(config.lr_initial, config.lr_halving_period, epoch));
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut shuffle);
        let mut steps = (n / b).max(1);
        if let Some(cap) = config.steps_per_epoch {
            steps = steps.min(cap.max(1));
        }
        for k in 0..steps {
            if config.max_steps.is_some_and(|m| step >= m) {
                break 'epochs;
            }
            let mut picked = Vec::with_capacity(b);
            for j in 0..b {
                let p = &patches[order[(k * b + j) % n]];
                picked.push(if config.augment { augment(p, &mut aug)? } else { p.clone() });
            }
            let clean: Vec<&Image> = picked.iter().map(|p| &p.clean).collect();
            let noisy: Vec<&Image> = picked.iter().map(|p| p.noisy.as_ref().expect("checked")).collect();
            let out = model.forward(&Image::batch(&noisy));
            let loss = out.sub(&Image::batch(&clean)).scale(1.0 / 255.0).square().mean();
            let lv = loss.item();
            if !lv.is_finite() {
                return Err(Error::Diverged {
                    step,
                    msg: "denoiser loss is not finite".into(),
                });
            }
            opt.step(&params, &backward(&loss));
            losses.push(lv);
            step += 1;
        }
        if !val.is_empty() {
            let mut s = 0.0;
            for p in &val {
                s += psnr(&model.denoise(p.noisy.as_ref().expect("checked")), &p.clean)?;
            }
            val_psnr.push(s / val.len() as f64);
        }
    }
    Ok(DenoiserOutcome {
        denoiser: model,
        losses,
        val_psnr,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageScore {
    pub image_id: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiseReport {
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub per_image: Vec<ImageScore>,
}

impl DenoiseReport {
    /// `image_id,psnr,ssim` per image.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let rows = self
            .per_image
            .iter()
            .map(|s| vec![s.image_id.clone(), s.psnr.to_string(), s.ssim.to_string()]);
        write_rows(path, &["image_id", "psnr", "ssim"], rows)
    }
}

/// Scores a denoiser on every test pair in manifest order.
pub fn evaluate_denoiser(denoiser: &Denoiser, test: &DatasetManifest) -> Result<DenoiseReport> {
    let pairs = load_all(test)?;
    let ids: Vec<String> = test
        .entries
        .iter()
        .map(|e| e.noisy_path.as_ref().unwrap_or(&e.clean_path).display().to_string())
        .collect();
    evaluate_denoiser_on(denoiser, &pairs, &ids)
}

pub fn evaluate_denoiser_on(denoiser: &Denoiser, pairs: &[ImagePair], ids: &[String]) -> Result<DenoiseReport> {
    if pairs.is_empty() {
        return Err(Error::validation("no test pairs"));
    }
    let mut per_image = Vec::with_capacity(pairs.len());
    for (p, id) in pairs.iter().zip(ids) {
        let out = denoiser.denoise(p.require_noise().map(|_| p.noisy.as_ref().expect("checked"))?);
        per_image.push(ImageScore {
            image_id: id.clone(),
            psnr: psnr(&out, &p.clean)?,
            ssim: ssim(&out, &p.clean)?,
        });
    }
    let k = per_image.len() as f64;
    Ok(DenoiseReport {
        mean_psnr: per_image.iter().map(|s| s.psnr).sum::<f64>() / k,
        mean_ssim: per_image.iter().map(|s| s.ssim).sum::<f64>() / k,
        per_image,
    })
}
