//! A virtual camera with known noise parameters, used as ground truth.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data_io::manifest::{DatasetManifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::image::{Image, CHANNELS};

pub const ORACLE_META: &str = "oracle.meta";
pub const MANIFEST_NAME: &str = "manifest.tsv";

/// Odd-sized convolution weights, centred at `(height / 2, width / 2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationKernel {
    pub height: usize,
    pub width: usize,
    pub weights: Vec<f64>,
}

impl CorrelationKernel {
    pub fn identity() -> Self {
        CorrelationKernel {
            height: 1,
            width: 1,
            weights: vec![1.0],
        }
    }

    /// Averages each pixel with its right-hand neighbour. Lag-1 horizontal
    /// correlation of the result is exactly 0.5 for i.i.d. input.
    pub fn horizontal_pair() -> Self {
        CorrelationKernel {
            height: 3,
            width: 3,
            weights: vec![0.0, 0.0, 0.0, 0.0, 0.5, 0.5, 0.0, 0.0, 0.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height % 2 == 0 || self.width % 2 == 0 {
            return Err(Error::validation(format!(
                "kernel must have odd dimensions, got {}x{}",
                self.height, self.width
            )));
        }
        if self.weights.len() != self.height * self.width {
            return Err(Error::validation("kernel weight count does not match its dimensions"));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::validation("kernel weights must be finite"));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!("kernel weights sum to {sum}, expected 1")));
        }
        Ok(())
    }

    fn taps(&self) -> impl Iterator<Item = (isize, isize, f64)> + '_ {
        let (cy, cx) = ((self.height / 2) as isize, (self.width / 2) as isize);
        self.weights.iter().enumerate().filter(|(_, &w)| w != 0.0).map(move |(i, &w)| {
            let ky = (i / self.width) as isize;
            let kx = (i % self.width) as isize;
            (ky - cy, kx - cx, w)
        })
    }

    /// Correlates a plane with the kernel under reflect padding.
    pub fn apply(&self, plane: &[f64], h: usize, w: usize, square_weights: bool) -> Vec<f64> {
        let taps: Vec<_> = self.taps().collect();
        let mut out = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for &(dy, dx, wt) in &taps {
                    let sy = reflect(y as isize + dy, h);
                    let sx = reflect(x as isize + dx, w);
                    let wt = if square_weights { wt * wt } else { wt };
                    acc += wt * plane[sy * w + sx];
                }
                out[y * w + x] = acc;
            }
        }
        out
    }
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut j = i.rem_euclid(period);
    if j >= n {
        j = period - j;
    }
    j as usize
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsoGain {
    pub iso: u32,
    pub gain: f64,
}

/// Ground-truth noise parameters of the virtual camera.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthCameraParams {
    pub beta_s_sq: [f64; CHANNELS],
    pub beta_c_sq: [f64; CHANNELS],
    pub kernel: CorrelationKernel,
    pub gains: Vec<IsoGain>,
}

impl SynthCameraParams {
    pub fn homoscedastic(variance: f64, kernel: CorrelationKernel, gains: Vec<IsoGain>) -> Self {
        SynthCameraParams {
            beta_s_sq: [0.0; CHANNELS],
            beta_c_sq: [variance; CHANNELS],
            kernel,
            gains,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for v in self.beta_s_sq.iter().chain(&self.beta_c_sq) {
            if !(v.is_finite() && *v >= 0.0) {
                return Err(Error::validation(format!("noise variances must be finite and >= 0, got {v}")));
            }
        }
        self.kernel.validate()?;
        if self.gains.is_empty() {
            return Err(Error::validation("at least one ISO gain is required"));
        }
        for (i, g) in self.gains.iter().enumerate() {
            if !(g.gain.is_finite() && g.gain > 0.0) {
                return Err(Error::validation(format!("gain for ISO {} must be positive", g.iso)));
            }
            if self.gains[..i].iter().any(|o| o.iso == g.iso) {
                return Err(Error::validation(format!("ISO {} listed twice", g.iso)));
            }
        }
        Ok(())
    }

    pub fn gain(&self, iso: u32) -> Result<f64> {
        self.gains
            .iter()
            .find(|g| g.iso == iso)
            .map(|g| g.gain)
            .ok_or_else(|| Error::UnknownCondition(format!("virtual camera has no gain for ISO {iso}")))
    }

    /// Pre-correlation noise variance at one pixel.
    pub fn variance(&self, channel: usize, intensity: f64, gain: f64) -> f64 {
        gain * (self.beta_s_sq[channel] * intensity + self.beta_c_sq[channel])
    }

    /// Draws a continuous noise field for `clean` at `iso`.
    ///
    /// Independent Gaussians with the heteroscedastic variance are passed
    /// through the kernel, then each channel is rescaled so that the mean of
    /// the post-kernel variance equals the mean of the pre-kernel variance.
    pub fn sample_noise(&self, clean: &Image, iso: u32, rng: &mut impl Rng) -> Result<Image> {
        let gain = self.gain(iso)?;
        let (h, w) = clean.dims();
        let mut out = Image::filled(h, w, 0.0);
        for c in 0..CHANNELS {
            let var: Vec<f64> = clean.plane(c).iter().map(|&x| self.variance(c, x.max(0.0), gain)).collect();
            let iid: Vec<f64> = var
                .iter()
                .map(|&v| v.sqrt() * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let correlated = self.kernel.apply(&iid, h, w, false);
            let target: f64 = var.iter().sum::<f64>();
            let achieved: f64 = self.kernel.apply(&var, h, w, true).iter().sum::<f64>();
            let s = if achieved > 0.0 { (target / achieved).sqrt() } else { 1.0 };
            for (o, v) in out.plane_mut(c).iter_mut().zip(&correlated) {
                *o = s * v;
            }
        }
        Ok(out)
    }

    /// A quantized noisy observation of `clean`.
    pub fn observe(&self, clean: &Image, iso: u32, rng: &mut impl Rng) -> Result<Image> {
        let noise = self.sample_noise(clean, iso, rng)?;
        Ok(clean.zip_map(&noise, |x, n| x + n).quantized())
    }
}

/// One clean image to push through the virtual camera.
#[derive(Clone, Debug)]
pub struct OracleItem {
    pub clean: Image,
    pub camera: String,
    pub iso: u32,
    pub scene_id: String,
}

/// Contents of the `oracle.meta` sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleMeta {
    pub seed: u64,
    pub params: SynthCameraParams,
}

impl OracleMeta {
    pub fn read(path: &Path) -> Result<OracleMeta> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.span().map_or(0, |s| text[..s.start].lines().count() as u64),
            msg: e.message().to_string(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Renders every item through the virtual camera and writes
/// `clean_NNNN.png`, `noisy_NNNN.png`, `manifest.tsv` and `oracle.meta`
/// into `out_dir`. Clean images are quantized to 8 bits first so that the
/// files on disk are exactly what the noise was conditioned on.
pub fn generate_oracle_dataset(
    params: &SynthCameraParams,
    items: &[OracleItem],
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    params.validate()?;
    for it in items {
        if !it.clean.is_finite() || it.clean.data().iter().any(|&v| !(0.0..=255.0).contains(&v)) {
            return Err(Error::validation(format!("clean image {} is outside [0, 255]", it.scene_id)));
        }
        params.gain(it.iso).map_err(|e| Error::validation(e.to_string()))?;
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(items.len());
    for (i, it) in items.iter().enumerate() {
        let clean = it.clean.quantized();
        let noisy = params.observe(&clean, it.iso, &mut rng)?;
        let clean_path = PathBuf::from(format!("clean_{i:04}.png"));
        let noisy_path = PathBuf::from(format!("noisy_{i:04}.png"));
        clean.save_png(&out_dir.join(&clean_path))?;
        noisy.save_png(&out_dir.join(&noisy_path))?;
        entries.push(ManifestEntry {
            clean_path,
            noisy_path: Some(noisy_path),
            camera_name: it.camera.clone(),
            iso_value: it.iso,
            scene_id: it.scene_id.clone(),
        });
    }
    let manifest = DatasetManifest::new(out_dir, entries)?;
    manifest.write(&out_dir.join(MANIFEST_NAME))?;
    OracleMeta {
        seed,
        params: params.clone(),
    }
    .write(&out_dir.join(ORACLE_META))?;
    Ok(manifest)
}

/// A piecewise-smooth scene: a tilted ramp with a soft ripple, overlaid
/// with a few flat rectangles, every value kept inside `[lo, hi]`.
pub fn synthetic_scene(h: usize, w: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> Image {
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (ca, sa) = (angle.cos(), angle.sin());
    let freq: f64 = rng.random_range(0.02..0.08);
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let tint: [f64; CHANNELS] = std::array::from_fn(|_| rng.random_range(0.8..1.0));
    let rects: Vec<(usize, usize, usize, usize, f64)> = (0..3)
        .map(|_| {
            let rh = rng.random_range(h / 8..=h / 3);
            let rw = rng.random_range(w / 8..=w / 3);
            let y0 = rng.random_range(0..h - rh);
            let x0 = rng.random_range(0..w - rw);
            (y0, x0, rh, rw, rng.random_range(0.0..1.0))
        })
        .collect();
    let diag = ((h * h + w * w) as f64).sqrt();
    Image::from_fn(h, w, |c, y, x| {
        let (yf, xf) = (y as f64, x as f64);
        let mut t = 0.5 + (ca * (xf - w as f64 / 2.0) + sa * (yf - h as f64 / 2.0)) / diag;
        t = 0.8 * t + 0.2 * (0.5 + 0.5 * (freq * (xf + yf) + phase).sin());
        for &(y0, x0, rh, rw, level) in &rects {
            if (y0..y0 + rh).contains(&y) && (x0..x0 + rw).contains(&x) {
                t = level;
            }
        }
        let v = lo + (hi - lo) * t.clamp(0.0, 1.0) * tint[c] + (hi - lo) * (1.0 - tint[c]) * 0.5;
        v.clamp(lo, hi).round()
    })
}

/// Independent uniform intensities in `[lo, hi]`, one per pixel and channel.
pub fn uniform_intensity_image(h: usize, w: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> Image {
    let data = (0..CHANNELS * h * w).map(|_| rng.random_range(lo..=hi).round()).collect();
    Image::new(h, w, data)
}
