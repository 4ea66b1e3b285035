use camnoise_tensor::{no_grad, Module, Param, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data_io::{CameraCondition, ConditionRegistry};
use crate::error::{Error, Result};
use crate::flow::encoder::ConditionEncoder;
use crate::flow::layers::{FlowContext, FlowLayer, FlowLayerSpec, LayerKind};
use crate::image::{Image, CHANNELS};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Architecture knobs for [`FlowStack`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    /// Number of `[CONDLIN, SDL, SAL]` repetitions.
    pub num_blocks: usize,
    pub hidden_width: usize,
    pub embed_dim: usize,
    pub encoder_blocks: usize,
}

/// Which layer kinds a stack contains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerToggles {
    pub condlin: bool,
    pub sdl: bool,
    pub sal: bool,
}

impl Default for LayerToggles {
    fn default() -> Self {
        LayerToggles {
            condlin: true,
            sdl: true,
            sal: true,
        }
    }
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            num_blocks: 2,
            hidden_width: 32,
            embed_dim: 16,
            encoder_blocks: 2,
        }
    }
}

impl FlowConfig {
    pub fn layer_specs(&self, toggles: LayerToggles) -> Vec<FlowLayerSpec> {
        let mut out = Vec::new();
        for _ in 0..self.num_blocks {
            for (kind, on) in [
                (LayerKind::Condlin, toggles.condlin),
                (LayerKind::Sdl, toggles.sdl),
                (LayerKind::Sal, toggles.sal),
            ] {
                if on {
                    out.push(FlowLayerSpec {
                        kind,
                        hidden_width: self.hidden_width,
                        zero_init: true,
                    });
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct FlowOutput {
    pub z: Tensor,
    /// `[N]`.
    pub log_det: Tensor,
}

/// Per-pixel Monte-Carlo moments of the noise the flow generates.
#[derive(Clone, Debug)]
pub struct PixelGaussianStats {
    pub mean: Image,
    pub std: Image,
}

/// An ordered sequence of conditional affine layers over a standard normal
/// base, plus the condition encoder they share. An empty stack is the
/// identity.
#[derive(Clone, Debug)]
pub struct FlowStack {
    pub encoder: Option<ConditionEncoder>,
    pub layers: Vec<FlowLayer>,
    num_cameras: usize,
    num_isos: usize,
}

impl FlowStack {
    pub fn new(config: &FlowConfig, toggles: LayerToggles, registry: &ConditionRegistry, rng: &mut impl Rng) -> Self {
        Self::from_specs(&config.layer_specs(toggles), config, registry.num_cameras(), registry.num_isos(), rng)
    }

    pub fn from_specs(
        specs: &[FlowLayerSpec],
        config: &FlowConfig,
        num_cameras: usize,
        num_isos: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let encoder = (!specs.is_empty())
            .then(|| ConditionEncoder::new(num_cameras, num_isos, config.embed_dim, config.encoder_blocks, rng));
        let layers = specs
            .iter()
            .enumerate()
            .map(|(i, &spec)| FlowLayer::new(&format!("flow/layer{i}/{}", spec.kind.name()), spec, config.embed_dim, rng))
            .collect();
        FlowStack {
            encoder,
            layers,
            num_cameras,
            num_isos,
        }
    }

    pub fn specs(&self) -> Vec<FlowLayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn num_cameras(&self) -> usize {
        self.num_cameras
    }

    pub fn num_isos(&self) -> usize {
        self.num_isos
    }

    pub fn check_condition(&self, cond: CameraCondition) -> Result<()> {
        crate::flow::encoder::one_hot(cond, self.num_cameras, self.num_isos).map(|_| ())
    }

    /// The `[1, C_e]` embedding of one condition.
    pub fn encode_condition(&self, cond: CameraCondition) -> Result<Tensor> {
        self.check_condition(cond)?;
        match &self.encoder {
            Some(e) => e.forward(&[cond]),
            None => Ok(Tensor::zeros(&[1, 0])),
        }
    }

    /// Builds the shared context for a clean batch on the 0–255 scale.
    pub fn context(&self, clean: &Tensor, conds: &[CameraCondition]) -> Result<FlowContext> {
        let n = clean.shape()[0];
        if conds.len() != n {
            return Err(Error::validation(format!("{} conditions for a batch of {n}", conds.len())));
        }
        for &c in conds {
            self.check_condition(c)?;
        }
        let embedding = match &self.encoder {
            Some(e) => e.forward(conds)?,
            None => Tensor::zeros(&[n, 0]),
        };
        Ok(FlowContext {
            clean: FlowContext::normalize_clean(clean),
            embedding,
        })
    }

    /// Noise to latent: `z = F_L ∘ … ∘ F_1 (n)`.
    pub fn forward(&self, noise: &Tensor, ctx: &FlowContext) -> Result<FlowOutput> {
        let n = noise.shape()[0];
        let mut z = noise.clone();
        let mut log_det = Tensor::zeros(&[n]);
        for layer in &self.layers {
            let (next, ld) = layer.forward(&z, ctx)?;
            z = next;
            log_det = log_det.add(&ld);
        }
        Ok(FlowOutput { z, log_det })
    }

    /// Latent to noise, applying the layer inverses in reverse order.
    pub fn inverse(&self, z: &Tensor, ctx: &FlowContext) -> Result<Tensor> {
        let mut n = z.clone();
        for layer in self.layers.iter().rev() {
            n = layer.inverse(&n, ctx)?;
        }
        Ok(n)
    }

    /// Negative log-likelihood of each sample, `[N]`.
    pub fn nll_per_sample(&self, noise: &Tensor, ctx: &FlowContext) -> Result<Tensor> {
        let out = self.forward(noise, ctx)?;
        Ok(nll_from_latent(&out.z, &out.log_det))
    }

    /// Batch-mean NLL, the training objective.
    pub fn nll(&self, noise: &Tensor, ctx: &FlowContext) -> Result<Tensor> {
        let per = self.nll_per_sample(noise, ctx)?;
        let loss = per.mean();
        if !loss.item().is_finite() {
            return Err(Error::Numerical("non-finite NLL".into()));
        }
        Ok(loss)
    }

    /// Draws continuous noise for a clean batch. Records a graph when
    /// gradients are enabled, so callers can backpropagate into the flow.
    pub fn sample(&self, clean: &Tensor, conds: &[CameraCondition], rng: &mut impl Rng) -> Result<Tensor> {
        let ctx = self.context(clean, conds)?;
        let z = standard_normal(clean.shape(), rng);
        self.inverse(&z, &ctx)
    }

    /// Single-image sampling.
    pub fn sample_pixelwise(&self, clean: &Image, cond: CameraCondition, rng: &mut impl Rng) -> Result<Image> {
        let t = no_grad(|| self.sample(&Image::batch(&[clean]), &[cond], rng))?;
        Ok(Image::unbatch(&t).remove(0))
    }

    pub fn pixel_stats(
        &self,
        clean: &Image,
        cond: CameraCondition,
        n_samples: usize,
        rng: &mut impl Rng,
    ) -> Result<PixelGaussianStats> {
        if n_samples < 100 {
            return Err(Error::validation("pixel statistics need at least 100 samples"));
        }
        let (h, w) = clean.dims();
        let len = CHANNELS * h * w;
        let mut sum = vec![0.0; len];
        let mut sum_sq = vec![0.0; len];
        const CHUNK: usize = 25;
        let mut done = 0;
        while done < n_samples {
            let k = CHUNK.min(n_samples - done);
            let batch = Image::batch(&vec![clean; k]);
            let s = no_grad(|| self.sample(&batch, &vec![cond; k], rng))?;
            for chunk in s.data().chunks(len) {
                for i in 0..len {
                    sum[i] += chunk[i];
                    sum_sq[i] += chunk[i] * chunk[i];
                }
            }
            done += k;
        }
        let n = n_samples as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sum_sq
            .iter()
            .zip(&mean)
            .map(|(sq, m)| ((sq - n * m * m) / (n - 1.0)).max(0.0).sqrt())
            .collect();
        Ok(PixelGaussianStats {
            mean: Image::new(h, w, mean),
            std: Image::new(h, w, std),
        })
    }
}

impl Module for FlowStack {
    fn params(&self) -> Vec<Param> {
        let mut p = self.encoder.as_ref().map(Module::params).unwrap_or_default();
        for l in &self.layers {
            p.extend(l.params());
        }
        p
    }
}

/// `½Σz² + D/2·ln 2π − log_det`, per sample.
pub fn nll_from_latent(z: &Tensor, log_det: &Tensor) -> Tensor {
    let n = z.shape()[0];
    let d = z.numel() / n;
    z.square()
        .sum_to(&[n, 1, 1, 1])
        .reshape(&[n])
        .scale(0.5)
        .add_scalar(d as f64 * HALF_LN_2PI)
        .sub(log_det)
}

pub fn standard_normal(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = camnoise_tensor::numel(shape);
    Tensor::from_vec((0..n).map(|_| rng.sample(StandardNormal)).collect(), shape)
}

/// Adds `u ~ U[-0.5, 0.5)` to integer-valued noise.
pub fn dequantize(noise: &Tensor, rng: &mut impl Rng) -> Tensor {
    let u: Vec<f64> = (0..noise.numel()).map(|_| rng.random::<f64>() - 0.5).collect();
    noise.add(&Tensor::from_vec(u, noise.shape()))
}

/// The synthesis-side quantizer matching [`dequantize`]: rounds half up, so
/// every value in `[n - 0.5, n + 0.5)` maps back to `n`.
pub fn quantize(noise: &Tensor) -> Tensor {
    Tensor::from_vec(noise.data().iter().map(|&v| round_half_up(v)).collect(), noise.shape())
}

pub fn round_half_up(v: f64) -> f64 {
    (v + 0.5).floor()
}

/// Deterministic sub-stream for a `(seed, tag)` pair.
pub fn substream(seed: u64, tag: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng
}
