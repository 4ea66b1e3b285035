use camnoise_tensor::nn::leaky_gain;
use camnoise_tensor::{Conv2d, Init, Module, Param, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SLOPE: f64 = 0.2;
/// Noise enters the network divided by this and leaves multiplied by it,
/// keeping activations near unit scale for 8-bit-scale noise.
pub const NOISE_SCALE: f64 = 8.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub unet_depth: usize,
    pub base_channels: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            unet_depth: 3,
            base_channels: 32,
        }
    }
}

/// A residual U-Net: `refine(n') = n' + G(n')`. The output convolution
/// starts at zero, so a fresh generator is the identity.
#[derive(Clone, Debug)]
pub struct UNetGenerator {
    pub config: GeneratorConfig,
    stem: Conv2d,
    downs: Vec<(Conv2d, Conv2d)>,
    ups: Vec<Conv2d>,
    head: Conv2d,
}

impl UNetGenerator {
    pub fn new(config: &GeneratorConfig, rng: &mut impl Rng) -> Result<Self> {
        if config.unet_depth < 2 || config.base_channels == 0 {
            return Err(Error::Configuration(format!(
                "generator needs depth >= 2 and positive width, got depth {} width {}",
                config.unet_depth, config.base_channels
            )));
        }
        let g = leaky_gain(SLOPE);
        let width = |l: usize| config.base_channels << l;
        let stem = Conv2d::new("gan/generator/stem", 3, width(0), 3, 1, Init::Scaled(g), rng);
        let downs = (1..=config.unet_depth)
            .map(|l| {
                (
                    Conv2d::new(&format!("gan/generator/down{l}.pool"), width(l - 1), width(l), 3, 2, Init::Scaled(g), rng),
                    Conv2d::new(&format!("gan/generator/down{l}.conv"), width(l), width(l), 3, 1, Init::Scaled(g), rng),
                )
            })
            .collect();
        let ups = (0..config.unet_depth)
            .map(|l| {
                Conv2d::new(
                    &format!("gan/generator/up{l}"),
                    width(l + 1) + width(l),
                    width(l),
                    3,
                    1,
                    Init::Scaled(g),
                    rng,
                )
            })
            .collect();
        let head = Conv2d::new("gan/generator/head", width(0), 3, 1, 1, Init::Zeros, rng);
        Ok(UNetGenerator {
            config: config.clone(),
            stem,
            downs,
            ups,
            head,
        })
    }

    /// The residual correction `G(n')`, same shape as the input.
    pub fn residual(&self, n_prime: &Tensor) -> Tensor {
        let (_, _, h, w) = n_prime.dims4();
        let m = 1usize << self.config.unet_depth;
        let (ph, pw) = ((m - h % m) % m, (m - w % m) % m);
        let x = pad_bottom_right(n_prime, ph, pw);
        let mut t = self.stem.forward(&x.scale(1.0 / NOISE_SCALE)).leaky_relu(SLOPE);
        let mut skips = vec![t.clone()];
        for (pool, conv) in &self.downs {
            t = pool.forward(&t).leaky_relu(SLOPE);
            t = conv.forward(&t).leaky_relu(SLOPE);
            skips.push(t.clone());
        }
        skips.pop();
        for l in (0..self.config.unet_depth).rev() {
            let up = t.upsample_nearest(2);
            t = self.ups[l].forward(&Tensor::concat(&[up, skips[l].clone()], 1)).leaky_relu(SLOPE);
        }
        let out = self.head.forward(&t).scale(NOISE_SCALE);
        if ph + pw > 0 {
            out.crop(0, 0, h, w)
        } else {
            out
        }
    }

    /// `n' + G(n')`.
    pub fn refine(&self, n_prime: &Tensor) -> Result<Tensor> {
        if !n_prime.all_finite() {
            return Err(Error::Numerical("generator input is not finite".into()));
        }
        let out = n_prime.add(&self.residual(n_prime));
        if !out.all_finite() {
            return Err(Error::Numerical("generator produced non-finite values".into()));
        }
        Ok(out)
    }
}

impl Module for UNetGenerator {
    fn params(&self) -> Vec<Param> {
        let mut p = self.stem.params();
        for (a, b) in &self.downs {
            p.extend(a.params());
            p.extend(b.params());
        }
        for u in &self.ups {
            p.extend(u.params());
        }
        p.extend(self.head.params());
        p
    }
}

/// Reflect padding that also works when the pad exceeds the input: it is
/// applied in rounds, and a one-pixel axis is replicated instead.
fn pad_bottom_right(x: &Tensor, mut ph: usize, mut pw: usize) -> Tensor {
    let mut x = x.clone();
    while ph + pw > 0 {
        let (_, _, h, w) = x.dims4();
        let (dh, dw) = (ph.min(h - 1), pw.min(w - 1));
        if dh + dw > 0 {
            x = x.pad_reflect(0, dh, 0, dw);
            ph -= dh;
            pw -= dw;
        } else if ph > 0 {
            x = Tensor::concat(&[x.clone(), x], 2);
            ph -= 1;
        } else {
            x = Tensor::concat(&[x.clone(), x], 3);
            pw -= 1;
        }
    }
    x
}
