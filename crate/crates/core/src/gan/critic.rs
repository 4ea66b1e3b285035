use camnoise_tensor::nn::leaky_gain;
use camnoise_tensor::{Conv2d, Init, Linear, Module, Param, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gan::generator::NOISE_SCALE;

const SLOPE: f64 = 0.2;

/// Scores `[N, 6, H, W]` inputs (clean ∥ noise, both on the 0–255 scale)
/// with one real number per sample.
pub trait Critic {
    fn score(&self, input: &Tensor) -> Tensor;

    fn params(&self) -> Vec<Param> {
        Vec::new()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CriticConfig {
    pub conv_stages: usize,
    pub base_channels: usize,
}

impl Default for CriticConfig {
    fn default() -> Self {
        CriticConfig {
            conv_stages: 4,
            base_channels: 32,
        }
    }
}

/// VGG-style critic: each stage is a 3×3 convolution followed by a
/// stride-2 3×3 convolution, then global average pooling and a linear head.
#[derive(Clone, Debug)]
pub struct VggCritic {
    pub config: CriticConfig,
    stages: Vec<(Conv2d, Conv2d)>,
    head: Linear,
}

impl VggCritic {
    pub fn new(config: &CriticConfig, rng: &mut impl Rng) -> Result<Self> {
        if config.conv_stages == 0 || config.base_channels == 0 {
            return Err(Error::Configuration("critic needs at least one stage and positive width".into()));
        }
        let g = leaky_gain(SLOPE);
        let width = |s: usize| config.base_channels << s.min(3);
        let mut stages = Vec::with_capacity(config.conv_stages);
        let mut c_in = 6;
        for s in 0..config.conv_stages {
            let c = width(s);
            stages.push((
                Conv2d::new(&format!("gan/critic/stage{s}.conv"), c_in, c, 3, 1, Init::Scaled(g), rng),
                Conv2d::new(&format!("gan/critic/stage{s}.pool"), c, c, 3, 2, Init::Scaled(g), rng),
            ));
            c_in = c;
        }
        let head = Linear::new("gan/critic/head", c_in, 1, Init::Scaled(1.0), rng);
        Ok(VggCritic {
            config: config.clone(),
            stages,
            head,
        })
    }
}

fn input_affine() -> (Tensor, Tensor) {
    let mut scale = vec![1.0 / 127.5; 3];
    scale.extend([1.0 / NOISE_SCALE; 3]);
    let mut shift = vec![-1.0; 3];
    shift.extend([0.0; 3]);
    (Tensor::from_vec(scale, &[1, 6, 1, 1]), Tensor::from_vec(shift, &[1, 6, 1, 1]))
}

impl Critic for VggCritic {
    fn score(&self, input: &Tensor) -> Tensor {
        let n = input.shape()[0];
        let (scale, shift) = input_affine();
        let mut t = input.mul(&scale).add(&shift);
        for (conv, pool) in &self.stages {
            t = conv.forward(&t).leaky_relu(SLOPE);
            t = pool.forward(&t).leaky_relu(SLOPE);
        }
        self.head.forward(&t.global_avg_pool()).reshape(&[n])
    }

    fn params(&self) -> Vec<Param> {
        Module::params(self)
    }
}

impl Module for VggCritic {
    fn params(&self) -> Vec<Param> {
        let mut p = Vec::new();
        for (a, b) in &self.stages {
            p.extend(a.params());
            p.extend(b.params());
        }
        p.extend(self.head.params());
        p
    }
}
