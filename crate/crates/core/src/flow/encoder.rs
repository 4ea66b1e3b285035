use camnoise_tensor::{Init, Linear, Module, Param, Tensor};
use rand::Rng;

use crate::data_io::CameraCondition;
use crate::error::{Error, Result};

const SLOPE: f64 = 0.2;

/// One-hot(camera) ++ one-hot(ISO), as a `[1, cameras + isos]` row.
pub fn one_hot(cond: CameraCondition, num_cameras: usize, num_isos: usize) -> Result<Vec<f64>> {
    if cond.camera >= num_cameras {
        return Err(Error::UnknownCondition(format!(
            "camera index {} with {num_cameras} registered cameras",
            cond.camera
        )));
    }
    if cond.iso >= num_isos {
        return Err(Error::UnknownCondition(format!(
            "ISO index {} with {num_isos} registered ISO levels",
            cond.iso
        )));
    }
    let mut v = vec![0.0; num_cameras + num_isos];
    v[cond.camera] = 1.0;
    v[num_cameras + cond.iso] = 1.0;
    Ok(v)
}

/// Maps a camera condition to a dense embedding through a linear stem and
/// a few residual MLP blocks.
#[derive(Clone, Debug)]
pub struct ConditionEncoder {
    pub num_cameras: usize,
    pub num_isos: usize,
    stem: Linear,
    blocks: Vec<(Linear, Linear)>,
}

impl ConditionEncoder {
    pub fn new(num_cameras: usize, num_isos: usize, embed_dim: usize, num_blocks: usize, rng: &mut impl Rng) -> Self {
        let gain = camnoise_tensor::nn::leaky_gain(SLOPE);
        let stem = Linear::new("flow/encoder/stem", num_cameras + num_isos, embed_dim, Init::Scaled(1.0), rng);
        let blocks = (0..num_blocks)
            .map(|i| {
                (
                    Linear::new(&format!("flow/encoder/block{i}.fc1"), embed_dim, embed_dim, Init::Scaled(gain), rng),
                    Linear::new(&format!("flow/encoder/block{i}.fc2"), embed_dim, embed_dim, Init::Scaled(0.5), rng),
                )
            })
            .collect();
        ConditionEncoder {
            num_cameras,
            num_isos,
            stem,
            blocks,
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.stem.weight.shape()[1]
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// `[N, embed_dim]` embeddings, one row per condition.
    pub fn forward(&self, conds: &[CameraCondition]) -> Result<Tensor> {
        let width = self.num_cameras + self.num_isos;
        let mut rows = Vec::with_capacity(conds.len() * width);
        for &c in conds {
            rows.extend(one_hot(c, self.num_cameras, self.num_isos)?);
        }
        let mut h = self.stem.forward(&Tensor::from_vec(rows, &[conds.len(), width]));
        for (fc1, fc2) in &self.blocks {
            h = h.add(&fc2.forward(&fc1.forward(&h.leaky_relu(SLOPE)).leaky_relu(SLOPE)));
        }
        Ok(h)
    }
}

impl Module for ConditionEncoder {
    fn params(&self) -> Vec<Param> {
        let mut p = self.stem.params();
        for (a, b) in &self.blocks {
            p.extend(a.params());
            p.extend(b.params());
        }
        p
    }
}
