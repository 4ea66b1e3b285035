//! Patch extraction and dihedral augmentation.

use rand::Rng;

use crate::data_io::pair::ImagePair;
use crate::error::{Error, Result};
use crate::image::Image;

/// Patch origins along one axis: the regular grid plus, when the grid
/// leaves a remainder, one origin flush with the far border.
pub fn grid_origins(len: usize, size: usize, stride: usize) -> Vec<usize> {
    assert!(size <= len && stride > 0);
    let mut out: Vec<usize> = (0..).map(|i| i * stride).take_while(|&p| p + size <= len).collect();
    let last = *out.last().expect("at least one origin");
    if last + size < len {
        out.push(len - size);
    }
    out
}

/// Cuts `pair` into `size × size` patches in row-major grid order.
pub fn extract_patches(pair: &ImagePair, size: usize, stride: usize) -> Result<Vec<ImagePair>> {
    let (h, w) = pair.dims();
    if h < size || w < size {
        return Err(Error::validation(format!(
            "image {h}x{w} is smaller than patch size {size}"
        )));
    }
    if stride == 0 {
        return Err(Error::validation("patch stride must be positive"));
    }
    let ys = grid_origins(h, size, stride);
    let xs = grid_origins(w, size, stride);
    let mut out = Vec::with_capacity(ys.len() * xs.len());
    for &y in &ys {
        for &x in &xs {
            out.push(pair.map_images(|im| im.crop(y, x, size, size)));
        }
    }
    Ok(out)
}

/// One of the eight symmetries of the square: `rotations` quarter turns
/// counter-clockwise, then an optional horizontal flip.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dihedral {
    pub rotations: u8,
    pub flip: bool,
}

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral {
        rotations: 0,
        flip: false,
    };

    pub fn all() -> [Dihedral; 8] {
        std::array::from_fn(|i| Dihedral {
            rotations: (i % 4) as u8,
            flip: i >= 4,
        })
    }

    pub fn apply(self, im: &Image) -> Image {
        let mut out = im.clone();
        for _ in 0..self.rotations % 4 {
            out = out.rotate90();
        }
        if self.flip {
            out = out.flip_horizontal();
        }
        out
    }

    pub fn apply_pair(self, pair: &ImagePair) -> Result<ImagePair> {
        let (h, w) = pair.dims();
        if h != w {
            return Err(Error::validation(format!("augmentation needs a square patch, got {h}x{w}")));
        }
        Ok(pair.map_images(|im| self.apply(im)))
    }
}

/// Applies a uniformly chosen dihedral transform to clean and noisy alike.
pub fn augment(patch: &ImagePair, rng: &mut impl Rng) -> Result<ImagePair> {
    let t = Dihedral::all()[rng.random_range(0..8)];
    t.apply_pair(patch)
}
