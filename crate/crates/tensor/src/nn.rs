//! Trainable parameters and the handful of layers the models are built from.

use std::cell::RefCell;
use std::rc::Rc;

use rand::Rng;

use crate::conv::ConvGeom;
use crate::tensor::Tensor;

struct ParamInner {
    name: String,
    value: RefCell<Tensor>,
}

/// A named, mutable handle to a gradient-receiving leaf tensor.
#[derive(Clone)]
pub struct Param(Rc<ParamInner>);

impl Param {
    pub fn new(name: impl Into<String>, data: Vec<f64>, shape: &[usize]) -> Self {
        Param(Rc::new(ParamInner {
            name: name.into(),
            value: RefCell::new(Tensor::leaf(data, shape)),
        }))
    }

    pub fn name(&self) -> &str {
        &self.0.name
    }

    /// The current value, as a leaf that participates in the graph.
    pub fn get(&self) -> Tensor {
        self.0.value.borrow().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.0.value.borrow().shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.0.value.borrow().numel()
    }

    /// Replaces the value with fresh data of the same shape.
    pub fn set_data(&self, data: Vec<f64>) {
        let shape = self.shape();
        *self.0.value.borrow_mut() = Tensor::leaf(data, &shape);
    }
}

impl std::fmt::Debug for Param {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Param({}, {:?})", self.name(), self.shape())
    }
}

/// Anything owning parameters, listed in a stable order.
pub trait Module {
    fn params(&self) -> Vec<Param>;

    fn num_params(&self) -> usize {
        self.params().iter().map(Param::numel).sum()
    }
}

/// Gain for He-style initialisation in front of a leaky ReLU.
pub fn leaky_gain(slope: f64) -> f64 {
    (2.0 / (1.0 + slope * slope)).sqrt()
}

fn uniform(rng: &mut impl Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform with variance `gain^2 / fan_in`.
    Scaled(f64),
    Zeros,
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    pub geom: ConvGeom,
}

impl Conv2d {
    pub fn new(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_ch * k * k;
        let n = out_ch * fan_in;
        let data = match init {
            Init::Scaled(gain) => uniform(rng, n, gain * (3.0 / fan_in as f64).sqrt()),
            Init::Zeros => vec![0.0; n],
        };
        Conv2d {
            weight: Param::new(format!("{name}.weight"), data, &[out_ch, in_ch, k, k]),
            bias: Param::new(format!("{name}.bias"), vec![0.0; out_ch], &[out_ch]),
            geom: ConvGeom { stride, pad: k / 2 },
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let co = self.out_channels();
        x.conv2d(&self.weight.get(), self.geom)
            .add(&self.bias.get().reshape(&[1, co, 1, 1]))
    }
}

impl Module for Conv2d {
    fn params(&self) -> Vec<Param> {
        vec![self.weight.clone(), self.bias.clone()]
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new(name: &str, in_dim: usize, out_dim: usize, init: Init, rng: &mut impl Rng) -> Self {
        let data = match init {
            Init::Scaled(gain) => uniform(rng, in_dim * out_dim, gain * (3.0 / in_dim as f64).sqrt()),
            Init::Zeros => vec![0.0; in_dim * out_dim],
        };
        Linear {
            weight: Param::new(format!("{name}.weight"), data, &[in_dim, out_dim]),
            bias: Param::new(format!("{name}.bias"), vec![0.0; out_dim], &[out_dim]),
        }
    }

    /// `[N, in] -> [N, out]`.
    pub fn forward(&self, x: &Tensor) -> Tensor {
        x.matmul(&self.weight.get()).add(&self.bias.get())
    }
}

impl Module for Linear {
    fn params(&self) -> Vec<Param> {
        vec![self.weight.clone(), self.bias.clone()]
    }
}

/// Normalises the channel vector at every spatial position of an NCHW
/// tensor to zero mean and unit variance.
pub fn pixel_norm(x: &Tensor, eps: f64) -> Tensor {
    let (n, c, h, w) = x.dims4();
    let inv_c = 1.0 / c as f64;
    let mean = x.sum_to(&[n, 1, h, w]).scale(inv_c);
    let centered = x.sub(&mean);
    let var = centered.square().sum_to(&[n, 1, h, w]).scale(inv_c);
    centered.mul(&var.add_scalar(eps).powf(-0.5))
}
