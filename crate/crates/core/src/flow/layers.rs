//! The three conditional elementwise-affine layers.
//!
//! Every layer maps `z -> z * exp(s) + b` where `(s, b)` depend only on the
//! clean image and the condition embedding, never on `z`. The Jacobian is
//! therefore diagonal and the inverse is closed-form.

use camnoise_tensor::nn::{leaky_gain, pixel_norm};
use camnoise_tensor::{Conv2d, Init, Linear, Module, Param, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bound on `|log_scale|`, applied identically in both directions.
pub const LOG_SCALE_BOUND: f64 = 8.0;
const SLOPE: f64 = 0.2;
const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum LayerKind {
    /// Spatially constant factors from the condition alone.
    Condlin,
    /// Per-pixel factors from the clean intensity at that pixel.
    Sdl,
    /// Factors from a 5×5 clean-image neighbourhood.
    Sal,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Condlin => "condlin",
            LayerKind::Sdl => "sdl",
            LayerKind::Sal => "sal",
        }
    }

    /// Half-width of the clean-image neighbourhood each output factor sees,
    /// or `None` when factors ignore the image.
    pub fn receptive_radius(self) -> Option<usize> {
        match self {
            LayerKind::Condlin => None,
            LayerKind::Sdl => Some(0),
            LayerKind::Sal => Some(2),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowLayerSpec {
    pub kind: LayerKind,
    pub hidden_width: usize,
    pub zero_init: bool,
}

/// Inputs shared by every layer: the normalised clean batch and the
/// per-sample condition embedding.
#[derive(Clone, Debug)]
pub struct FlowContext {
    /// `[N, 3, H, W]`, clean intensities mapped to `[-1, 1]`.
    pub clean: Tensor,
    /// `[N, C_e]`.
    pub embedding: Tensor,
}

impl FlowContext {
    pub fn normalize_clean(clean: &Tensor) -> Tensor {
        clean.scale(1.0 / 127.5).add_scalar(-1.0)
    }
}

#[derive(Clone, Debug)]
enum Body {
    Condlin {
        head: Linear,
    },
    Sdl {
        inp: Conv2d,
        cond: Linear,
        mid: Conv2d,
        head: Conv2d,
    },
    Sal {
        inp: Conv2d,
        cond: Linear,
        mid: Conv2d,
        head: Conv2d,
    },
}

#[derive(Clone, Debug)]
pub struct FlowLayer {
    pub spec: FlowLayerSpec,
    body: Body,
}

impl FlowLayer {
    pub fn new(prefix: &str, spec: FlowLayerSpec, embed_dim: usize, rng: &mut impl Rng) -> Self {
        let head_init = if spec.zero_init { Init::Zeros } else { Init::Scaled(0.1) };
        let hw = spec.hidden_width;
        let g = leaky_gain(SLOPE);
        let n = |s: &str| format!("{prefix}.{s}");
        let body = match spec.kind {
            LayerKind::Condlin => Body::Condlin {
                head: Linear::new(&n("head"), embed_dim, 6, head_init, rng),
            },
            LayerKind::Sdl => Body::Sdl {
                inp: Conv2d::new(&n("inp"), 3, hw, 1, 1, Init::Scaled(1.0), rng),
                cond: Linear::new(&n("cond"), embed_dim, hw, Init::Scaled(1.0), rng),
                mid: Conv2d::new(&n("mid"), hw, hw, 1, 1, Init::Scaled(g), rng),
                head: Conv2d::new(&n("head"), hw, 6, 1, 1, head_init, rng),
            },
            LayerKind::Sal => Body::Sal {
                inp: Conv2d::new(&n("inp"), 3, hw, 3, 1, Init::Scaled(1.0), rng),
                cond: Linear::new(&n("cond"), embed_dim, hw, Init::Scaled(1.0), rng),
                mid: Conv2d::new(&n("mid"), hw, hw, 3, 1, Init::Scaled(g), rng),
                head: Conv2d::new(&n("head"), hw, 6, 1, 1, head_init, rng),
            },
        };
        FlowLayer { spec, body }
    }

    /// `(log_scale, bias)`, each broadcastable to `[N, 3, H, W]`. CONDLIN
    /// factors come out as `[N, 3, 1, 1]`.
    pub fn factors(&self, ctx: &FlowContext) -> Result<(Tensor, Tensor)> {
        let raw = match &self.body {
            Body::Condlin { head } => {
                let n = ctx.embedding.shape()[0];
                head.forward(&ctx.embedding).reshape(&[n, 6, 1, 1])
            }
            Body::Sdl { inp, cond, mid, head } => {
                let h = with_condition(inp.forward(&ctx.clean), cond, &ctx.embedding);
                let h = pixel_norm(&h, NORM_EPS).leaky_relu(SLOPE);
                let h = pixel_norm(&mid.forward(&h), NORM_EPS).leaky_relu(SLOPE);
                head.forward(&h)
            }
            Body::Sal { inp, cond, mid, head } => {
                let h = with_condition(inp.forward(&ctx.clean), cond, &ctx.embedding).leaky_relu(SLOPE);
                let h = mid.forward(&h).leaky_relu(SLOPE);
                head.forward(&h)
            }
        };
        if !raw.all_finite() {
            return Err(Error::Numerical(format!("{} layer produced non-finite factors", self.spec.kind.name())));
        }
        let log_scale = raw.narrow(1, 0, 3).clamp(-LOG_SCALE_BOUND, LOG_SCALE_BOUND);
        let bias = raw.narrow(1, 3, 3);
        Ok((log_scale, bias))
    }

    /// `z_next = z · exp(s) + b` and the per-sample `[N]` log-determinant.
    pub fn forward(&self, z: &Tensor, ctx: &FlowContext) -> Result<(Tensor, Tensor)> {
        let (s, b) = self.factors(ctx)?;
        let out = z.mul(&s.exp()).add(&b);
        Ok((out, log_det_of(&s, z.shape())))
    }

    /// Exact inverse of [`FlowLayer::forward`].
    pub fn inverse(&self, z_next: &Tensor, ctx: &FlowContext) -> Result<Tensor> {
        let (s, b) = self.factors(ctx)?;
        Ok(z_next.sub(&b).mul(&s.neg().exp()))
    }
}

fn with_condition(h: Tensor, cond: &Linear, embedding: &Tensor) -> Tensor {
    let (n, c, _, _) = h.dims4();
    h.add(&cond.forward(embedding).reshape(&[n, c, 1, 1]))
}

/// Sum of the log scales over every element of a sample, as `[N]`.
pub fn log_det_of(log_scale: &Tensor, full_shape: &[usize]) -> Tensor {
    let n = full_shape[0];
    log_scale.broadcast_to(full_shape).sum_to(&[n, 1, 1, 1]).reshape(&[n])
}

impl Module for FlowLayer {
    fn params(&self) -> Vec<Param> {
        match &self.body {
            Body::Condlin { head } => head.params(),
            Body::Sdl { inp, cond, mid, head } | Body::Sal { inp, cond, mid, head } => {
                let mut p = inp.params();
                p.extend(cond.params());
                p.extend(mid.params());
                p.extend(head.params());
                p
            }
        }
    }
}
