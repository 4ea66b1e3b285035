//! The pixel-wise conditional normalizing flow.

pub mod encoder;
pub mod layers;
pub mod stack;

pub use encoder::{one_hot, ConditionEncoder};
pub use layers::{FlowContext, FlowLayer, FlowLayerSpec, LayerKind, LOG_SCALE_BOUND};
pub use stack::{
    dequantize, nll_from_latent, quantize, round_half_up, standard_normal, substream, FlowConfig, FlowOutput,
    FlowStack, LayerToggles, PixelGaussianStats,
};
