//! Noise-model quality metrics and the downstream denoiser harness.

pub mod baselines;
pub mod denoiser;
pub mod metrics;

pub use baselines::{kl_report, write_kl_csv, AwgnBaseline, GroupKl, HeteroBaseline, KlReport, NoiseSynthesizer};
pub use denoiser::{
    evaluate_denoiser, evaluate_denoiser_on, train_denoiser, train_denoiser_on, DenoiseReport, Denoiser,
    DenoiserConfig, DenoiserOutcome, DenoiserSpec, ImageScore, DENOISER_KIND,
};
pub use metrics::{histogram, kl_divergence, kl_from_probabilities, mse, psnr, ssim, NoiseHistogram, HIST_BINS};
