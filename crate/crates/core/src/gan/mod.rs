//! Adversarial spatial-correlation refinement on top of the flow's
//! pixel-wise samples.

pub mod critic;
pub mod generator;
pub mod losses;

pub use critic::{Critic, CriticConfig, VggCritic};
pub use generator::{GeneratorConfig, UNetGenerator, NOISE_SCALE};
pub use losses::{
    adversarial_loss, adversarial_loss_on, critic_input, critic_loss, critic_loss_on, gradient_penalty, GanLossTerms,
    GanWeights,
};

use camnoise_tensor::no_grad;
use rand::Rng;

use crate::data_io::CameraCondition;
use crate::error::Result;
use crate::flow::FlowStack;
use crate::image::Image;

/// Continuous synthesized noise and the 8-bit noisy image it produces.
#[derive(Clone, Debug)]
pub struct Synthesis {
    pub noise: Image,
    pub noisy: Image,
}

/// Flow sample, optional generator refinement, then `clip(round(x + ñ))`.
pub fn end_to_end_synthesize(
    stack: &FlowStack,
    gen: Option<&UNetGenerator>,
    clean: &Image,
    cond: CameraCondition,
    rng: &mut impl Rng,
) -> Result<Synthesis> {
    let n_prime = stack.sample_pixelwise(clean, cond, rng)?;
    let noise = match gen {
        Some(g) => {
            let t = no_grad(|| g.refine(&Image::batch(&[&n_prime])))?;
            Image::unbatch(&t).remove(0)
        }
        None => n_prime,
    };
    let noisy = clean.zip_map(&noise, |x, n| x + n).quantized();
    Ok(Synthesis { noise, noisy })
}
