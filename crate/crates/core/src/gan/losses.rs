use camnoise_tensor::{grad, is_grad_enabled, no_grad, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gan::critic::Critic;
use crate::gan::generator::UNetGenerator;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanWeights {
    /// Balance weight on both adversarial objectives.
    pub lambda: f64,
    /// Gradient-penalty weight.
    pub alpha: f64,
}

impl Default for GanWeights {
    fn default() -> Self {
        GanWeights { lambda: 0.5, alpha: 10.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GanLossTerms {
    /// `mean D(fake) − mean D(real)`.
    pub wgan: f64,
    pub gp: f64,
    /// `λ (wgan + α gp)`.
    pub total: f64,
    pub lambda: f64,
    pub alpha: f64,
}

/// Channel-wise concatenation `clean ∥ noise`.
pub fn critic_input(clean: &Tensor, noise: &Tensor) -> Tensor {
    Tensor::concat(&[clean.clone(), noise.clone()], 1)
}

/// `−λ · mean D(x ∥ refine(n'))`. Whether `n'` carries gradient back to
/// the flow is up to the caller.
pub fn adversarial_loss(
    critic: &dyn Critic,
    gen: &UNetGenerator,
    clean: &Tensor,
    n_prime: &Tensor,
    lambda: f64,
) -> Result<Tensor> {
    let fake = gen.refine(n_prime)?;
    adversarial_loss_on(critic, clean, &fake, lambda)
}

/// [`adversarial_loss`] for an already-refined noise batch.
pub fn adversarial_loss_on(critic: &dyn Critic, clean: &Tensor, fake: &Tensor, lambda: f64) -> Result<Tensor> {
    let loss = critic.score(&critic_input(clean, fake)).mean().scale(-lambda);
    if !loss.item().is_finite() {
        return Err(Error::Numerical("non-finite adversarial loss".into()));
    }
    Ok(loss)
}

/// Critic objective with the generator held fixed: the fake batch is
/// `refine(n')` computed without recording a graph.
pub fn critic_loss(
    critic: &dyn Critic,
    gen: &UNetGenerator,
    clean: &Tensor,
    real_noise: &Tensor,
    n_prime: &Tensor,
    weights: GanWeights,
    rng: &mut impl Rng,
) -> Result<(Tensor, GanLossTerms)> {
    let fake = no_grad(|| gen.refine(&n_prime.detach()))?;
    critic_loss_on(critic, clean, real_noise, &fake, weights, rng)
}

/// `λ (mean D(x∥fake) − mean D(x∥real) + α · mean (‖∇D(x̂)‖ − 1)²)` with
/// `x̂ = ε (x∥real) + (1 − ε)(x∥fake)`, one `ε ~ U(0, 1)` per sample.
pub fn critic_loss_on(
    critic: &dyn Critic,
    clean: &Tensor,
    real_noise: &Tensor,
    fake_noise: &Tensor,
    weights: GanWeights,
    rng: &mut impl Rng,
) -> Result<(Tensor, GanLossTerms)> {
    if !is_grad_enabled() {
        return Err(Error::Configuration(
            "critic loss needs gradient recording for the penalty term".into(),
        ));
    }
    if real_noise.shape() != fake_noise.shape() || clean.shape() != real_noise.shape() {
        return Err(Error::validation("clean, real and fake batches must share a shape"));
    }
    let real_in = critic_input(clean, &real_noise.detach());
    let fake_in = critic_input(clean, &fake_noise.detach());
    let wgan = critic.score(&fake_in).mean().sub(&critic.score(&real_in).mean());

    let n = real_in.shape()[0];
    let eps: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let eps = Tensor::from_vec(eps, &[n, 1, 1, 1]);
    let mixed = real_in.mul(&eps).add(&fake_in.mul(&eps.neg().add_scalar(1.0)));
    let gp = gradient_penalty(critic, &mixed.detach_leaf());

    let total = wgan.add(&gp.scale(weights.alpha)).scale(weights.lambda);
    let terms = GanLossTerms {
        wgan: wgan.item(),
        gp: gp.item(),
        total: total.item(),
        lambda: weights.lambda,
        alpha: weights.alpha,
    };
    if !(terms.total.is_finite() && terms.gp.is_finite()) {
        return Err(Error::Numerical("non-finite critic loss".into()));
    }
    Ok((total, terms))
}

/// `mean_n (‖∂D/∂x̂_n‖₂ − 1)²` over a leaf batch `x̂`; differentiable in the
/// critic parameters. A critic that ignores its input has zero gradient and
/// a penalty of exactly 1.
pub fn gradient_penalty(critic: &dyn Critic, mixed: &Tensor) -> Tensor {
    let n = mixed.shape()[0];
    let g = grad(&critic.score(mixed).sum(), &[mixed], true)
        .remove(0)
        .unwrap_or_else(|| Tensor::zeros(mixed.shape()));
    let rank = mixed.shape().len();
    let mut per_sample = vec![1; rank];
    per_sample[0] = n;
    let norm = g.square().sum_to(&per_sample).sqrt();
    norm.add_scalar(-1.0).square().mean()
}
