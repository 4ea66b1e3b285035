//! Gradient-penalty sanity checks against critics whose input gradient is
//! known analytically, followed by the penalty of a real VGG critic.
//!
//! cargo run --release --example wgan_gp_closed_forms

use camnoise::gan::{critic_loss_on, gradient_penalty, Critic, CriticConfig, GanWeights, VggCritic};
use camnoise_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Constant;

impl Critic for Constant {
    fn score(&self, input: &Tensor) -> Tensor {
        Tensor::full(&[input.shape()[0]], 3.0)
    }
}

/// `D(x) = Σ x`: the input gradient is all ones.
struct Sum;

impl Critic for Sum {
    fn score(&self, input: &Tensor) -> Tensor {
        let n = input.shape()[0];
        input.sum_to(&[n, 1, 1, 1]).reshape(&[n])
    }
}

fn main() -> camnoise::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (h, w) = (8, 8);
    let batch = |rng: &mut ChaCha8Rng| Tensor::from_vec((0..2 * 3 * h * w).map(|_| rng.random_range(-9.0..9.0)).collect(), &[2, 3, h, w]);
    let (clean, real, fake) = (batch(&mut rng), batch(&mut rng), batch(&mut rng));

    let (_, t) = critic_loss_on(&Constant, &clean, &real, &fake, GanWeights::default(), &mut rng)?;
    println!("constant critic: gp {:.4}, critic loss {:.4}", t.gp, t.total);

    let mixed = Tensor::concat(&[clean.clone(), real.clone()], 1).detach_leaf();
    let gp = gradient_penalty(&Sum, &mixed).item();
    let expect = ((6 * h * w) as f64).sqrt() - 1.0;
    println!("sum critic: gp {gp:.4}, closed form {:.4}", expect * expect);

    let vgg = VggCritic::new(&CriticConfig { conv_stages: 2, base_channels: 8 }, &mut rng)?;
    let (_, t) = critic_loss_on(&vgg, &clean, &real, &fake, GanWeights::default(), &mut rng)?;
    println!("fresh VGG critic: wgan {:+.4}, gp {:.4}, total {:.4}", t.wgan, t.gp, t.total);
    Ok(())
}
