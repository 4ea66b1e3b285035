//! Downstream check: trains one small denoiser on real oracle pairs and one
//! on AWGN-synthesized pairs, then scores both on held-out real images.
//!
//! cargo run --release --example denoiser_loop

use camnoise::data_io::{synthetic_scene, CameraCondition, CorrelationKernel, ImagePair, IsoGain, SynthCameraParams};
use camnoise::eval::{evaluate_denoiser_on, psnr, train_denoiser_on, AwgnBaseline, DenoiserConfig, DenoiserSpec, NoiseSynthesizer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> camnoise::Result<()> {
    let params = SynthCameraParams {
        beta_s_sq: [0.5; 3],
        beta_c_sq: [4.0; 3],
        kernel: CorrelationKernel::identity(),
        gains: vec![IsoGain { iso: 100, gain: 2.0 }],
    };
    let cond = CameraCondition { camera: 0, iso: 0 };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut make = |n: usize, tag: &str| -> camnoise::Result<Vec<ImagePair>> {
        (0..n)
            .map(|i| {
                let clean = synthetic_scene(64, 64, 20.0, 200.0, &mut rng);
                let noisy = params.observe(&clean, 100, &mut rng)?;
                ImagePair::new(clean, Some(noisy), cond, format!("{tag}{i}"))
            })
            .collect()
    };
    let real_train = make(12, "train")?;
    let test = make(4, "test")?;

    let awgn = AwgnBaseline::fit(&real_train)?;
    let mut srng = ChaCha8Rng::seed_from_u64(5);
    let synth_train: Vec<ImagePair> = real_train
        .iter()
        .map(|p| {
            let noisy = awgn.synthesize(&p.clean, p.condition, &mut srng)?;
            ImagePair::new(p.clean.clone(), Some(noisy), p.condition, p.scene_id.clone())
        })
        .collect::<camnoise::Result<_>>()?;

    let cfg = DenoiserConfig {
        spec: DenoiserSpec { depth: 5, channels: 16, residual: true },
        epochs: 12,
        lr_initial: 1e-3,
        lr_halving_period: 4,
        patch_size: 32,
        patch_stride: 16,
        steps_per_epoch: Some(50),
        ..DenoiserConfig::default()
    };
    let ids: Vec<String> = test.iter().map(|p| p.scene_id.clone()).collect();
    let noisy_psnr = test
        .iter()
        .map(|p| psnr(&p.clean, p.noisy.as_ref().unwrap()))
        .sum::<camnoise::Result<f64>>()?
        / test.len() as f64;
    println!("noisy input       PSNR {noisy_psnr:.2} dB");
    for (name, data) in [("real pairs", real_train), ("AWGN pairs", synth_train)] {
        let outcome = train_denoiser_on(&cfg, data)?;
        let r = evaluate_denoiser_on(&outcome.denoiser, &test, &ids)?;
        println!("trained on {name}: PSNR {:.2} dB, SSIM {:.4}", r.mean_psnr, r.mean_ssim);
    }
    Ok(())
}
