//! Trains flow + GAN on a correlated oracle camera and reports how much
//! horizontal correlation the synthesized noise carries as training goes.
//!
//! cargo run --release --example train_noise_model -- [STEPS] [OUT_DIR]

use std::path::PathBuf;

use camnoise::analysis::lag_correlation;
use camnoise::data_io::{synthetic_scene, ConditionRegistry, CorrelationKernel, ImagePair, IsoGain, SynthCameraParams};
use camnoise::gan::end_to_end_synthesize;
use camnoise::train::{TrainConfig, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> camnoise::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: u64 = args.next().map_or(600, |s| s.parse().expect("STEPS"));
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("camnoise-train"));
    std::fs::create_dir_all(&out).map_err(|e| camnoise::Error::io(&out, e))?;

    let params = SynthCameraParams {
        beta_s_sq: [0.5; 3],
        beta_c_sq: [4.0; 3],
        kernel: CorrelationKernel::horizontal_pair(),
        gains: vec![IsoGain { iso: 100, gain: 1.0 }, IsoGain { iso: 200, gain: 2.0 }],
    };
    let registry = ConditionRegistry::new(vec!["VIRT".to_string()], vec![100, 200]);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut pairs = Vec::new();
    for i in 0..16 {
        let iso = [100, 200][i % 2];
        let clean = synthetic_scene(96, 96, 20.0, 200.0, &mut rng);
        let noisy = params.observe(&clean, iso, &mut rng)?;
        pairs.push(ImagePair::new(clean, Some(noisy), registry.condition("VIRT", iso)?, format!("s{i}"))?);
    }

    let mut cfg = TrainConfig {
        patch_size: 32,
        patch_stride: 16,
        batch_size: 8,
        lr_initial: 2e-3,
        gan_lr_initial: Some(5e-4),
        adam_beta1: 0.5,
        adam_beta2: 0.9,
        augment: false,
        critic_steps: 2,
        epochs: 100,
        lr_halving_period: 10,
        steps_per_epoch: Some(100),
        max_steps: Some(steps),
        ..TrainConfig::default()
    };
    cfg.flow.hidden_width = 16;
    cfg.generator.base_channels = 8;
    cfg.generator.unet_depth = 2;
    cfg.critic.base_channels = 16;
    cfg.critic.conv_stages = 3;

    let mut trainer = Trainer::from_pairs(cfg, &registry, pairs, Some(&out))?;
    while !trainer.is_finished() {
        let e = trainer.run_epoch()?;
        let mut srng = ChaCha8Rng::seed_from_u64(1);
        let fields: Vec<_> = (0..4)
            .map(|k| {
                let clean = synthetic_scene(64, 64, 20.0, 200.0, &mut srng);
                let cond = registry.condition("VIRT", [100, 200][k % 2]).unwrap();
                let s = end_to_end_synthesize(&trainer.model.flow, trainer.model.generator.as_ref(), &clean, cond, &mut srng)
                    .unwrap();
                s.noisy.zip_map(&clean, |y, x| y - x)
            })
            .collect();
        println!(
            "epoch {:3}  step {:5}  val NLL/dim {:.4}  lag-1 r {:+.3}",
            e.epoch,
            trainer.state.step,
            e.val_nll / (3.0 * 32.0 * 32.0),
            lag_correlation(&fields, 1, 0).unwrap_or(f64::NAN)
        );
    }
    println!("checkpoints in {}", out.display());
    Ok(())
}
