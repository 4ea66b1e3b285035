//! Histogram KL between real oracle noise and three synthesizers: a fitted
//! AWGN model, a fitted heteroscedastic model and a briefly trained flow.
//!
//! cargo run --release --example kl_evaluation

use camnoise::data_io::{uniform_intensity_image, ConditionRegistry, CorrelationKernel, ImagePair, IsoGain, SynthCameraParams};
use camnoise::eval::{kl_report, AwgnBaseline, HeteroBaseline, NoiseSynthesizer};
use camnoise::train::{TrainConfig, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn pairs(params: &SynthCameraParams, reg: &ConditionRegistry, n: usize, seed: u64) -> camnoise::Result<Vec<ImagePair>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let iso = [100, 200][i % 2];
            let clean = uniform_intensity_image(64, 64, 20.0, 200.0, &mut rng);
            let noisy = params.observe(&clean, iso, &mut rng)?;
            ImagePair::new(clean, Some(noisy), reg.condition("VIRT", iso)?, format!("s{seed}_{i}"))
        })
        .collect()
}

fn main() -> camnoise::Result<()> {
    let params = SynthCameraParams {
        beta_s_sq: [0.5; 3],
        beta_c_sq: [4.0; 3],
        kernel: CorrelationKernel::identity(),
        gains: vec![IsoGain { iso: 100, gain: 1.0 }, IsoGain { iso: 200, gain: 2.0 }],
    };
    let reg = ConditionRegistry::new(vec!["VIRT".to_string()], vec![100, 200]);
    let train = pairs(&params, &reg, 16, 1)?;
    let test = pairs(&params, &reg, 8, 2)?;

    let mut cfg = TrainConfig {
        enable_gan: false,
        patch_size: 32,
        patch_stride: 16,
        batch_size: 8,
        lr_initial: 3e-3,
        epochs: 24,
        steps_per_epoch: Some(50),
        lr_halving_period: 8,
        ..TrainConfig::default()
    };
    cfg.flow.hidden_width = 16;
    let mut trainer = Trainer::from_pairs(cfg, &reg, train.clone(), None)?;
    trainer.run()?;

    let awgn = AwgnBaseline::fit(&train)?;
    let hetero = HeteroBaseline::fit(&train)?;
    let models: [(&str, &dyn NoiseSynthesizer); 3] = [("awgn", &awgn), ("hetero", &hetero), ("flow", &trainer.model)];
    for (name, m) in models {
        let report = kl_report(&test, m, &mut ChaCha8Rng::seed_from_u64(9))?;
        let groups: Vec<String> = report
            .groups
            .iter()
            .map(|g| format!("ISO {} {:.4}", reg.iso_value(g.condition), g.kl))
            .collect();
        println!("{name:7} overall {:.4}  ({})", report.overall, groups.join(", "));
    }
    Ok(())
}
