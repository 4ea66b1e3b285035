//! Heteroscedastic fit, std-vs-intensity curve and spatial correlation of
//! an oracle camera whose noise is correlated between horizontal neighbours.
//!
//! cargo run --release --example analyze_noise

use camnoise::analysis::{estimate_hetero, noise_samples, spatial_correlation, std_vs_intensity};
use camnoise::data_io::{uniform_intensity_image, CameraCondition, CorrelationKernel, ImagePair, IsoGain, SynthCameraParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> camnoise::Result<()> {
    let params = SynthCameraParams {
        beta_s_sq: [0.3, 0.5, 0.7],
        beta_c_sq: [2.0, 4.0, 6.0],
        kernel: CorrelationKernel::horizontal_pair(),
        gains: vec![IsoGain { iso: 100, gain: 1.0 }],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut pairs = Vec::new();
    for i in 0..12 {
        let clean = uniform_intensity_image(128, 128, 20.0, 200.0, &mut rng);
        let noisy = params.observe(&clean, 100, &mut rng)?;
        pairs.push(ImagePair::new(clean, Some(noisy), CameraCondition { camera: 0, iso: 0 }, format!("s{i}"))?);
    }

    let fit = estimate_hetero(&pairs)?;
    for c in 0..3 {
        println!(
            "channel {c}: beta_s^2 {:.3} (true {}), beta_c^2 {:.2} (true {})",
            fit.beta_s_sq[c], params.beta_s_sq[c], fit.beta_c_sq[c], params.beta_c_sq[c]
        );
    }

    let curve = std_vs_intensity(&pairs, 16)?;
    println!("\nchannel 1 std vs intensity:");
    for b in curve.channels[1].iter().filter(|b| b.reliable) {
        println!("  {:6.1}  {:5.2}  ({} px)", b.center, b.std, b.count);
    }

    let fields: Vec<_> = noise_samples(&pairs)?.into_iter().map(|(_, n)| n).collect();
    println!("\ncorrelation by distance:");
    for p in spatial_correlation(&fields, 3)?.points {
        println!("  d = {:.3}  r = {:+.3}", p.distance, p.r.unwrap_or(f64::NAN));
    }
    Ok(())
}
