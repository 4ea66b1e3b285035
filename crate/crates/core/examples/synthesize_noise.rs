//! Loads a noise-model checkpoint and writes a synthetic noisy image for a
//! flat grey chart at every ISO the model knows.
//!
//! cargo run --release --example synthesize_noise -- CHECKPOINT [OUT_DIR]
//!
//! A checkpoint comes from `train_noise_model` (`ckpt_best.bin`) or
//! `camnoise train`.

use std::path::PathBuf;

use camnoise::analysis::estimate_hetero_from;
use camnoise::data_io::CameraCondition;
use camnoise::gan::end_to_end_synthesize;
use camnoise::train::NoiseModel;
use camnoise::Image;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> camnoise::Result<()> {
    let mut args = std::env::args().skip(1);
    let Some(ck) = args.next().map(PathBuf::from) else {
        eprintln!("usage: synthesize_noise CHECKPOINT [OUT_DIR]");
        std::process::exit(1);
    };
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("camnoise-synth"));
    std::fs::create_dir_all(&out).map_err(|e| camnoise::Error::io(&out, e))?;
    let model = NoiseModel::load(&ck)?;
    println!("GAN refinement: {}", if model.generator.is_some() { "on" } else { "off" });

    // Eight grey steps from dark to bright, 32 columns each.
    let chart = Image::from_fn(64, 256, |_, _, x| 24.0 + (x / 32) as f64 * 24.0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for cond in model.registry.all_conditions() {
        let s = end_to_end_synthesize(&model.flow, model.generator.as_ref(), &chart, cond, &mut rng)?;
        let name = format!(
            "{}_iso{}.png",
            model.registry.camera_name(cond),
            model.registry.iso_value(cond)
        );
        s.noisy.save_png(&out.join(&name))?;
        let noise = s.noisy.zip_map(&chart, |y, x| y - x);
        let fit = estimate_hetero_from(&[(&chart, &noise)]);
        let CameraCondition { camera, iso } = cond;
        match fit {
            Ok(h) => println!(
                "camera {camera} iso #{iso} -> {name}: beta_s^2 {:.3}, beta_c^2 {:.2}",
                h.beta_s_sq[1], h.beta_c_sq[1]
            ),
            Err(e) => println!("camera {camera} iso #{iso} -> {name} ({e})"),
        }
    }
    Ok(())
}
