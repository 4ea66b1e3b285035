//! Renders clean scenes through a virtual heteroscedastic camera and writes
//! a paired dataset with its manifest.
//!
//! cargo run --release --example oracle_dataset -- [OUT_DIR]

use std::path::PathBuf;

use camnoise::data_io::{
    generate_oracle_dataset, synthetic_scene, CorrelationKernel, IsoGain, OracleItem, SynthCameraParams,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> camnoise::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("camnoise-oracle"));
    let params = SynthCameraParams {
        beta_s_sq: [0.5, 0.5, 0.5],
        beta_c_sq: [4.0, 4.0, 4.0],
        kernel: CorrelationKernel::horizontal_pair(),
        gains: vec![IsoGain { iso: 100, gain: 1.0 }, IsoGain { iso: 400, gain: 2.5 }],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let items: Vec<OracleItem> = (0..6)
        .map(|i| OracleItem {
            clean: synthetic_scene(96, 96, 20.0, 200.0, &mut rng),
            camera: "VIRT".into(),
            iso: if i % 2 == 0 { 100 } else { 400 },
            scene_id: format!("scene{i}"),
        })
        .collect();
    let manifest = generate_oracle_dataset(&params, &items, 7, &out)?;
    println!("{} pairs in {}", manifest.len(), out.display());
    print!("{}", manifest.to_text());
    for iso in [100, 400] {
        let g = params.gain(iso)?;
        println!(
            "ISO {iso}: std at intensity 50 = {:.2}, at 200 = {:.2}",
            params.variance(0, 50.0, g).sqrt(),
            params.variance(0, 200.0, g).sqrt()
        );
    }
    Ok(())
}
