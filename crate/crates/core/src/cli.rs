//! Command-line front end. [`run`] parses arguments, dispatches and maps
//! errors to exit codes: 0 success, 1 usage or validation failure, 2
//! numerical divergence.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    estimate_hetero_from, noise_samples, spatial_correlation, std_vs_intensity_from, write_correlation_csv,
    write_hetero_csv, write_std_curve_csv, NoiseSample,
};
use crate::checkpoint::FORMAT_VERSION;
use crate::data_io::{
    generate_oracle_dataset, load_all, load_manifest, synthetic_scene, CorrelationKernel, IsoGain, OracleItem,
    SynthCameraParams,
};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate_denoiser, kl_report, train_denoiser, write_kl_csv, AwgnBaseline, Denoiser, DenoiserConfig,
    HeteroBaseline, NoiseSynthesizer,
};
use crate::gan::end_to_end_synthesize;
use crate::image::Image;
use crate::train::{apply_overrides, make_denoiser_dataset, ConditionPolicy, NoiseModel, TrainConfig, Trainer};

pub const RUN_META: &str = "run.meta";
/// The resolved configuration alone, loadable again with `--config`.
pub const RESOLVED_CONFIG: &str = "config.toml";

#[derive(Debug, Parser)]
#[command(name = "camnoise", version, about = "Learn, synthesize and evaluate camera noise")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// Output directory; nothing is written outside it.
    #[arg(long)]
    out: PathBuf,
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value` override, dotted keys for nested tables. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Noise statistics of a paired dataset, per camera and ISO.
    Analyze {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        bins: usize,
        #[arg(long, default_value_t = 3)]
        max_distance: usize,
    },
    /// Renders clean scenes through a virtual camera with known noise.
    OracleGen {
        #[command(flatten)]
        common: Common,
    },
    /// Trains the noise model.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Adds synthesized noise to every clean image of a manifest.
    Synthesize {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `CAMERA:ISO`; defaults to each row's own camera and ISO.
        #[arg(long)]
        condition: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Builds a clean/synthetic-noisy dataset for denoiser training.
    MakeDataset {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `uniform` or `CAMERA:ISO`.
        #[arg(long, default_value = "uniform")]
        condition: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Trains the downstream denoiser on a paired manifest.
    TrainDenoiser {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Histogram KL of a noise model and/or PSNR/SSIM of a denoiser.
    Evaluate {
        /// Test manifest with real noisy images.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Noise-model checkpoint; enables `kl_report.csv`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Denoiser checkpoint; enables `denoise_report.csv`.
        #[arg(long)]
        denoiser: Option<PathBuf>,
        /// Also report AWGN and heteroscedastic baselines fitted on this manifest.
        #[arg(long)]
        baselines: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Diverged { .. } => 2,
        _ => 1,
    }
}

/// Virtual camera and scene generator settings for `oracle-gen`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleGenConfig {
    pub camera: String,
    pub beta_s_sq: f64,
    pub beta_c_sq: f64,
    /// `identity` or `horizontal_pair`.
    pub kernel: String,
    pub isos: Vec<u32>,
    pub gains: Vec<f64>,
    /// Scenes per ISO.
    pub scenes: usize,
    pub height: usize,
    pub width: usize,
    pub min_intensity: f64,
    pub max_intensity: f64,
    pub seed: u64,
}

impl Default for OracleGenConfig {
    fn default() -> Self {
        OracleGenConfig {
            camera: "VIRT".into(),
            beta_s_sq: 0.5,
            beta_c_sq: 4.0,
            kernel: "identity".into(),
            isos: vec![100, 200],
            gains: vec![1.0, 2.0],
            scenes: 4,
            height: 64,
            width: 64,
            min_intensity: 20.0,
            max_intensity: 200.0,
            seed: 0,
        }
    }
}

impl OracleGenConfig {
    pub fn camera_params(&self) -> Result<SynthCameraParams> {
        let kernel = match self.kernel.as_str() {
            "identity" => CorrelationKernel::identity(),
            "horizontal_pair" => CorrelationKernel::horizontal_pair(),
            k => return Err(Error::Configuration(format!("unknown kernel {k:?}"))),
        };
        if self.isos.len() != self.gains.len() {
            return Err(Error::Configuration("isos and gains must have the same length".into()));
        }
        let params = SynthCameraParams {
            beta_s_sq: [self.beta_s_sq; 3],
            beta_c_sq: [self.beta_c_sq; 3],
            kernel,
            gains: self
                .isos
                .iter()
                .zip(&self.gains)
                .map(|(&iso, &gain)| IsoGain { iso, gain })
                .collect(),
        };
        params.validate().map_err(|e| Error::Configuration(e.to_string()))?;
        Ok(params)
    }

    pub fn items(&self) -> Vec<OracleItem> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5CE7E);
        let mut out = Vec::new();
        for s in 0..self.scenes {
            for &iso in &self.isos {
                out.push(OracleItem {
                    clean: synthetic_scene(self.height, self.width, self.min_intensity, self.max_intensity, &mut rng),
                    camera: self.camera.clone(),
                    iso,
                    scene_id: format!("scene{s:03}_iso{iso}"),
                });
            }
        }
        out
    }
}

fn load_config<T>(common: &Common) -> Result<T>
where
    T: Default + Serialize + for<'de> Deserialize<'de>,
{
    let base: T = match &common.config {
        Some(p) => {
            if !p.exists() {
                return Err(Error::NotFound(p.clone()));
            }
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str(&text).map_err(|e| Error::Parse {
                path: p.display().to_string(),
                line: e.span().map_or(0, |s| text[..s.start].lines().count().max(1) as u64),
                msg: e.message().to_string(),
            })?
        }
        None => T::default(),
    };
    let mut overrides = common.overrides.clone();
    if let Some(seed) = common.seed {
        overrides.push(format!("seed={seed}"));
    }
    apply_overrides(&base, &overrides)
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes `run.meta`: command, seed, crate and checkpoint-format versions,
/// inputs and the fully resolved configuration (also saved on its own as
/// `config.toml`).
fn write_run_meta<C: Serialize>(
    out: &Path,
    command: &str,
    seed: u64,
    inputs: &[(&str, &Path)],
    config: Option<&C>,
) -> Result<()> {
    let mut t = toml::Table::new();
    t.insert("command".into(), command.into());
    t.insert("seed".into(), toml::Value::Integer(seed as i64));
    t.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    t.insert("checkpoint_format".into(), toml::Value::Integer(FORMAT_VERSION as i64));
    let inputs: toml::Table = inputs
        .iter()
        .map(|(k, p)| (k.to_string(), toml::Value::String(p.display().to_string())))
        .collect();
    t.insert("inputs".into(), toml::Value::Table(inputs));
    if let Some(c) = config {
        let v = toml::Value::try_from(c).map_err(|e| Error::Format(e.to_string()))?;
        let text = toml::to_string(&v).map_err(|e| Error::Format(e.to_string()))?;
        let cfg_path = out.join(RESOLVED_CONFIG);
        fs::write(&cfg_path, text).map_err(|e| Error::io(&cfg_path, e))?;
        t.insert("config".into(), v);
    }
    let path = out.join(RUN_META);
    fs::write(&path, toml::to_string(&t).map_err(|e| Error::Format(e.to_string()))?).map_err(|e| Error::io(&path, e))
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Analyze {
            manifest,
            out,
            bins,
            max_distance,
        } => analyze(&manifest, &out, bins, max_distance),
        Command::OracleGen { common } => {
            let cfg: OracleGenConfig = load_config(&common)?;
            let params = cfg.camera_params()?;
            create_out(&common.out)?;
            let m = generate_oracle_dataset(&params, &cfg.items(), cfg.seed, &common.out)?;
            write_run_meta(&common.out, "oracle-gen", cfg.seed, &[], Some(&cfg))?;
            println!("wrote {} pairs to {}", m.len(), common.out.display());
            Ok(())
        }
        Command::Train {
            manifest,
            common,
            checkpoint,
        } => {
            let m = load_manifest(&manifest)?;
            create_out(&common.out)?;
            let mut trainer = match &checkpoint {
                Some(ck) => Trainer::resume(ck, &m, Some(&common.out))?,
                None => {
                    let cfg: TrainConfig = load_config(&common)?;
                    cfg.validate()?;
                    Trainer::new(cfg, &m, Some(&common.out))?
                }
            };
            let mut inputs = vec![("manifest", manifest.as_path())];
            if let Some(ck) = &checkpoint {
                inputs.push(("checkpoint", ck.as_path()));
            }
            write_run_meta(&common.out, "train", trainer.config.seed, &inputs, Some(&trainer.config))?;
            let outcome = trainer.run()?;
            for e in &outcome.epochs {
                println!("epoch {} val_nll {:.4}", e.epoch, e.val_nll);
            }
            if let Some(b) = outcome.best_checkpoint {
                println!("best checkpoint: {}", b.display());
            }
            Ok(())
        }
        Command::Synthesize {
            checkpoint,
            manifest,
            out,
            condition,
            seed,
        } => {
            let model = NoiseModel::load(&checkpoint)?;
            let m = load_manifest(&manifest)?;
            let fixed = condition
                .map(|c| match ConditionPolicy::parse(&c)? {
                    ConditionPolicy::Fixed { camera, iso } => model.registry.condition(&camera, iso),
                    ConditionPolicy::Uniform => Err(Error::Configuration("synthesize needs CAMERA:ISO".into())),
                })
                .transpose()?;
            create_out(&out)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for (i, e) in m.entries.iter().enumerate() {
                let cond = match fixed {
                    Some(c) => c,
                    None => model.registry.condition(&e.camera_name, e.iso_value)?,
                };
                let clean = Image::load_png(&m.resolve(&e.clean_path))?;
                let s = end_to_end_synthesize(&model.flow, model.generator.as_ref(), &clean, cond, &mut rng)?;
                s.noisy.save_png(&out.join(format!("synth_{i:04}.png")))?;
            }
            write_run_meta::<()>(
                &out,
                "synthesize",
                seed,
                &[("checkpoint", &checkpoint), ("manifest", &manifest)],
                None,
            )?;
            println!("synthesized {} images", m.len());
            Ok(())
        }
        Command::MakeDataset {
            checkpoint,
            manifest,
            out,
            condition,
            seed,
        } => {
            let model = NoiseModel::load(&checkpoint)?;
            let m = load_manifest(&manifest)?;
            let policy = ConditionPolicy::parse(&condition)?;
            create_out(&out)?;
            let made = make_denoiser_dataset(&model, &m, &policy, seed, &out)?;
            write_run_meta::<()>(
                &out,
                "make-dataset",
                seed,
                &[("checkpoint", &checkpoint), ("manifest", &manifest)],
                None,
            )?;
            println!("wrote {} pairs to {}", made.len(), out.display());
            Ok(())
        }
        Command::TrainDenoiser { manifest, common } => {
            let cfg: DenoiserConfig = load_config(&common)?;
            cfg.validate()?;
            let m = load_manifest(&manifest)?;
            create_out(&common.out)?;
            write_run_meta(&common.out, "train-denoiser", cfg.seed, &[("manifest", &manifest)], Some(&cfg))?;
            let outcome = train_denoiser(&cfg, &m)?;
            let log: String = std::iter::once("step\tloss\n".to_string())
                .chain(outcome.losses.iter().enumerate().map(|(i, l)| format!("{i}\t{l}\n")))
                .collect();
            let log_path = common.out.join("train.log");
            fs::write(&log_path, log).map_err(|e| Error::io(&log_path, e))?;
            let ck_path = common.out.join("denoiser.bin");
            outcome.denoiser.to_checkpoint(&cfg).write(&ck_path)?;
            if let Some(p) = outcome.val_psnr.last() {
                println!("validation PSNR {p:.3} dB");
            }
            println!("denoiser checkpoint: {}", ck_path.display());
            Ok(())
        }
        Command::Evaluate {
            manifest,
            out,
            checkpoint,
            denoiser,
            baselines,
            seed,
        } => {
            if checkpoint.is_none() && denoiser.is_none() {
                return Err(Error::Configuration("evaluate needs --checkpoint and/or --denoiser".into()));
            }
            let m = load_manifest(&manifest)?;
            create_out(&out)?;
            let mut inputs = vec![("manifest", manifest.as_path())];
            if let Some(ck) = &checkpoint {
                let model = NoiseModel::load(ck)?;
                let pairs = load_all(&m)?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut reports = vec![("model", kl_report(&pairs, &model, &mut rng)?)];
                if let Some(b) = &baselines {
                    let fit = load_all(&load_manifest(b)?)?;
                    let awgn = AwgnBaseline::fit(&fit)?;
                    let hetero = HeteroBaseline::fit(&fit)?;
                    let synths: [(&str, &dyn NoiseSynthesizer); 2] = [("awgn", &awgn), ("hetero", &hetero)];
                    for (name, s) in synths {
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        reports.push((name, kl_report(&pairs, s, &mut rng)?));
                    }
                    inputs.push(("baselines", b.as_path()));
                }
                let named: Vec<(&str, &crate::eval::KlReport)> = reports.iter().map(|(n, r)| (*n, r)).collect();
                write_kl_csv(&out.join("kl_report.csv"), &m.registry, &named)?;
                for (n, r) in &reports {
                    println!("KL {n}: {:.5}", r.overall);
                }
                inputs.push(("checkpoint", ck.as_path()));
            }
            if let Some(d) = &denoiser {
                let den = Denoiser::load(d)?;
                let report = evaluate_denoiser(&den, &m)?;
                report.write_csv(&out.join("denoise_report.csv"))?;
                println!("PSNR {:.3} dB, SSIM {:.4}", report.mean_psnr, report.mean_ssim);
                inputs.push(("denoiser", d.as_path()));
            }
            write_run_meta::<()>(&out, "evaluate", seed, &inputs, None)
        }
    }
}

fn analyze(manifest: &Path, out: &Path, bins: usize, max_distance: usize) -> Result<()> {
    let m = load_manifest(manifest)?;
    let pairs = load_all(&m)?;
    let samples = noise_samples(&pairs)?;
    let mut groups: BTreeMap<_, Vec<usize>> = BTreeMap::new();
    for (i, p) in pairs.iter().enumerate() {
        groups.entry(p.condition).or_default().push(i);
    }
    create_out(out)?;
    for (cond, idx) in groups {
        let tag = format!("{}_{}", m.registry.camera_name(cond), m.registry.iso_value(cond));
        let group: Vec<NoiseSample<'_>> = idx.iter().map(|&i| (&samples[i].0, &samples[i].1)).collect();
        match estimate_hetero_from(&group) {
            Ok(h) => write_hetero_csv(&out.join(format!("{tag}_hetero.csv")), &h)?,
            Err(e @ (Error::InsufficientData(_) | Error::Fit(_))) => eprintln!("{tag}: no heteroscedastic fit ({e})"),
            Err(e) => return Err(e),
        }
        write_std_curve_csv(&out.join(format!("{tag}_std_curve.csv")), &std_vs_intensity_from(&group, bins)?)?;
        let fields: Vec<Image> = group.iter().map(|(_, n)| (*n).clone()).collect();
        write_correlation_csv(
            &out.join(format!("{tag}_correlation.csv")),
            &spatial_correlation(&fields, max_distance)?,
        )?;
    }
    write_run_meta::<()>(out, "analyze", 0, &[("manifest", manifest)], None)?;
    println!("analyzed {} pairs into {}", pairs.len(), out.display());
    Ok(())
}
