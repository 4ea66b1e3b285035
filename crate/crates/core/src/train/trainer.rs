use std::collections::BTreeSet;
use std::fs::{self, File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use camnoise_tensor::{backward_for, no_grad, Adam, AdamConfig, AdamState, Module, Param, Tensor};
use rand::seq::SliceRandom;

use crate::checkpoint::Checkpoint;
use crate::data_io::{augment, extract_patches, load_pair, CameraCondition, ConditionRegistry, DatasetManifest, ImagePair};
use crate::error::{Error, Result};
use crate::flow::{dequantize, substream};
use crate::gan::{adversarial_loss, critic_loss};
use crate::image::Image;
use crate::train::config::{Strategy, TrainConfig};
use crate::train::model::{ModelMeta, NoiseModel, OptimSteps, TrainState, TrainingMeta, MODEL_KIND};

pub const LOG_NAME: &str = "train.log";
pub const BEST_NAME: &str = "ckpt_best.bin";
const TAG_SPLIT: u64 = 20;
const TAG_VALIDATION: u64 = 21;

pub fn epoch_checkpoint_name(epoch: usize) -> String {
    format!("ckpt_epoch{epoch}.bin")
}

/// Losses of one optimizer step; `NaN` marks a term that was not computed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub nll: f64,
    pub wgan: f64,
    pub gp: f64,
    pub adv: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub val_nll: f64,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best_checkpoint: Option<PathBuf>,
    pub last_checkpoint: Option<PathBuf>,
    pub epochs: Vec<EpochSummary>,
}

/// One training minibatch: clean images, integer-valued noise and the
/// conditions, all on the 0–255 scale.
#[derive(Clone, Debug)]
pub struct Batch {
    pub clean: Tensor,
    pub noise: Tensor,
    pub conditions: Vec<CameraCondition>,
}

impl Batch {
    pub fn from_pairs(pairs: &[ImagePair]) -> Result<Batch> {
        let noises = pairs.iter().map(ImagePair::require_noise).collect::<Result<Vec<Image>>>()?;
        Ok(Batch {
            clean: Image::batch(&pairs.iter().map(|p| &p.clean).collect::<Vec<_>>()),
            noise: Image::batch(&noises.iter().collect::<Vec<_>>()),
            conditions: pairs.iter().map(|p| p.condition).collect(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Both,
    FlowOnly,
    GanOnly,
}

struct Optimizers {
    flow: Option<Adam>,
    generator: Option<Adam>,
    critic: Option<Adam>,
}

/// Splits scene ids 80/20 (by default) with a seeded shuffle.
pub fn split_scenes(scenes: &BTreeSet<String>, val_fraction: f64, seed: u64) -> (BTreeSet<String>, BTreeSet<String>) {
    let mut ids: Vec<&String> = scenes.iter().collect();
    ids.shuffle(&mut substream(seed, TAG_SPLIT));
    let n_val = if ids.len() >= 2 {
        ((ids.len() as f64 * val_fraction).round() as usize).clamp(usize::from(val_fraction > 0.0), ids.len() - 1)
    } else {
        0
    };
    let val = ids[..n_val].iter().map(|s| s.to_string()).collect();
    let train = ids[n_val..].iter().map(|s| s.to_string()).collect();
    (train, val)
}

/// Drives training for all three strategies.
pub struct Trainer {
    pub config: TrainConfig,
    pub model: NoiseModel,
    pub state: TrainState,
    opt: Optimizers,
    train_patches: Vec<ImagePair>,
    val_patches: Vec<ImagePair>,
    run_dir: Option<PathBuf>,
    records: Vec<StepRecord>,
}

impl Trainer {
    /// Loads, filters, splits and patches a manifest, then initialises.
    pub fn new(config: TrainConfig, manifest: &DatasetManifest, run_dir: Option<&Path>) -> Result<Self> {
        let pairs = load_training_pairs(&config, manifest)?;
        Self::from_pairs(config, &manifest.registry, pairs, run_dir)
    }

    /// Initialises from in-memory pairs (already filtered).
    pub fn from_pairs(
        config: TrainConfig,
        registry: &ConditionRegistry,
        pairs: Vec<ImagePair>,
        run_dir: Option<&Path>,
    ) -> Result<Self> {
        config.validate()?;
        let model = NoiseModel::new(&config, registry)?;
        let state = TrainState::new(config.seed);
        let mut t = Self::assemble(config, model, state, pairs, run_dir)?;
        t.write_log_header()?;
        Ok(t)
    }

    /// Continues a run from a checkpoint written by [`Trainer::save`].
    pub fn resume(checkpoint: &Path, manifest: &DatasetManifest, run_dir: Option<&Path>) -> Result<Self> {
        let ck = Checkpoint::read(checkpoint)?;
        ck.expect_kind(MODEL_KIND)?;
        let meta: ModelMeta = ck.meta_as()?;
        let training = meta
            .training
            .ok_or_else(|| Error::Checkpoint("checkpoint carries no training state".into()))?;
        let pairs = load_training_pairs(&training.config, manifest)?;
        Self::resume_from(&ck, pairs, run_dir)
    }

    pub fn resume_from(ck: &Checkpoint, pairs: Vec<ImagePair>, run_dir: Option<&Path>) -> Result<Self> {
        let meta: ModelMeta = ck.meta_as()?;
        let training = meta
            .training
            .ok_or_else(|| Error::Checkpoint("checkpoint carries no training state".into()))?;
        let model = NoiseModel::from_checkpoint(ck)?;
        let mut t = Self::assemble(training.config, model, training.state, pairs, run_dir)?;
        restore_optimizer(ck, "flow", &mut t.opt.flow, &t.model.flow.params(), training.optim_steps.flow)?;
        if let Some(g) = &t.model.generator {
            restore_optimizer(ck, "generator", &mut t.opt.generator, &g.params(), training.optim_steps.generator)?;
        }
        if let Some(c) = &t.model.critic {
            restore_optimizer(ck, "critic", &mut t.opt.critic, &Module::params(c), training.optim_steps.critic)?;
        }
        Ok(t)
    }

    fn assemble(
        config: TrainConfig,
        model: NoiseModel,
        state: TrainState,
        pairs: Vec<ImagePair>,
        run_dir: Option<&Path>,
    ) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::validation("no training pairs after filtering"));
        }
        for p in &pairs {
            p.require_noise()?;
            model.registry.check(p.condition)?;
        }
        let scenes: BTreeSet<String> = pairs.iter().map(|p| p.scene_id.clone()).collect();
        let (train_scenes, _) = split_scenes(&scenes, config.validation_fraction, config.seed);
        let mut train_patches = Vec::new();
        let mut val_patches = Vec::new();
        for p in &pairs {
            let patches = extract_patches(p, config.patch_size, config.patch_stride)?;
            if train_scenes.contains(&p.scene_id) {
                train_patches.extend(patches);
            } else {
                val_patches.extend(patches);
            }
        }
        if val_patches.is_empty() {
            val_patches = train_patches.clone();
        }
        val_patches.truncate(config.max_val_patches.max(1));
        let adam = |lr: f64, params: &[Param]| {
            Adam::new(
                AdamConfig {
                    lr,
                    beta1: config.adam_beta1,
                    beta2: config.adam_beta2,
                    eps: config.adam_eps,
                },
                params,
            )
        };
        let flow_params = model.flow.params();
        let opt = Optimizers {
            flow: (!flow_params.is_empty()).then(|| adam(config.lr_initial, &flow_params)),
            generator: model.generator.as_ref().map(|g| adam(config.gan_lr_at(0), &g.params())),
            critic: model.critic.as_ref().map(|c| adam(config.gan_lr_at(0), &Module::params(c))),
        };
        if let Some(d) = run_dir {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        Ok(Trainer {
            config,
            model,
            state,
            opt,
            train_patches,
            val_patches,
            run_dir: run_dir.map(Path::to_path_buf),
            records: Vec::new(),
        })
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn num_train_patches(&self) -> usize {
        self.train_patches.len()
    }

    pub fn num_val_patches(&self) -> usize {
        self.val_patches.len()
    }

    pub fn train_patches(&self) -> &[ImagePair] {
        &self.train_patches
    }

    pub fn is_finished(&self) -> bool {
        self.state.epoch >= self.config.total_epochs() || self.step_budget_spent()
    }

    fn step_budget_spent(&self) -> bool {
        self.config.max_steps.is_some_and(|m| self.state.step >= m)
    }

    fn phase_for(&self, epoch: usize) -> (Phase, usize) {
        let gan = self.model.generator.is_some();
        match self.config.strategy {
            Strategy::TwoStage if gan => {
                if epoch < self.config.epochs {
                    (Phase::FlowOnly, epoch)
                } else {
                    (Phase::GanOnly, epoch - self.config.epochs)
                }
            }
            _ if gan => (Phase::Both, epoch),
            _ => (Phase::FlowOnly, epoch),
        }
    }

    /// Runs until all epochs (or the step budget) are done.
    pub fn run(&mut self) -> Result<TrainOutcome> {
        self.run_epochs(usize::MAX)
    }

    pub fn run_epochs(&mut self, max_epochs: usize) -> Result<TrainOutcome> {
        let mut epochs = Vec::new();
        let mut done = 0;
        while !self.is_finished() && done < max_epochs {
            epochs.push(self.run_epoch()?);
            done += 1;
        }
        let last_checkpoint = epochs.last().and_then(|e| e.checkpoint.clone());
        Ok(TrainOutcome {
            best_checkpoint: self.run_dir.as_ref().map(|d| d.join(BEST_NAME)).filter(|p| p.exists()),
            last_checkpoint,
            epochs,
        })
    }

    /// One pass over (a shuffled prefix of) the training patches, then
    /// validation and checkpointing.
    pub fn run_epoch(&mut self) -> Result<EpochSummary> {
        let epoch = self.state.epoch;
        let (phase, local_epoch) = self.phase_for(epoch);
        let lr = self.config.lr_at(local_epoch);
        let gan_lr = self.config.gan_lr_at(local_epoch);
        if let Some(o) = &mut self.opt.flow {
            o.set_lr(lr);
        }
        for o in [&mut self.opt.generator, &mut self.opt.critic].into_iter().flatten() {
            o.set_lr(gan_lr);
        }
        let b = self.config.batch_size;
        let n = self.train_patches.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.state.rng.shuffle);
        let mut steps = (n / b).max(1);
        if let Some(cap) = self.config.steps_per_epoch {
            steps = steps.min(cap.max(1));
        }
        for k in 0..steps {
            if self.step_budget_spent() {
                break;
            }
            let mut picked = Vec::with_capacity(b);
            for j in 0..b {
                let p = &self.train_patches[order[(k * b + j) % n]];
                picked.push(if self.config.augment {
                    augment(p, &mut self.state.rng.augment)?
                } else {
                    p.clone()
                });
            }
            let batch = Batch::from_pairs(&picked)?;
            let rec = self.step_phase(&batch, phase, if phase == Phase::GanOnly { gan_lr } else { lr })?;
            self.log_step(&rec)?;
        }
        let val_nll = self.validation_nll(epoch)?;
        self.state.epoch += 1;
        let improved = self.state.best_val_nll.is_none_or(|b| val_nll < b);
        if improved {
            self.state.best_val_nll = Some(val_nll);
        }
        let checkpoint = match &self.run_dir {
            Some(dir) => {
                let ck = self.to_checkpoint();
                let path = dir.join(epoch_checkpoint_name(epoch));
                ck.write(&path)?;
                if improved {
                    ck.write(&dir.join(BEST_NAME))?;
                }
                self.append_log(&format!("# epoch\t{epoch}\tval_nll\t{val_nll}\n"))?;
                Some(path)
            }
            None => None,
        };
        Ok(EpochSummary {
            epoch,
            val_nll,
            checkpoint,
        })
    }

    /// One optimizer step with the strategy's update order.
    pub fn step(&mut self, batch: &Batch) -> Result<StepRecord> {
        let (phase, local_epoch) = self.phase_for(self.state.epoch);
        let lr = if phase == Phase::GanOnly {
            self.config.gan_lr_at(local_epoch)
        } else {
            self.config.lr_at(local_epoch)
        };
        self.step_phase(batch, phase, lr)
    }

    fn step_phase(&mut self, batch: &Batch, phase: Phase, lr: f64) -> Result<StepRecord> {
        let step = self.state.step;
        let diverged = |msg: String| Error::Diverged { step, msg };
        let joint = self.config.strategy == Strategy::Joint && phase == Phase::Both;
        let mut rec = StepRecord {
            step,
            nll: f64::NAN,
            wgan: f64::NAN,
            gp: f64::NAN,
            adv: f64::NAN,
            lr,
        };
        let flow_params = self.model.flow.params();

        // (1) Flow NLL on dequantized noise.
        let mut nll_graph = None;
        if phase != Phase::GanOnly {
            let deq = dequantize(&batch.noise, &mut self.state.rng.dequantize);
            let ctx = self.model.flow.context(&batch.clean, &batch.conditions)?;
            let nll = self.model.flow.nll(&deq, &ctx).map_err(|e| diverged(e.to_string()))?;
            rec.nll = nll.item();
            if joint {
                nll_graph = Some(nll);
            } else if let Some(opt) = &mut self.opt.flow {
                opt.step(&flow_params, &backward_for(&nll, &values(&flow_params)));
            }
        }

        if phase != Phase::FlowOnly {
            let (gen, critic) = match (&self.model.generator, &self.model.critic) {
                (Some(g), Some(c)) => (g, c),
                _ => return Err(Error::Configuration("GAN phase without generator and critic".into())),
            };
            // n' from the flow as it stands after this step's update.
            let n_prime = if joint {
                self.model.flow.sample(&batch.clean, &batch.conditions, &mut self.state.rng.gan)?
            } else {
                no_grad(|| self.model.flow.sample(&batch.clean, &batch.conditions, &mut self.state.rng.gan))?
            };
            // (2) Critic.
            let critic_params = Module::params(critic);
            for _ in 0..self.config.critic_steps {
                let real = dequantize(&batch.noise, &mut self.state.rng.gan);
                let (loss, terms) = critic_loss(
                    critic,
                    gen,
                    &batch.clean,
                    &real,
                    &n_prime.detach(),
                    self.config.gan_weights(),
                    &mut self.state.rng.epsilon,
                )
                .map_err(|e| diverged(e.to_string()))?;
                rec.wgan = terms.wgan;
                rec.gp = terms.gp;
                if let Some(opt) = &mut self.opt.critic {
                    opt.step(&critic_params, &backward_for(&loss, &values(&critic_params)));
                }
            }
            // (3) Generator.
            let gen_params = gen.params();
            let fed = if joint { n_prime.clone() } else { n_prime.detach() };
            let adv = adversarial_loss(critic, gen, &batch.clean, &fed, self.config.lambda)
                .map_err(|e| diverged(e.to_string()))?;
            rec.adv = adv.item();
            if let Some(nll) = nll_graph.take() {
                let total = nll.add(&adv);
                let mut targets = flow_params.clone();
                targets.extend(gen_params.iter().cloned());
                let targets_t: Vec<Tensor> = targets.iter().map(Param::get).collect();
                let grads = backward_for(&total, &targets_t);
                if let Some(opt) = &mut self.opt.flow {
                    opt.step(&flow_params, &grads);
                }
                if let Some(opt) = &mut self.opt.generator {
                    opt.step(&gen_params, &grads);
                }
            } else if let Some(opt) = &mut self.opt.generator {
                let targets: Vec<Tensor> = gen_params.iter().map(Param::get).collect();
                opt.step(&gen_params, &backward_for(&adv, &targets));
            }
        }
        if let Some(nll) = nll_graph.take() {
            if let Some(opt) = &mut self.opt.flow {
                let t: Vec<Tensor> = flow_params.iter().map(Param::get).collect();
                opt.step(&flow_params, &backward_for(&nll, &t));
            }
        }

        for v in [rec.nll, rec.wgan, rec.gp, rec.adv] {
            if v.is_infinite() {
                return Err(diverged("infinite loss".into()));
            }
        }
        TrainState::push_history(&mut self.state.nll_history, rec.nll);
        TrainState::push_history(&mut self.state.adv_history, rec.adv);
        let critic_total = self.config.lambda * (rec.wgan + self.config.alpha * rec.gp);
        TrainState::push_history(&mut self.state.critic_history, critic_total);
        self.state.step += 1;
        self.records.push(rec);
        Ok(rec)
    }

    /// Mean per-sample NLL on the validation patches, with dequantization
    /// noise drawn from a stream fixed per epoch.
    pub fn validation_nll(&self, epoch: usize) -> Result<f64> {
        let mut rng = substream(self.config.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15), TAG_VALIDATION);
        let b = self.config.batch_size;
        let mut total = 0.0;
        for chunk in self.val_patches.chunks(b) {
            let batch = Batch::from_pairs(chunk)?;
            let v = no_grad(|| -> Result<f64> {
                let deq = dequantize(&batch.noise, &mut rng);
                let ctx = self.model.flow.context(&batch.clean, &batch.conditions)?;
                Ok(self.model.flow.nll_per_sample(&deq, &ctx)?.data().iter().sum())
            })?;
            total += v;
        }
        let v = total / self.val_patches.len() as f64;
        if !v.is_finite() {
            return Err(Error::Diverged {
                step: self.state.step,
                msg: "non-finite validation NLL".into(),
            });
        }
        Ok(v)
    }

    /// Full training checkpoint: weights, optimizer moments, config, state.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let steps = |o: &Option<Adam>| o.as_ref().map(|a| a.state().step);
        let meta = ModelMeta {
            model: self.model.header(),
            training: Some(TrainingMeta {
                config: self.config.clone(),
                state: self.state.clone(),
                optim_steps: OptimSteps {
                    flow: steps(&self.opt.flow),
                    generator: steps(&self.opt.generator),
                    critic: steps(&self.opt.critic),
                },
            }),
        };
        let mut ck = Checkpoint::new(MODEL_KIND, serde_json::to_value(meta).expect("meta serializes"));
        ck.push_params(&self.model.all_params());
        push_optimizer(&mut ck, "flow", &self.opt.flow, &self.model.flow.params());
        if let Some(g) = &self.model.generator {
            push_optimizer(&mut ck, "generator", &self.opt.generator, &g.params());
        }
        if let Some(c) = &self.model.critic {
            push_optimizer(&mut ck, "critic", &self.opt.critic, &Module::params(c));
        }
        ck
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().write(path)
    }

    fn write_log_header(&mut self) -> Result<()> {
        if let Some(dir) = &self.run_dir {
            let path = dir.join(LOG_NAME);
            let mut f = File::create(&path).map_err(|e| Error::io(&path, e))?;
            f.write_all(b"step\tnll\twgan\tgp\tadv\tlr\n").map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    fn append_log(&self, line: &str) -> Result<()> {
        if let Some(dir) = &self.run_dir {
            let path = dir.join(LOG_NAME);
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            f.write_all(line.as_bytes()).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    fn log_step(&self, r: &StepRecord) -> Result<()> {
        self.append_log(&format!("{}\t{}\t{}\t{}\t{}\t{}\n", r.step, r.nll, r.wgan, r.gp, r.adv, r.lr))
    }
}

fn values(params: &[Param]) -> Vec<Tensor> {
    params.iter().map(Param::get).collect()
}

fn push_optimizer(ck: &mut Checkpoint, tag: &str, opt: &Option<Adam>, params: &[Param]) {
    if let Some(o) = opt {
        let st = o.state();
        for (i, p) in params.iter().enumerate() {
            ck.push(format!("optim/{tag}/{}.m", p.name()), &p.shape(), st.first[i].clone());
            ck.push(format!("optim/{tag}/{}.v", p.name()), &p.shape(), st.second[i].clone());
        }
    }
}

fn restore_optimizer(ck: &Checkpoint, tag: &str, opt: &mut Option<Adam>, params: &[Param], step: Option<u64>) -> Result<()> {
    let Some(o) = opt else { return Ok(()) };
    let step = step.ok_or_else(|| Error::Checkpoint(format!("missing {tag} optimizer step")))?;
    let mut first = Vec::with_capacity(params.len());
    let mut second = Vec::with_capacity(params.len());
    for p in params {
        first.push(ck.take(&format!("optim/{tag}/{}.m", p.name()), &p.shape())?.to_vec());
        second.push(ck.take(&format!("optim/{tag}/{}.v", p.name()), &p.shape())?.to_vec());
    }
    o.restore(AdamState { step, first, second });
    Ok(())
}

/// Loads the manifest rows used for training, applying the camera filter.
pub fn load_training_pairs(config: &TrainConfig, manifest: &DatasetManifest) -> Result<Vec<ImagePair>> {
    let filtered = match &config.camera_filter {
        Some(cam) => manifest.filter_camera(cam),
        None => manifest.clone(),
    };
    if filtered.is_empty() {
        return Err(Error::validation(match &config.camera_filter {
            Some(c) => format!("no manifest rows for camera {c:?}"),
            None => "manifest is empty".to_string(),
        }));
    }
    let mut out = Vec::with_capacity(filtered.len());
    for e in &filtered.entries {
        if e.noisy_path.is_none() {
            return Err(Error::validation(format!(
                "training needs noisy images; row for {} has none",
                e.clean_path.display()
            )));
        }
        out.push(load_pair(&filtered, e)?);
    }
    Ok(out)
}

/// Convenience: trains from a manifest into `run_dir` and returns the best
/// checkpoint path.
pub fn train(config: TrainConfig, manifest: &DatasetManifest, run_dir: &Path) -> Result<PathBuf> {
    let mut t = Trainer::new(config, manifest, Some(run_dir))?;
    let out = t.run()?;
    out.best_checkpoint
        .or(out.last_checkpoint)
        .ok_or_else(|| Error::validation("training produced no checkpoint"))
}
