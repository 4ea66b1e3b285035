use std::path::Path;

use camnoise_tensor::{Module, Param};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data_io::ConditionRegistry;
use crate::error::{Error, Result};
use crate::flow::{substream, FlowConfig, FlowLayerSpec, FlowStack};
use crate::gan::{CriticConfig, GeneratorConfig, UNetGenerator, VggCritic};
use crate::train::config::TrainConfig;

pub const MODEL_KIND: &str = "noise_model";

pub(crate) const TAG_FLOW_INIT: u64 = 1;
pub(crate) const TAG_GAN_INIT: u64 = 2;

/// The trainable pieces: flow, and optionally generator and critic.
#[derive(Clone, Debug)]
pub struct NoiseModel {
    pub registry: ConditionRegistry,
    pub flow_config: FlowConfig,
    pub flow: FlowStack,
    pub generator: Option<UNetGenerator>,
    pub critic: Option<VggCritic>,
}

impl NoiseModel {
    /// Fresh weights. Flow and GAN initialisations draw from separate
    /// streams, so enabling the GAN leaves the flow's initial weights alone.
    pub fn new(config: &TrainConfig, registry: &ConditionRegistry) -> Result<Self> {
        let mut flow_rng = substream(config.seed, TAG_FLOW_INIT);
        let flow = FlowStack::new(&config.flow, config.toggles(), registry, &mut flow_rng);
        let (generator, critic) = if config.enable_gan {
            let mut rng = substream(config.seed, TAG_GAN_INIT);
            (
                Some(UNetGenerator::new(&config.generator, &mut rng)?),
                Some(VggCritic::new(&config.critic, &mut rng)?),
            )
        } else {
            (None, None)
        };
        Ok(NoiseModel {
            registry: registry.clone(),
            flow_config: config.flow.clone(),
            flow,
            generator,
            critic,
        })
    }

    pub fn all_params(&self) -> Vec<Param> {
        let mut p = self.flow.params();
        if let Some(g) = &self.generator {
            p.extend(g.params());
        }
        if let Some(c) = &self.critic {
            p.extend(Module::params(c));
        }
        p
    }

    pub(crate) fn header(&self) -> ModelHeader {
        ModelHeader {
            registry: self.registry.clone(),
            flow_config: self.flow_config.clone(),
            flow_layers: self.flow.specs(),
            generator: self.generator.as_ref().map(|g| g.config.clone()),
            critic: self.critic.as_ref().map(|c| c.config.clone()),
        }
    }

    fn from_header(h: &ModelHeader) -> Result<Self> {
        let mut rng = substream(0, 0);
        let flow = FlowStack::from_specs(
            &h.flow_layers,
            &h.flow_config,
            h.registry.num_cameras(),
            h.registry.num_isos(),
            &mut rng,
        );
        let generator = h.generator.as_ref().map(|g| UNetGenerator::new(g, &mut rng)).transpose()?;
        let critic = h.critic.as_ref().map(|c| VggCritic::new(c, &mut rng)).transpose()?;
        Ok(NoiseModel {
            registry: h.registry.clone(),
            flow_config: h.flow_config.clone(),
            flow,
            generator,
            critic,
        })
    }

    /// A checkpoint holding only the model (no training state).
    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = ModelMeta {
            model: self.header(),
            training: None,
        };
        let mut ck = Checkpoint::new(MODEL_KIND, serde_json::to_value(meta).expect("meta serializes"));
        ck.push_params(&self.all_params());
        ck
    }

    /// Rebuilds the architecture recorded in the header and loads weights.
    /// Optimizer tensors, if present, are ignored here.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(MODEL_KIND)?;
        let meta: ModelMeta = ck.meta_as()?;
        let model = Self::from_header(&meta.model)?;
        let params = model.all_params();
        ck.load_params(&params)?;
        for name in ck.names() {
            if !name.starts_with("optim/") && !params.iter().any(|p| p.name() == name) {
                return Err(Error::Checkpoint(format!("checkpoint tensor {name:?} has no place in the model")));
            }
        }
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read(path)?)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub(crate) struct ModelHeader {
    pub registry: ConditionRegistry,
    pub flow_config: FlowConfig,
    pub flow_layers: Vec<FlowLayerSpec>,
    pub generator: Option<GeneratorConfig>,
    pub critic: Option<CriticConfig>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub(crate) struct ModelMeta {
    pub model: ModelHeader,
    pub training: Option<TrainingMeta>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub(crate) struct TrainingMeta {
    pub config: TrainConfig,
    pub state: TrainState,
    pub optim_steps: OptimSteps,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub(crate) struct OptimSteps {
    pub flow: Option<u64>,
    pub generator: Option<u64>,
    pub critic: Option<u64>,
}

/// Independent random streams consumed by training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngStates {
    pub shuffle: ChaCha8Rng,
    pub augment: ChaCha8Rng,
    pub dequantize: ChaCha8Rng,
    pub gan: ChaCha8Rng,
    pub epsilon: ChaCha8Rng,
}

impl RngStates {
    pub fn from_seed(seed: u64) -> Self {
        RngStates {
            shuffle: substream(seed, 10),
            augment: substream(seed, 11),
            dequantize: substream(seed, 12),
            gan: substream(seed, 13),
            epsilon: substream(seed, 14),
        }
    }
}

/// Progress counters, recent losses and RNG states; enough to resume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Index of the next epoch to run.
    pub epoch: usize,
    pub step: u64,
    pub nll_history: Vec<f64>,
    pub adv_history: Vec<f64>,
    pub critic_history: Vec<f64>,
    pub best_val_nll: Option<f64>,
    pub rng: RngStates,
}

pub(crate) const HISTORY_LEN: usize = 100;

impl TrainState {
    pub fn new(seed: u64) -> Self {
        TrainState {
            epoch: 0,
            step: 0,
            nll_history: Vec::new(),
            adv_history: Vec::new(),
            critic_history: Vec::new(),
            best_val_nll: None,
            rng: RngStates::from_seed(seed),
        }
    }

    pub(crate) fn push_history(hist: &mut Vec<f64>, v: f64) {
        if v.is_nan() {
            return;
        }
        hist.push(v);
        if hist.len() > HISTORY_LEN {
            hist.remove(0);
        }
    }
}
