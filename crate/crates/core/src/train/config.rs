use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{FlowConfig, LayerToggles};
use crate::gan::{CriticConfig, GanWeights, GeneratorConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Strategy {
    /// Flow and GAN updated in the same step without exchanging gradients.
    Simultaneous,
    /// Flow trained to completion, then the GAN.
    TwoStage,
    /// Adversarial gradients also reach the flow.
    Joint,
}

/// Every training knob. Unknown keys are rejected when parsing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub strategy: Strategy,
    pub epochs: usize,
    pub lr_initial: f64,
    /// Learning rate halves every this many epochs.
    pub lr_halving_period: usize,
    /// Initial learning rate for generator and critic; defaults to `lr_initial`.
    pub gan_lr_initial: Option<f64>,
    pub batch_size: usize,
    pub lambda: f64,
    pub alpha: f64,
    pub critic_steps: usize,
    pub enable_condlin: bool,
    pub enable_sdl: bool,
    pub enable_sal: bool,
    pub enable_gan: bool,
    pub camera_filter: Option<String>,
    pub seed: u64,
    pub patch_size: usize,
    pub patch_stride: usize,
    pub augment: bool,
    /// Caps the number of optimizer steps in one epoch.
    pub steps_per_epoch: Option<usize>,
    /// Stops the whole run after this many steps.
    pub max_steps: Option<u64>,
    pub validation_fraction: f64,
    pub max_val_patches: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub flow: FlowConfig,
    pub generator: GeneratorConfig,
    pub critic: CriticConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            strategy: Strategy::Simultaneous,
            epochs: 40,
            lr_initial: 1e-4,
            lr_halving_period: 10,
            gan_lr_initial: None,
            batch_size: 16,
            lambda: 0.5,
            alpha: 10.0,
            critic_steps: 1,
            enable_condlin: true,
            enable_sdl: true,
            enable_sal: true,
            enable_gan: true,
            camera_filter: None,
            seed: 0,
            patch_size: 96,
            patch_stride: 48,
            augment: true,
            steps_per_epoch: None,
            max_steps: None,
            validation_fraction: 0.2,
            max_val_patches: 256,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            flow: FlowConfig::default(),
            generator: GeneratorConfig::default(),
            critic: CriticConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_string(),
            line: e.span().map_or(0, |s| text[..s.start].lines().count().max(1) as u64),
            msg: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies `key=value` overrides; dotted keys reach nested tables.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let cfg = apply_overrides(self, overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Configuration(m));
        if !(self.lr_initial > 0.0 && self.lr_initial.is_finite()) {
            return bad(format!("lr_initial must be positive, got {}", self.lr_initial));
        }
        if let Some(g) = self.gan_lr_initial {
            if !(g > 0.0 && g.is_finite()) {
                return bad(format!("gan_lr_initial must be positive, got {g}"));
            }
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.lr_halving_period == 0 {
            return bad("lr_halving_period must be at least 1".into());
        }
        if self.batch_size == 0 || self.critic_steps == 0 {
            return bad("batch_size and critic_steps must be positive".into());
        }
        if self.patch_size == 0 || self.patch_stride == 0 {
            return bad("patch_size and patch_stride must be positive".into());
        }
        if self.patch_size % (1 << self.generator.unet_depth) != 0 && self.enable_gan {
            return bad(format!(
                "patch_size {} must be divisible by 2^unet_depth = {}",
                self.patch_size,
                1 << self.generator.unet_depth
            ));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 1)".into());
        }
        if self.toggles() == (LayerToggles { condlin: false, sdl: false, sal: false }) && !self.enable_gan {
            return bad("at least one flow layer kind or the GAN must be enabled".into());
        }
        if self.flow.num_blocks == 0 && !self.enable_gan {
            return bad("flow.num_blocks must be positive".into());
        }
        if self.lambda < 0.0 || self.alpha < 0.0 {
            return bad("lambda and alpha must be non-negative".into());
        }
        Ok(())
    }

    pub fn toggles(&self) -> LayerToggles {
        LayerToggles {
            condlin: self.enable_condlin,
            sdl: self.enable_sdl,
            sal: self.enable_sal,
        }
    }

    pub fn gan_weights(&self) -> GanWeights {
        GanWeights {
            lambda: self.lambda,
            alpha: self.alpha,
        }
    }

    /// Flow learning rate for an epoch index within its stage.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        lr_schedule(self.lr_initial, self.lr_halving_period, epoch)
    }

    pub fn gan_lr_at(&self, epoch: usize) -> f64 {
        lr_schedule(self.gan_lr_initial.unwrap_or(self.lr_initial), self.lr_halving_period, epoch)
    }

    /// Total epochs the run covers; the two-stage strategy runs both stages
    /// for `epochs` each.
    pub fn total_epochs(&self) -> usize {
        match self.strategy {
            Strategy::TwoStage if self.enable_gan => 2 * self.epochs,
            _ => self.epochs,
        }
    }
}

/// `initial · 0.5^⌊epoch / period⌋`.
pub fn lr_schedule(initial: f64, period: usize, epoch: usize) -> f64 {
    initial * 0.5f64.powi((epoch / period) as i32)
}

/// Round-trips `value` through a TOML table, setting each `key=value`
/// override on the way. Values are parsed as TOML, falling back to a bare
/// string; unknown keys surface as errors if `T` denies them.
pub fn apply_overrides<T, S>(value: &T, overrides: &[S]) -> Result<T>
where
    T: Serialize + for<'de> Deserialize<'de>,
    S: AsRef<str>,
{
    let text = toml::to_string(value).map_err(|e| Error::Configuration(e.to_string()))?;
    let mut table: toml::Table = toml::from_str(&text).expect("serialized TOML parses");
    for o in overrides {
        let o = o.as_ref();
        let (key, raw) = o
            .split_once('=')
            .ok_or_else(|| Error::Configuration(format!("override {o:?} is not key=value")))?;
        set_path(&mut table, key.trim(), parse_value(raw.trim()))?;
    }
    table
        .try_into()
        .map_err(|e: toml::de::Error| Error::Configuration(e.message().to_string()))
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| Error::Configuration(format!("empty key in {key:?}")))?;
    let mut cur = table;
    for p in parts {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Configuration(format!("{p:?} in {key:?} is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_schedule() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        let lrs: Vec<f64> = (0..40).map(|e| c.lr_at(e)).collect();
        assert_eq!(lrs[0], 1e-4);
        assert_eq!(lrs[9], 1e-4);
        assert_eq!(lrs[10], 5e-5);
        assert_eq!(lrs[25], 2.5e-5);
        assert_eq!(lrs[39], 1.25e-5);
    }

    #[test]
    fn overrides_and_unknown_keys() {
        let c = TrainConfig::default()
            .with_overrides(&["epochs=3", "camera_filter=S6", "flow.hidden_width=8", "strategy=\"JOINT\""])
            .unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.camera_filter.as_deref(), Some("S6"));
        assert_eq!(c.flow.hidden_width, 8);
        assert_eq!(c.strategy, Strategy::Joint);
        assert!(matches!(TrainConfig::default().with_overrides(&["nope=1"]), Err(Error::Configuration(_))));
        assert!(matches!(
            TrainConfig::from_toml_str("bogus = 2\n", "c.toml"),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn toml_round_trip() {
        let mut c = TrainConfig::default();
        c.camera_filter = Some("IP".into());
        c.max_steps = Some(100);
        let back = TrainConfig::from_toml_str(&c.to_toml(), "mem").unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(TrainConfig::default().with_overrides(&["lr_initial=0"]).is_err());
        assert!(TrainConfig::default().with_overrides(&["epochs=0"]).is_err());
        assert!(TrainConfig::default()
            .with_overrides(&["enable_condlin=false", "enable_sdl=false", "enable_sal=false", "enable_gan=false"])
            .is_err());
    }
}
