use std::path::Path;

use petal_core::diffcore::OptimizerConfig;
use petal_core::inversion::{InitKind, NaConfig, RegularizerConfig};
use petal_core::ocean_sim::{GeneratorConfig, GeometryConfig};
use petal_core::surrogate::{ModelVariant, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Stage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Tik,
    Lfm,
    Mlp,
    Petal,
}

impl Method {
    pub const ALL: [Self; 4] = [Self::Tik, Self::Lfm, Self::Mlp, Self::Petal];

    pub fn name(self) -> &'static str {
        match self {
            Self::Tik => "Tik",
            Self::Lfm => "LFM",
            Self::Mlp => "MLP",
            Self::Petal => "PETAL",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(name))
    }
}

/// Which snapshot of each series is linearized.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceSpec {
    /// Snapshot index inside each series; the last training snapshot when unset.
    pub time_index: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PetalSettings {
    /// Latent width; `ceil(0.4 m)` when unset.
    pub latent_dim: Option<usize>,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpSettings {
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TikSettings {
    pub components: usize,
    pub alpha: f64,
    /// Weight residual rows by `1 / σ_y`.
    pub weighted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InversionSettings {
    pub na: NaConfig,
    pub regularizer: RegularizerConfig,
    pub methods: Vec<Method>,
    pub inits: Vec<InitKind>,
    /// PETAL variants inverted from the average initialization.
    pub ablations: Vec<String>,
    /// Keep only the first `k` test snapshots of every series.
    pub max_test_per_series: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub noise_sigma: f64,
    pub geometry: GeometryConfig,
    pub generator: GeneratorConfig,
    pub references: ReferenceSpec,
    pub petal: PetalSettings,
    pub mlp: MlpSettings,
    pub tik: TikSettings,
    pub inversion: InversionSettings,
}

impl Default for PetalSettings {
    fn default() -> Self {
        Self {
            latent_dim: None,
            train: TrainConfig {
                optimizer: OptimizerConfig::adamw(3e-3, 0.01),
                epochs: 30,
                lr_drop_epoch: Some(18),
                ..TrainConfig::petal()
            },
        }
    }
}

impl Default for MlpSettings {
    fn default() -> Self {
        Self {
            hidden: vec![128; 4],
            train: TrainConfig {
                optimizer: OptimizerConfig::adam(1e-3),
                epochs: 100,
                lr_drop_epoch: Some(60),
                ..TrainConfig::mlp()
            },
        }
    }
}

impl Default for TikSettings {
    fn default() -> Self {
        Self {
            components: 4,
            alpha: 1e-2,
            weighted: true,
        }
    }
}

impl Default for InversionSettings {
    fn default() -> Self {
        Self {
            na: NaConfig {
                lr: 20.0,
                ..NaConfig::default()
            },
            regularizer: RegularizerConfig {
                l2: 1e-7,
                sobolev: 0.0,
            },
            methods: Method::ALL.to_vec(),
            inits: InitKind::ALL.to_vec(),
            ablations: ["WAN", "WA-LFM+Dec", "WA-LFM", "A-LFM"]
                .map(String::from)
                .to_vec(),
            max_test_per_series: None,
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            noise_sigma: 0.0,
            geometry: GeometryConfig::default(),
            generator: GeneratorConfig::default(),
            references: ReferenceSpec::default(),
            petal: PetalSettings::default(),
            mlp: MlpSettings::default(),
            tik: TikSettings::default(),
            inversion: InversionSettings::default(),
        }
    }
}

impl ExperimentConfig {
    /// Keys absent from `text` keep the values of [`ExperimentConfig::default`],
    /// at every nesting level.
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let fail = |e: &dyn std::fmt::Display| CliError::new(Stage::Config, e.to_string());
        let given: toml::Table = toml::from_str(text).map_err(|e| fail(&e))?;
        let mut base = toml::Table::try_from(Self::default()).map_err(|e| fail(&e))?;
        overlay(&mut base, given);
        base.try_into().map_err(|e| fail(&e))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string_pretty(self).map_err(|e| CliError::new(Stage::Config, e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::new(Stage::Config, format!("{}: {e}", path.display())))?;
        let cfg = Self::from_toml(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.to_toml()?)
            .map_err(|e| CliError::new(Stage::Config, format!("{}: {e}", path.display())))
    }

    pub fn reference_time(&self) -> usize {
        self.references
            .time_index
            .unwrap_or(self.generator.train_end.saturating_sub(1))
    }

    pub fn ablation_variants(&self) -> Result<Vec<ModelVariant>, CliError> {
        self.inversion
            .ablations
            .iter()
            .map(|name| {
                ModelVariant::from_name(name).map_err(|e| CliError::from_core(Stage::Config, e))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let fail = |e| CliError::from_core(Stage::Config, e);
        self.generator.validate().map_err(fail)?;
        self.petal.train.validate().map_err(fail)?;
        self.mlp.train.validate().map_err(fail)?;
        self.inversion.na.validate().map_err(fail)?;
        self.inversion.regularizer.validate().map_err(fail)?;
        self.ablation_variants()?;
        if self.reference_time() >= self.generator.train_end {
            return Err(CliError::new(
                Stage::Config,
                format!(
                    "reference snapshot {} lies outside the training split (train_end {})",
                    self.reference_time(),
                    self.generator.train_end
                ),
            ));
        }
        if self.tik.alpha < 0.0 || self.noise_sigma < 0.0 {
            return Err(CliError::new(
                Stage::Config,
                "tik.alpha and noise_sigma must be nonnegative",
            ));
        }
        if self.inversion.inits.contains(&InitKind::Tik)
            && !self.inversion.methods.contains(&Method::Tik)
        {
            return Err(CliError::new(
                Stage::Config,
                "the tik initialization needs the Tik method",
            ));
        }
        if self.inversion.inits.contains(&InitKind::Lfm)
            && !self.inversion.methods.contains(&Method::Lfm)
        {
            return Err(CliError::new(
                Stage::Config,
                "the lfm initialization needs the LFM method",
            ));
        }
        Ok(())
    }
}

fn overlay(base: &mut toml::Table, given: toml::Table) {
    for (key, value) in given {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(g)) => overlay(b, g),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}
