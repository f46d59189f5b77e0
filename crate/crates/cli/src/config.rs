use std::path::Path;

use serde::{Deserialize, Serialize};
use trouspi::evaluation::WindowSpec;
use trouspi::model::ModelConfig;
use trouspi::training::TrainConfig;

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    /// Train, validation and test shares; must sum to 1.
    pub fractions: [f64; 3],
    pub seed: u64,
}

/// Everything `train`, `profile` and `ablate` need. Every field is required in the file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub windows: WindowSpec,
    pub split: SplitConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    /// Four streams including ego speed, lr 5e-5.
    Pie,
    /// No speed stream, lr 5e-6.
    Jaad,
    /// Full-size inputs through a narrow network; for smoke tests.
    Small,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let (model, train) = match preset {
            Preset::Pie => (ModelConfig::pie(), TrainConfig::pie()),
            Preset::Jaad => (ModelConfig::jaad(), TrainConfig::jaad()),
            Preset::Small => {
                let model = ModelConfig {
                    blocks_per_branch: 1,
                    feature_maps: 4,
                    hidden: 4,
                    ..ModelConfig::pie()
                };
                (
                    model,
                    TrainConfig {
                        epochs: 2,
                        ..TrainConfig::pie()
                    },
                )
            }
        };
        RunConfig {
            model,
            train,
            windows: WindowSpec::default(),
            split: SplitConfig {
                fractions: [0.7, 0.15, 0.15],
                seed: 0,
            },
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let cfg: RunConfig = read_json(path)?;
        cfg.model.validate()?;
        cfg.train.validate()?;
        cfg.windows.validate()?;
        if cfg.model.frames != cfg.windows.m {
            return Err(CliError::Input(format!(
                "{}: model.frames ({}) must equal windows.m ({})",
                path.display(),
                cfg.model.frames,
                cfg.windows.m
            )));
        }
        Ok(cfg)
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}
