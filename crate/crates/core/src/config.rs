//! Run configuration.
//!
//! A run is described by a TOML document whose keys may be written as dotted paths, one per
//! line, e.g.
//!
//! ```toml
//! seed = 7
//! output_dir = "runs/denoise"
//! model.stream_channels = [8, 12, 16]
//! train.lr_init = 2e-4
//! train.patch_schedule = [[0.0, 32], [0.5, 48]]
//! data.task = "denoise"
//! data.synth = { kind = "gaussian_noise", sigma = 25.0 }
//! ```
//!
//! Every section is optional and falls back to its defaults. Unknown keys and ill-typed values
//! are errors that name the offending key.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::blocks::ModelConfig;
use crate::data::DatasetSpec;
use crate::error::{io_err, Error, Result};
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DatasetSpec,
    pub output_dir: PathBuf,
    /// Weight initialisation seed.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: DatasetSpec::default(),
            output_dir: PathBuf::from("run"),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::Config {
            key: "<syntax>".into(),
            msg: e.to_string().trim().to_string(),
        })?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            let msg = e.into_inner().message().to_string();
            let key = match msg.split('`').nth(1) {
                Some(field) if key == "." && msg.starts_with("unknown field") => field.to_string(),
                _ => key,
            };
            Error::Config { key, msg }
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serialises")
    }

    /// Use one seed for initialisation, batch sampling and data synthesis.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
        self.data.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate(self.model.scale_factor())?;
        self.data.validate()?;
        if let Some(root) = &self.data.root {
            if !root.join("clean").is_dir() {
                return Err(Error::Config {
                    key: "data.root".into(),
                    msg: format!("{} has no clean/ directory", root.display()),
                });
            }
        }
        let want = self.data.task.in_channels();
        if self.model.in_channels != want {
            return Err(Error::Config {
                key: "model.in_channels".into(),
                msg: format!("task {:?} provides {want} input channels, model expects {}", self.data.task, self.model.in_channels),
            });
        }
        Ok(())
    }
}
