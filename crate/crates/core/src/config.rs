//! Run configuration, read from TOML.
//!
//! Every section is optional and falls back to the desk-scale defaults;
//! unknown keys anywhere are rejected. Example:
//!
//! ```toml
//! seed = 7
//!
//! [model]
//! image_h = 32
//! image_w = 32
//! channels = 3
//! patch_size = 4
//! d = 64
//! d_ff = 256
//! blocks = 4
//! k = 9
//! topology = "dynamic"        # or "frozen_after_first"
//!
//! [prompt]
//! m = 8
//! r = 32
//! alpha = 0.2
//! beta = 0.2
//! # r_hidden = 32             # default max(r, d/4)
//!
//! [train]
//! lr = 0.001
//! weight_decay = 0.05
//! epochs = 20
//! batch_size = 8
//! # grad_clip = 1.0
//!
//! [data]
//! n_train = 64
//! n_val = 64
//! min_cycles = 1.0
//! max_cycles = 6.0
//! noise = 1.0
//!
//! [paths]
//! data_dir = "data"
//! checkpoint_dir = "checkpoints"
//! report_dir = "reports"
//! ```

use crate::error::{Error, Result};
use crate::grapher::ModelConfig;
use crate::prompts::PromptConfig;
use crate::trainer::{SyntheticSpec, TrainConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Synthetic data settings; image size comes from the model section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub min_cycles: f64,
    pub max_cycles: f64,
    pub noise: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        let s = SyntheticSpec::default();
        Self {
            n_train: s.n_train,
            n_val: s.n_val,
            min_cycles: s.min_cycles,
            max_cycles: s.max_cycles,
            noise: s.noise,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub data_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub report_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            data_dir: "data".into(),
            checkpoint_dir: "checkpoints".into(),
            report_dir: "reports".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub prompt: PromptConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub paths: PathsConfig,
}

/// Two classes throughout.
pub const CLASSES: usize = 2;

impl RunConfig {
    /// Parses and validates.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let field = e.span().map_or_else(|| "config".to_string(), |s| format!("config bytes {}..{}", s.start, s.end));
            Error::config(field, e.message().to_string())
        })?;
        cfg.validated()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plain data")
    }

    /// Copies the run seed into the train section and checks every field.
    pub fn validated(mut self) -> Result<Self> {
        self.train.seed = self.seed;
        self.model.validate()?;
        self.prompt.validate(self.model.d)?;
        self.train.validate()?;
        let d = &self.data;
        if d.n_train == 0 {
            return Err(Error::config("data.n_train", "must be >= 1"));
        }
        if !(d.noise >= 0.0 && d.noise.is_finite()) {
            return Err(Error::config("data.noise", format!("must be >= 0, got {}", d.noise)));
        }
        if !(d.min_cycles > 0.0 && d.min_cycles <= d.max_cycles && d.max_cycles.is_finite()) {
            return Err(Error::config(
                "data.min_cycles",
                format!("need 0 < min_cycles <= max_cycles, got {} and {}", d.min_cycles, d.max_cycles),
            ));
        }
        Ok(self)
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            image_h: self.model.image_h,
            image_w: self.model.image_w,
            channels: self.model.channels,
            n_train: self.data.n_train,
            n_val: self.data.n_val,
            min_cycles: self.data.min_cycles,
            max_cycles: self.data.max_cycles,
            noise: self.data.noise,
        }
    }
}
