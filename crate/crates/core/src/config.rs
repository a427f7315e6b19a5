//! Run configuration: a TOML file merged over defaults, then command-line
//! overrides merged over the file.
//!
//! ```toml
//! data_dir = "data"
//! checkpoint = "model.ckpt"
//!
//! [model]
//! steps = 3
//! dim = 64
//!
//! [train]
//! epochs = 20
//! batch_size = 32
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphForm;
use crate::reasoner::ModelConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset directory written by `gen` (kb.tsv, corpus.jsonl, k-hop splits).
    pub data_dir: PathBuf,
    /// Prebuilt graph file; built from `data_dir` when absent.
    pub graph: Option<PathBuf>,
    pub checkpoint: PathBuf,
    /// JSON-lines training log.
    pub log: Option<PathBuf>,
    /// Fraction of label triples added to a mixed graph.
    pub mixed_fraction: f64,
    pub mixed_seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_dir: PathBuf::from("data"),
            graph: None,
            checkpoint: PathBuf::from("model.ckpt"),
            log: None,
            mixed_fraction: 0.5,
            mixed_seed: 1,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

/// Values given on the command line. `None` leaves the file or default value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub data_dir: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub form: Option<GraphForm>,
    pub steps: Option<usize>,
    pub dim: Option<usize>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub seed: Option<u64>,
    pub limit_train: Option<f64>,
    pub no_truncation: bool,
    pub no_mask: bool,
    pub no_aux: bool,
}

impl RunConfig {
    pub fn from_toml(raw: &str) -> Result<Self> {
        toml::from_str(raw).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&raw)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration serializes")
    }

    /// Defaults, then `file` when given, then `overrides`.
    pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match file {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        fn set<T: Clone>(slot: &mut T, v: &Option<T>) {
            if let Some(v) = v {
                *slot = v.clone();
            }
        }
        set(&mut self.data_dir, &o.data_dir);
        set(&mut self.checkpoint, &o.checkpoint);
        if o.graph.is_some() {
            self.graph = o.graph.clone();
        }
        if o.log.is_some() {
            self.log = o.log.clone();
        }
        set(&mut self.model.form, &o.form);
        set(&mut self.model.steps, &o.steps);
        set(&mut self.model.dim, &o.dim);
        set(&mut self.train.epochs, &o.epochs);
        set(&mut self.train.learning_rate, &o.learning_rate);
        set(&mut self.train.seed, &o.seed);
        if o.batch_size.is_some() {
            self.train.batch_size = o.batch_size;
        }
        if o.limit_train.is_some() {
            self.train.limit_train = o.limit_train;
        }
        if o.no_truncation {
            self.model.use_truncation = false;
        }
        if o.no_mask {
            self.model.use_mask = false;
        }
        if o.no_aux {
            self.train.use_aux_hop_loss = false;
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.model.steps == 0 {
            return bad("model.steps must be at least 1".into());
        }
        if self.model.dim == 0 {
            return bad("model.dim must be at least 1".into());
        }
        if !(self.train.learning_rate > 0.0 && self.train.learning_rate.is_finite()) {
            return bad(format!("train.learning_rate must be positive, got {}", self.train.learning_rate));
        }
        if let Some(f) = self.train.limit_train {
            if !(f > 0.0 && f <= 1.0) {
                return bad(format!("train.limit_train must be in (0, 1], got {f}"));
            }
        }
        if self.train.batch_size == Some(0) {
            return bad("train.batch_size must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.mixed_fraction) {
            return bad(format!("mixed_fraction must be in [0, 1], got {}", self.mixed_fraction));
        }
        Ok(())
    }
}
