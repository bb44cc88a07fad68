//! Training configuration, named presets and the key-value config format.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aspect::{DebiasConfig, DictTrainConfig};
use crate::encoder::CrossMode;
use crate::error::{Error, Result};
use crate::model::{AspectMask, ModelConfig};
use crate::textgraph::GcnConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Share of the data kept for training when no validation set is given.
    pub train_fraction: f64,
    pub model: ModelConfig,
    pub gcn: GcnConfig,
    pub debias: DebiasConfig,
    pub dict: DictTrainConfig,
    pub lexicon_dir: Option<PathBuf>,
    pub dictionary: Option<PathBuf>,
    pub preset: Option<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            epochs: 50,
            batch_size: 16,
            seed: 42,
            train_fraction: 0.9,
            model: ModelConfig::default(),
            gcn: GcnConfig::default(),
            debias: DebiasConfig::default(),
            dict: DictTrainConfig::default(),
            lexicon_dir: None,
            dictionary: None,
            preset: None,
        }
    }
}

/// Per-dataset learning rate and epoch count.
pub const PRESETS: [(&str, f64, usize); 7] = [
    ("waseem", 4e-4, 6),
    ("hateval", 1e-7, 6),
    ("offeval", 1e-7, 13),
    ("davids", 4e-4, 6),
    ("founta", 1e-5, 8),
    ("fnuc", 1e-6, 13),
    ("stormw", 1e-6, 7),
];

/// Sequence length used with the named presets.
pub const PRESET_MAX_LEN: usize = 64;

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

impl TrainConfig {
    pub fn apply_preset(&mut self, name: &str) -> Result<()> {
        let (_, lr, epochs) = PRESETS
            .iter()
            .find(|(n, _, _)| n.eq_ignore_ascii_case(name))
            .ok_or_else(|| {
                let names: Vec<&str> = PRESETS.iter().map(|p| p.0).collect();
                Error::Config(format!("unknown preset {name:?} (known: {})", names.join(", ")))
            })?;
        self.lr = *lr;
        self.epochs = *epochs;
        self.model.encoder.max_len = PRESET_MAX_LEN;
        self.preset = Some(name.to_ascii_lowercase());
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        match key {
            "preset" => self.apply_preset(value)?,
            "lr" => self.lr = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "train_fraction" => self.train_fraction = parse_num(key, value)?,
            "mode" => m.mode = value.parse()?,
            "graph" => m.use_graph = parse_bool(key, value)?,
            "fusion_repeats" => m.fusion_repeats = parse_num(key, value)?,
            "aspects" => m.aspects = value.parse::<AspectMask>()?,
            "num_encoders" => m.encoder.num_encoders = parse_num(key, value)?,
            "num_heads" => m.encoder.num_heads = parse_num(key, value)?,
            "hidden_dim" => m.encoder.hidden_dim = parse_num(key, value)?,
            "d_model" => m.encoder.d_model = parse_num(key, value)?,
            "dropout" => m.encoder.dropout = parse_num(key, value)?,
            "max_len" => m.encoder.max_len = parse_num(key, value)?,
            "mlp_hidden1" => m.mlp_hidden.0 = parse_num(key, value)?,
            "mlp_hidden2" => m.mlp_hidden.1 = parse_num(key, value)?,
            "dim_directed" => m.dims.directed = parse_num(key, value)?,
            "dim_generalised" => m.dims.generalised = parse_num(key, value)?,
            "dim_explicit" => {
                m.dims.explicit = parse_num(key, value)?;
                self.dict.dim = m.dims.explicit;
            }
            "dim_implicit" => m.dims.implicit = parse_num(key, value)?,
            "d_lbg" => {
                m.dims.behaviour = parse_num(key, value)?;
                self.gcn.hidden = m.dims.behaviour;
            }
            "gcn_epochs" => self.gcn.epochs = parse_num(key, value)?,
            "gcn_lr" => self.gcn.lr = parse_num(key, value)?,
            "gcn_window" => self.gcn.window = parse_num(key, value)?,
            "gcn_min_count" => self.gcn.min_count = parse_num(key, value)?,
            "debias_steps" => self.debias.steps = parse_num(key, value)?,
            "debias_lr" => self.debias.lr = parse_num(key, value)?,
            "dict_steps" => self.dict.steps = parse_num(key, value)?,
            "dict_lr" => self.dict.lr = parse_num(key, value)?,
            "lexicons" => self.lexicon_dir = Some(PathBuf::from(value)),
            "dictionary" => self.dictionary = Some(PathBuf::from(value)),
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a `key = value` file on top of `self`. Blank lines and lines
    /// starting with `#` are skipped; settings apply in file order.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                msg,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            self.set(k.trim(), v.trim()).map_err(|e| err(e.to_string()))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = TrainConfig::default();
        cfg.apply_text(&text, path)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(0.0 < self.train_fraction && self.train_fraction < 1.0) {
            return Err(Error::Config(format!("train fraction {} outside (0, 1)", self.train_fraction)));
        }
        if self.model.use_graph && self.gcn.hidden != self.model.dims.behaviour {
            return Err(Error::Config(format!(
                "GCN width {} differs from the behaviour embedding width {}",
                self.gcn.hidden, self.model.dims.behaviour
            )));
        }
        if self.model.aspects.explicit && self.dict.dim != self.model.dims.explicit {
            return Err(Error::Config(format!(
                "dictionary embedding width {} differs from the explicit width {}",
                self.dict.dim, self.model.dims.explicit
            )));
        }
        Ok(())
    }

    /// One-line `key=value` summary of the settings that define a run.
    pub fn echo(&self) -> String {
        let m = &self.model;
        format!(
            "lr={} epochs={} batch_size={} seed={} mode={} graph={} fusion_repeats={} aspects={} d_model={} heads={} hidden_dim={} encoders={} dropout={} max_len={} d_lbg={}{}",
            self.lr,
            self.epochs,
            self.batch_size,
            self.seed,
            m.mode,
            m.use_graph,
            m.fusion_repeats,
            m.aspects,
            m.encoder.d_model,
            m.encoder.num_heads,
            m.encoder.hidden_dim,
            m.encoder.num_encoders,
            m.encoder.dropout,
            m.encoder.max_len,
            m.dims.behaviour,
            self.preset.as_ref().map(|p| format!(" preset={p}")).unwrap_or_default(),
        )
    }

    pub fn with_mode(mut self, mode: CrossMode) -> Self {
        self.model.mode = mode;
        self
    }
}
