//! Run configuration read from flat `key = value` files.
//!
//! Lines starting with `#` and blank lines are ignored. Lists are comma
//! separated. Every key and its default:
//!
//! | key | default |
//! |-----|---------|
//! | `train_file`, `dev_file`, `test_file`, `pretrained` | unset |
//! | `checkpoint` | `<out_dir>/model.ckpt` |
//! | `out_dir` | `out` |
//! | `hidden` | 100 |
//! | `embed_dim` | 300 |
//! | `channels` | 3 |
//! | `mode` | `combined` (`scalar`, `vectorial`) |
//! | `filter_widths` | `3,4,5` |
//! | `filter_maps` | 100 |
//! | `classes` | 2 |
//! | `dropout_embedding`, `dropout_cnn_input`, `dropout_penultimate` | 0.5 |
//! | `l2` | 0.0005 |
//! | `keep_probs` | 0.8 (a list of equal values is resized to `channels`) |
//! | `max_len` | 0 (longest training sentence) |
//! | `attention_hidden` | 0 (`2 × hidden`) |
//! | `sum_axis` (alias `attention.sum_axis`) | `column` (`row`) |
//! | `seed` | 1 |
//! | `min_freq` | 1 |
//! | `lr`, `beta1`, `beta2`, `adam_eps` | 0.001, 0.9, 0.999, 1e-8 |
//! | `batch_size` | 50 |
//! | `epochs` | 25 |
//! | `gradcheck_eps`, `gradcheck_tolerance` | 1e-5, 1e-4 |

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::gradcheck::{DEFAULT_EPS, DEFAULT_TOL};
use crate::model::ModelConfig;
use crate::train::TrainOptions;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainOptions,
    pub min_freq: usize,
    pub train_file: Option<PathBuf>,
    pub dev_file: Option<PathBuf>,
    pub test_file: Option<PathBuf>,
    pub pretrained: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub gradcheck_eps: f64,
    pub gradcheck_tolerance: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainOptions::default(),
            min_freq: 1,
            train_file: None,
            dev_file: None,
            test_file: None,
            pretrained: None,
            checkpoint: None,
            out_dir: PathBuf::from("out"),
            gradcheck_eps: DEFAULT_EPS,
            gradcheck_tolerance: DEFAULT_TOL,
        }
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|s| num(key, s.trim())).collect()
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse_onto(RunConfig::default(), &text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_onto(RunConfig::default(), text)
    }

    /// Applies the lines of `text` on top of `base`.
    pub fn parse_onto(mut base: Self, text: &str) -> Result<Self> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected \"key = value\"", i + 1))
            })?;
            base.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", i + 1, strip(e))))?;
        }
        Ok(base)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let m = &mut self.model;
        let path = || Some(PathBuf::from(v));
        match key {
            "train_file" => self.train_file = path(),
            "dev_file" => self.dev_file = path(),
            "test_file" => self.test_file = path(),
            "pretrained" => self.pretrained = path(),
            "checkpoint" => self.checkpoint = path(),
            "out_dir" => self.out_dir = PathBuf::from(v),
            "hidden" => m.hidden = num(key, v)?,
            "embed_dim" => m.embed_dim = num(key, v)?,
            "channels" => m.channels = num(key, v)?,
            "mode" => m.mode = v.parse()?,
            "filter_widths" => m.filter_widths = list(key, v)?,
            "filter_maps" => m.filter_maps = num(key, v)?,
            "classes" => m.classes = num(key, v)?,
            "dropout_embedding" => m.dropout_embedding = num(key, v)?,
            "dropout_cnn_input" => m.dropout_cnn_input = num(key, v)?,
            "dropout_penultimate" => m.dropout_penultimate = num(key, v)?,
            "l2" => m.l2 = num(key, v)?,
            "keep_probs" => m.keep_probs = list(key, v)?,
            "max_len" => m.max_len = num(key, v)?,
            "attention_hidden" => m.attention_hidden = num(key, v)?,
            "sum_axis" | "attention.sum_axis" => m.sum_axis = v.parse()?,
            "seed" => m.seed = num(key, v)?,
            "min_freq" => self.min_freq = num(key, v)?,
            "lr" => self.train.adam.lr = num(key, v)?,
            "beta1" => self.train.adam.beta1 = num(key, v)?,
            "beta2" => self.train.adam.beta2 = num(key, v)?,
            "adam_eps" => self.train.adam.eps = num(key, v)?,
            "batch_size" => self.train.batch_size = num(key, v)?,
            "epochs" => self.train.epochs = num(key, v)?,
            "gradcheck_eps" => self.gradcheck_eps = num(key, v)?,
            "gradcheck_tolerance" => self.gradcheck_tolerance = num(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Resizes a uniform keep-probability list to the channel count and validates.
    pub fn finish(mut self) -> Result<Self> {
        let m = &mut self.model;
        if !m.keep_probs.is_empty() && m.keep_probs.iter().all(|&p| p == m.keep_probs[0]) {
            m.keep_probs = vec![m.keep_probs[0]; m.channels];
        }
        m.validate()?;
        if self.train.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.train.adam.lr > 0.0) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if self.min_freq == 0 {
            return Err(Error::Config("min_freq must be at least 1".into()));
        }
        Ok(self)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out_dir.join("model.ckpt"))
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}
