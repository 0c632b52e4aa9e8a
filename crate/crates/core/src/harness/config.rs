//! Flat `key = value` training configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::data::DatasetKind;
use super::optim::AdamConfig;
use crate::error::{Error, Result};
use crate::losses::{LossConfig, LossKind};
use crate::progressive::{default_ladder, GrowthSchedule};
use crate::tensor::Shape3d;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub precision: Precision,
    pub dataset: DatasetKind,
    pub loss: LossConfig,
    pub base_channels: usize,
    pub latent_dim: usize,
    pub ladder: Vec<Shape3d>,
    pub images_per_phase: u64,
    pub images_per_transition: u64,
    pub batch_size: usize,
    /// Minibatch overrides keyed by rung index.
    pub batch_per_rung: BTreeMap<usize, usize>,
    pub optimizer: AdamConfig,
    /// Discriminator step size, when it differs from the generator's.
    pub d_step_size: Option<f64>,
    pub n_critic: usize,
    pub total_images: u64,
    /// Hidden width of the toy (2-D) networks.
    pub toy_hidden: usize,
    /// Encoder output width of the toy critic.
    pub toy_features: usize,
    /// Evaluate the sliced distance to held-out data every this many
    /// steps (0: only before the first and after the last step).
    pub eval_every: u64,
    pub eval_samples: usize,
    pub dot_speed: i64,
    pub checkpoint_dir: Option<PathBuf>,
    /// Steps between checkpoints (0: only at the end, if a directory is set).
    pub checkpoint_every: u64,
    pub report_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            precision: Precision::F64,
            dataset: DatasetKind::GaussMix2d,
            loss: LossConfig::default(),
            base_channels: 4,
            latent_dim: 128,
            ladder: default_ladder(),
            images_per_phase: 10_000,
            images_per_transition: 10_000,
            batch_size: 16,
            batch_per_rung: BTreeMap::new(),
            optimizer: AdamConfig::default(),
            d_step_size: None,
            n_critic: 1,
            total_images: 0,
            toy_hidden: 64,
            toy_features: 8,
            eval_every: 0,
            eval_samples: 512,
            dot_speed: 1,
            checkpoint_dir: None,
            checkpoint_every: 0,
            report_path: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("cannot parse {key} = {v:?}")))
}

fn parse_shape(v: &str) -> Result<Shape3d> {
    let parts: Vec<&str> = v.trim().split('x').collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!("rung {v:?} must look like TxHxW")));
    }
    let n: Vec<usize> = parts
        .iter()
        .map(|p| parse("rung", p.trim()))
        .collect::<Result<_>>()?;
    Shape3d::new(n[0], n[1], n[2]).map_err(|e| Error::Config(e.to_string()))
}

impl TrainConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, v)?,
            "precision" => {
                self.precision = match v {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    _ => {
                        return Err(Error::Config(format!(
                            "precision must be f32 or f64, got {v:?}"
                        )))
                    }
                }
            }
            "dataset" => self.dataset = v.parse()?,
            "loss" => self.loss.kind = v.parse()?,
            "lambda1" => self.loss.lambda1 = parse(key, v)?,
            "lambda2" => self.loss.lambda2 = parse(key, v)?,
            "k_lipschitz" => self.loss.k_lipschitz = parse(key, v)?,
            "clip_bound" => self.loss.clip_bound = parse(key, v)?,
            "n_projections" => self.loss.n_projections = parse(key, v)?,
            "penalty_space" => self.loss.penalty_space = v.parse()?,
            "fixed_projections" => self.loss.fixed_projections = parse(key, v)?,
            "base_channels" => self.base_channels = parse(key, v)?,
            "latent_dim" => self.latent_dim = parse(key, v)?,
            "ladder" => self.ladder = v.split(',').map(parse_shape).collect::<Result<_>>()?,
            "images_per_phase" => self.images_per_phase = parse(key, v)?,
            "images_per_transition" => self.images_per_transition = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "batch_per_rung" => {
                self.batch_per_rung.clear();
                for item in v.split(',').filter(|s| !s.trim().is_empty()) {
                    let (k, b) = item.split_once(':').ok_or_else(|| {
                        Error::Config(format!("batch_per_rung entry {item:?} must be rung:size"))
                    })?;
                    self.batch_per_rung
                        .insert(parse(key, k.trim())?, parse(key, b.trim())?);
                }
            }
            "step_size" => self.optimizer.step_size = parse(key, v)?,
            "beta1" => self.optimizer.beta1 = parse(key, v)?,
            "beta2" => self.optimizer.beta2 = parse(key, v)?,
            "adam_eps" => self.optimizer.eps = parse(key, v)?,
            "d_step_size" => self.d_step_size = Some(parse(key, v)?),
            "n_critic" => self.n_critic = parse(key, v)?,
            "total_images" => self.total_images = parse(key, v)?,
            "toy_hidden" => self.toy_hidden = parse(key, v)?,
            "toy_features" => self.toy_features = parse(key, v)?,
            "eval_every" => self.eval_every = parse(key, v)?,
            "eval_samples" => self.eval_samples = parse(key, v)?,
            "dot_speed" => self.dot_speed = parse(key, v)?,
            "checkpoint_dir" => self.checkpoint_dir = Some(PathBuf::from(v)),
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "report_path" => self.report_path = Some(PathBuf::from(v)),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Parses a config file body on top of the defaults. Blank lines and
    /// lines starting with `#` are ignored.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut transition_set = false;
        let mut phase: Option<u64> = None;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            cfg.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
            match k {
                "images_per_transition" => transition_set = true,
                "images_per_phase" => phase = Some(cfg.images_per_phase),
                _ => {}
            }
        }
        if let (Some(p), false) = (phase, transition_set) {
            cfg.images_per_transition = p;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.optimizer.validate()?;
        let positive = [
            ("base_channels", self.base_channels),
            ("latent_dim", self.latent_dim),
            ("batch_size", self.batch_size),
            ("n_critic", self.n_critic),
            ("toy_hidden", self.toy_hidden),
            ("toy_features", self.toy_features),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        if self.eval_samples < 2 {
            return Err(Error::Config("eval_samples must be at least 2".into()));
        }
        if self.batch_per_rung.values().any(|&b| b == 0) {
            return Err(Error::Config(
                "batch_per_rung sizes must be positive".into(),
            ));
        }
        if let Some(s) = self.d_step_size {
            AdamConfig {
                step_size: s,
                ..self.optimizer
            }
            .validate()?;
        }
        if self.dot_speed < 0 {
            return Err(Error::Config("dot_speed must be non-negative".into()));
        }
        if self.loss.kind == LossKind::SwdDirect && self.loss.n_projections == 0 {
            return Err(Error::Config("swd_direct needs projections".into()));
        }
        self.schedule()?;
        Ok(())
    }

    pub fn schedule(&self) -> Result<GrowthSchedule> {
        GrowthSchedule::new(
            self.ladder.clone(),
            self.images_per_phase,
            self.images_per_transition,
        )
    }

    pub fn batch_for(&self, rung_index: usize) -> usize {
        self.batch_per_rung
            .get(&rung_index)
            .copied()
            .unwrap_or(self.batch_size)
    }
}
