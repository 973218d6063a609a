use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataaug::AugmentationSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairMode {
    /// Two views of the same image.
    Standard,
    /// Nearest cached neighbor of another image, no gate.
    NnBootstrap,
    /// Windowed, temperature-sampled neighbors behind the self-argmax gate.
    Adasim,
    /// Same-class partner drawn from labels with a decaying standard-pair rate.
    SupervisedOracle,
}

impl PairMode {
    pub const ALL: [PairMode; 4] = [
        PairMode::Standard,
        PairMode::NnBootstrap,
        PairMode::Adasim,
        PairMode::SupervisedOracle,
    ];

    /// Short name used on the command line.
    pub fn flag(self) -> &'static str {
        match self {
            PairMode::Standard => "standard",
            PairMode::NnBootstrap => "nn",
            PairMode::Adasim => "adasim",
            PairMode::SupervisedOracle => "oracle",
        }
    }
}

impl fmt::Display for PairMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.flag())
    }
}

impl FromStr for PairMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(PairMode::Standard),
            "nn" | "nn_bootstrap" => Ok(PairMode::NnBootstrap),
            "adasim" => Ok(PairMode::Adasim),
            "oracle" | "supervised_oracle" => Ok(PairMode::SupervisedOracle),
            other => Err(Error::config("mode", format!("unknown pair mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Simsiam,
    Dino,
    Infonce,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Simsiam => "simsiam",
            LossKind::Dino => "dino",
            LossKind::Infonce => "infonce",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simsiam" => Ok(LossKind::Simsiam),
            "dino" => Ok(LossKind::Dino),
            "infonce" => Ok(LossKind::Infonce),
            other => Err(Error::config("loss", format!("unknown loss {other:?}"))),
        }
    }
}

/// Which network output populates the feature cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheSource {
    /// Backbone representation.
    Embedding,
    /// Predictor output (SimSiam) or head logits (DINO).
    Output,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub pair_mode: PairMode,
    pub loss: LossKind,
    /// Sampling temperature τ of the windowed distribution.
    pub tau: f64,
    /// Window size w (also the warmup length in epochs).
    pub window: usize,
    /// Support size K per epoch.
    pub topk: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Linear learning-rate warmup, in epochs.
    pub lr_warmup_epochs: usize,
    /// EMA coefficient λ for the teacher.
    pub ema: f64,
    /// Final standard-pair probability of the supervised oracle.
    pub oracle_p_final: f64,
    pub seed: u64,
    pub shards: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub predictor_hidden: usize,
    pub dino_out_dim: usize,
    pub student_temp: f64,
    pub teacher_temp: f64,
    pub warmup_teacher_temp: f64,
    pub warmup_teacher_epochs: usize,
    pub centering: bool,
    pub center_momentum: f64,
    pub infonce_tau: f64,
    /// Average the SimSiam loss over both branch orderings.
    pub symmetric: bool,
    pub normalize_cache: bool,
    pub cache_source: CacheSource,
    pub augmentation: AugmentationSpec,
    /// Items used for the `embed_std` collapse probe.
    pub probe_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            pair_mode: PairMode::Adasim,
            loss: LossKind::Simsiam,
            tau: 0.2,
            window: 10,
            topk: 10,
            epochs: 200,
            batch_size: 64,
            lr: 0.5,
            momentum: 0.9,
            weight_decay: 1e-4,
            lr_warmup_epochs: 0,
            ema: 0.996,
            oracle_p_final: 0.5,
            seed: 0,
            shards: 1,
            hidden_dim: 32,
            embed_dim: 16,
            predictor_hidden: 16,
            dino_out_dim: 32,
            student_temp: 0.1,
            teacher_temp: 0.07,
            warmup_teacher_temp: 0.04,
            warmup_teacher_epochs: 30,
            centering: true,
            center_momentum: 0.9,
            infonce_tau: 0.2,
            symmetric: true,
            normalize_cache: true,
            cache_source: CacheSource::Embedding,
            augmentation: AugmentationSpec::default(),
            probe_size: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 0.0) || !self.tau.is_finite() {
            return Err(Error::config("tau", format!("must be finite and ≥ 0, got {}", self.tau)));
        }
        if self.window == 0 {
            return Err(Error::config("window", "must be ≥ 1"));
        }
        if self.topk == 0 {
            return Err(Error::config("topk", "must be ≥ 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be ≥ 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be ≥ 1"));
        }
        if self.loss == LossKind::Infonce && self.batch_size < 2 {
            return Err(Error::config("batch_size", "infonce needs ≥ 2 items for in-batch negatives"));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::config("lr", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum", "must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay", "must be ≥ 0"));
        }
        if !(0.0..=1.0).contains(&self.ema) {
            return Err(Error::config("ema", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.oracle_p_final) {
            return Err(Error::config("oracle_p", "must lie in [0, 1]"));
        }
        if self.shards == 0 {
            return Err(Error::config("shards", "must be ≥ 1"));
        }
        if self.hidden_dim == 0 || self.embed_dim == 0 || self.predictor_hidden == 0 || self.dino_out_dim == 0 {
            return Err(Error::config("hidden_dim", "network widths must be positive"));
        }
        if !(self.student_temp > 0.0) || !(self.teacher_temp > 0.0) || !(self.warmup_teacher_temp > 0.0) {
            return Err(Error::config("teacher_temp", "DINO temperatures must be positive"));
        }
        if !(0.0..1.0).contains(&self.center_momentum) {
            return Err(Error::config("center_momentum", "must lie in [0, 1)"));
        }
        if !(self.infonce_tau > 0.0) {
            return Err(Error::config("infonce_tau", "must be positive"));
        }
        self.augmentation.validate()?;
        Ok(())
    }
}
