//! Run configuration shared by every CLI subcommand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baseline::TrainConfig;
use crate::changepoint::ChangePointConfig;
use crate::data::{SplitFractions, SyntheticConfig};
use crate::density::BimodalityConfig;
use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::metrics::{Scope, DEFAULT_ALPHAS, DEFAULT_HORIZONS};

/// Optimizer settings applied to every loss of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub early_stop_patience: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            momentum: d.momentum,
            early_stop_patience: d.early_stop_patience,
        }
    }
}

impl TrainSettings {
    pub fn for_loss(&self, loss: LossSpec, seed: u64) -> TrainConfig {
        TrainConfig {
            loss,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            seed,
            early_stop_patience: self.early_stop_patience,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Speed CSV; when absent the synthetic panel below is generated.
    pub data: Option<PathBuf>,
    pub synthetic: SyntheticConfig,
    pub split: SplitFractions,
    pub input_len: usize,
    pub horizon_len: usize,
    pub bimodality: BimodalityConfig,
    pub changepoint: ChangePointConfig,
    pub losses: Vec<LossSpec>,
    pub train: TrainSettings,
    pub horizons: Vec<usize>,
    pub var_levels: Vec<f64>,
    pub var_scope: Scope,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            synthetic: SyntheticConfig::default(),
            split: SplitFractions::default(),
            input_len: 12,
            horizon_len: 12,
            bimodality: BimodalityConfig::default(),
            changepoint: ChangePointConfig::default(),
            losses: LossSpec::benchmark_suite(),
            train: TrainSettings::default(),
            horizons: DEFAULT_HORIZONS.to_vec(),
            var_levels: DEFAULT_ALPHAS.to_vec(),
            var_scope: Scope::Congestion,
            out_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

/// SplitMix64 finalizer; decorrelates per-stage seeds drawn from one run seed.
pub fn sub_seed(seed: u64, stage: u64) -> u64 {
    let mut z = seed ^ stage.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub const STAGE_TRAIN: u64 = 1;

impl RunConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if let Err(e) = self.split.validate() {
            return bad(e.to_string());
        }
        if self.data.is_none() {
            if let Err(e) = self.synthetic.validate() {
                return bad(format!("synthetic: {e}"));
            }
        }
        if self.input_len == 0 || self.horizon_len == 0 {
            return bad("input_len and horizon_len must be >= 1".into());
        }
        if let Err(e) = self.bimodality.validate() {
            return bad(format!("bimodality: {e}"));
        }
        if let Some(p) = self.changepoint.penalty {
            if !(p > 0.0 && p.is_finite()) {
                return bad(format!("changepoint.penalty must be positive, got {p}"));
            }
        }
        if self.losses.is_empty() {
            return bad("losses must list at least one loss".into());
        }
        let mut labels = std::collections::BTreeSet::new();
        for l in &self.losses {
            if let Err(e) = l.validate() {
                return bad(format!("loss {}: {e}", l.label()));
            }
            if !labels.insert(l.label()) {
                return bad(format!("duplicate loss label {}", l.label()));
            }
        }
        if let Err(e) = self.train.for_loss(LossSpec::mae(), 0).validate() {
            return bad(format!("train: {e}"));
        }
        if self.horizons.is_empty() {
            return bad("horizons must not be empty".into());
        }
        if let Some(h) = self.horizons.iter().find(|&&h| h == 0 || h > self.horizon_len) {
            return bad(format!("horizon step {h} outside 1..={}", self.horizon_len));
        }
        if let Some(a) = self.var_levels.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return bad(format!("VaR level {a} outside (0, 1)"));
        }
        Ok(())
    }
}
