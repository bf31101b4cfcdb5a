//! Training objectives with analytic gradients with respect to predictions.
//!
//! Every loss consumes a [`PredBatch`] of shape `B x L x T` (samples x
//! locations x horizon steps) and returns the scalar value together with
//! its gradient. Masked entries (missing targets) never contribute and
//! always receive a zero gradient.

mod bmc;
mod gradcheck;
mod kurtosis;
mod pointwise;

pub use bmc::loss_bmc;
pub use gradcheck::{grad_check, random_batch, GradCheckReport};
pub use kurtosis::{loss_kurtosis, KurtosisAux};
pub use pointwise::{loss_focal, loss_gumbel, loss_huber, loss_mae, loss_mse, loss_quantile, FocalOrder};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_FOCAL_BETA: f64 = 0.2;
pub const DEFAULT_FOCAL_GAMMA: f64 = 1.0;
pub const DEFAULT_HUBER_BETA: f64 = 1.0;
pub const DEFAULT_QUANTILES: [f64; 3] = [0.025, 0.5, 0.975];
pub const DEFAULT_GUMBEL_GAMMA: f64 = 1.1;
pub const DEFAULT_KURTOSIS_LAMBDA: f64 = 0.01;
pub const DEFAULT_MAX_CANDIDATES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "MAE")]
    Mae,
    #[serde(rename = "MSE")]
    Mse,
    #[serde(rename = "MAEFocal")]
    MaeFocal,
    #[serde(rename = "MSEFocal")]
    MseFocal,
    Huber,
    Quantile,
    #[serde(rename = "BalancedMSE")]
    BalancedMse,
    Gumbel,
    Kurtosis,
}

impl LossKind {
    /// First-order losses are benchmarked against MAE, the rest against MSE.
    pub fn is_first_order(self) -> bool {
        matches!(self, Self::Mae | Self::MaeFocal | Self::Huber | Self::Quantile)
    }
}

/// A loss choice plus its hyperparameters, as read from JSON.
///
/// Hyperparameters the kind does not use are ignored; missing ones take
/// the defaults above (see [`LossSpec::resolved`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSpec {
    pub kind: LossKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantiles: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2_noise: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Cap on `B * L` for the balanced MSE softmax.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_candidates: Option<usize>,
    /// Display name; derived from the kind when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl LossSpec {
    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            beta: None,
            gamma: None,
            quantiles: None,
            sigma2_noise: None,
            lambda: None,
            max_candidates: None,
            label: None,
        }
        .resolved()
    }

    pub fn mae() -> Self {
        Self::new(LossKind::Mae)
    }

    pub fn mse() -> Self {
        Self::new(LossKind::Mse)
    }

    pub fn balanced_mse(sigma2_noise: f64) -> Self {
        Self {
            sigma2_noise: Some(sigma2_noise),
            ..Self::new(LossKind::BalancedMse)
        }
    }

    /// The nine configurations compared in the benchmark: MAE, MAE-Focal,
    /// Quantile, Huber, MSE, MSE-Focal, bMSE-1, bMSE-9, Gumbel, Kurtosis.
    pub fn benchmark_suite() -> Vec<Self> {
        vec![
            Self::new(LossKind::Mae),
            Self::new(LossKind::MaeFocal),
            Self::new(LossKind::Quantile),
            Self::new(LossKind::Huber),
            Self::new(LossKind::Mse),
            Self::new(LossKind::MseFocal),
            Self::balanced_mse(1.0),
            Self::balanced_mse(9.0),
            Self::new(LossKind::Gumbel),
            Self::new(LossKind::Kurtosis),
        ]
    }

    /// Fills the hyperparameters this kind uses with defaults and drops the rest.
    pub fn resolved(&self) -> Self {
        use LossKind::*;
        let k = self.kind;
        let mut out = Self {
            kind: k,
            beta: None,
            gamma: None,
            quantiles: None,
            sigma2_noise: None,
            lambda: None,
            max_candidates: None,
            label: self.label.clone(),
        };
        match k {
            Mae | Mse => {}
            MaeFocal | MseFocal => {
                out.beta = Some(self.beta.unwrap_or(DEFAULT_FOCAL_BETA));
                out.gamma = Some(self.gamma.unwrap_or(DEFAULT_FOCAL_GAMMA));
            }
            Huber => out.beta = Some(self.beta.unwrap_or(DEFAULT_HUBER_BETA)),
            Quantile => {
                out.quantiles = Some(self.quantiles.clone().unwrap_or_else(|| DEFAULT_QUANTILES.to_vec()))
            }
            BalancedMse => {
                out.sigma2_noise = Some(self.sigma2_noise.unwrap_or(1.0));
                out.max_candidates = Some(self.max_candidates.unwrap_or(DEFAULT_MAX_CANDIDATES));
            }
            Gumbel => out.gamma = Some(self.gamma.unwrap_or(DEFAULT_GUMBEL_GAMMA)),
            Kurtosis => out.lambda = Some(self.lambda.unwrap_or(DEFAULT_KURTOSIS_LAMBDA)),
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.resolved();
        let positive = |name: &str, v: Option<f64>| match v {
            Some(x) if !(x > 0.0 && x.is_finite()) => {
                Err(Error::invalid(format!("{name} must be positive and finite, got {x}")))
            }
            _ => Ok(()),
        };
        positive("beta", r.beta)?;
        positive("sigma2_noise", r.sigma2_noise)?;
        if let Some(g) = r.gamma {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(Error::invalid(format!("gamma must be >= 0, got {g}")));
            }
        }
        if let Some(l) = r.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::invalid(format!("lambda must be >= 0, got {l}")));
            }
        }
        if let Some(qs) = &r.quantiles {
            if qs.is_empty() {
                return Err(Error::invalid("quantile set is empty"));
            }
            if let Some(q) = qs.iter().find(|q| !(**q > 0.0 && **q < 1.0)) {
                return Err(Error::invalid(format!("quantile {q} outside (0, 1)")));
            }
        }
        if r.max_candidates == Some(0) {
            return Err(Error::invalid("max_candidates must be >= 1"));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        if let Some(l) = &self.label {
            return l.clone();
        }
        match self.kind {
            LossKind::Mae => "MAE".into(),
            LossKind::Mse => "MSE".into(),
            LossKind::MaeFocal => "MAE-Focal".into(),
            LossKind::MseFocal => "MSE-Focal".into(),
            LossKind::Huber => "Huber".into(),
            LossKind::Quantile => "Quantile".into(),
            LossKind::BalancedMse => {
                let s = self.sigma2_noise.unwrap_or(1.0);
                if s.fract() == 0.0 && s.abs() < 1e15 {
                    format!("bMSE-{}", s as i64)
                } else {
                    format!("bMSE-{s}")
                }
            }
            LossKind::Gumbel => "Gumbel".into(),
            LossKind::Kurtosis => "Kurtosis".into(),
        }
    }

    /// Evaluates this loss on a batch.
    pub fn evaluate(&self, batch: &PredBatch) -> Result<LossOutput> {
        self.validate()?;
        let r = self.resolved();
        match r.kind {
            LossKind::Mae => loss_mae(batch),
            LossKind::Mse => loss_mse(batch),
            LossKind::MaeFocal => loss_focal(batch, r.beta.unwrap(), r.gamma.unwrap(), FocalOrder::Abs),
            LossKind::MseFocal => loss_focal(batch, r.beta.unwrap(), r.gamma.unwrap(), FocalOrder::Square),
            LossKind::Huber => loss_huber(batch, r.beta.unwrap()),
            LossKind::Quantile => loss_quantile(batch, r.quantiles.as_deref().unwrap()),
            LossKind::BalancedMse => loss_bmc(batch, r.sigma2_noise.unwrap(), r.max_candidates.unwrap()),
            LossKind::Gumbel => loss_gumbel(batch, r.gamma.unwrap()),
            LossKind::Kurtosis => loss_kurtosis(batch, r.lambda.unwrap()),
        }
    }
}

/// Batch extents: samples x locations x horizon steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchShape {
    pub batch: usize,
    pub locations: usize,
    pub horizon: usize,
}

impl BatchShape {
    pub fn new(batch: usize, locations: usize, horizon: usize) -> Self {
        Self {
            batch,
            locations,
            horizon,
        }
    }

    pub fn len(&self) -> usize {
        self.batch * self.locations * self.horizon
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, b: usize, l: usize, t: usize) -> usize {
        (b * self.locations + l) * self.horizon + t
    }
}

/// Predictions, targets and validity mask, all flat in `B x L x T` order.
#[derive(Debug, Clone, PartialEq)]
pub struct PredBatch {
    shape: BatchShape,
    pred: Vec<f64>,
    target: Vec<f64>,
    mask: Vec<bool>,
}

impl PredBatch {
    pub fn new(shape: BatchShape, pred: Vec<f64>, target: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        let n = shape.len();
        if pred.len() != n || target.len() != n || mask.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "batch {}x{}x{} needs {n} entries; got pred {}, target {}, mask {}",
                shape.batch,
                shape.locations,
                shape.horizon,
                pred.len(),
                target.len(),
                mask.len()
            )));
        }
        Ok(Self {
            shape,
            pred,
            target,
            mask,
        })
    }

    /// Mask is false exactly where the target equals `sentinel`.
    pub fn with_sentinel(shape: BatchShape, pred: Vec<f64>, target: Vec<f64>, sentinel: f64) -> Result<Self> {
        let mask = target.iter().map(|&y| y != sentinel).collect();
        Self::new(shape, pred, target, mask)
    }

    /// All entries valid.
    pub fn dense(shape: BatchShape, pred: Vec<f64>, target: Vec<f64>) -> Result<Self> {
        let mask = vec![true; pred.len()];
        Self::new(shape, pred, target, mask)
    }

    pub fn shape(&self) -> BatchShape {
        self.shape
    }

    pub fn pred(&self) -> &[f64] {
        &self.pred
    }

    pub fn pred_mut(&mut self) -> &mut [f64] {
        &mut self.pred
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub(crate) fn require_valid(&self) -> Result<usize> {
        match self.valid_count() {
            0 => Err(Error::NoValidTargets),
            n => Ok(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    /// d value / d prediction, shaped like the predictions.
    pub grad: Vec<f64>,
    pub aux: Option<KurtosisAux>,
}
