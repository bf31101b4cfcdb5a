use serde::{Deserialize, Serialize};

use super::SpeedPanel;
use crate::error::{Error, Result};

/// Global z-score statistics over the non-missing entries of a panel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !(std > 0.0 && std.is_finite() && mean.is_finite()) {
            return Err(Error::DegenerateNormalization);
        }
        Ok(Self { mean, std })
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    #[inline]
    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Mean and population standard deviation over non-missing entries.
pub fn fit_norm(panel: &SpeedPanel) -> Result<NormStats> {
    let (mut n, mut mean, mut m2) = (0usize, 0.0f64, 0.0f64);
    for &v in panel.values() {
        if panel.is_missing(v) {
            continue;
        }
        n += 1;
        let delta = v - mean;
        mean += delta / n as f64;
        m2 += delta * (v - mean);
    }
    if n < 2 {
        return Err(Error::DegenerateNormalization);
    }
    NormStats::new(mean, (m2 / n as f64).sqrt())
}

pub fn apply_norm(values: &[f64], stats: &NormStats) -> Vec<f64> {
    values.iter().map(|&v| stats.apply(v)).collect()
}

pub fn invert_norm(values: &[f64], stats: &NormStats) -> Vec<f64> {
    values.iter().map(|&z| stats.invert(z)).collect()
}
