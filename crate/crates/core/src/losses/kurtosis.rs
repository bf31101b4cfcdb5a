use serde::{Deserialize, Serialize};

use super::{LossOutput, PredBatch};
use crate::error::Result;

/// Standardized fourth-moment penalty is dropped below this spread.
const DEGENERATE_STD: f64 = 1e-12;

/// Per-sample auxiliary losses and their batch statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KurtosisAux {
    /// Masked MSE of each sample; `None` for samples with no valid target.
    pub per_sample: Vec<Option<f64>>,
    pub mean: f64,
    pub std: f64,
    pub penalty: f64,
}

/// Batch MAE plus `lambda * mean_b(((L_b - mu) / sigma)^4)` where `L_b` is
/// the masked MSE of sample `b` and `mu`, `sigma` are the population mean and
/// standard deviation of those values. The gradient differentiates through
/// `mu` and `sigma`.
pub fn loss_kurtosis(batch: &PredBatch, lambda: f64) -> Result<LossOutput> {
    let mae = super::loss_mae(batch)?;
    let shape = batch.shape();
    let per = shape.locations * shape.horizon;
    let (pred, target, mask) = (batch.pred(), batch.target(), batch.mask());

    let mut per_sample = Vec::with_capacity(shape.batch);
    let mut active: Vec<(usize, f64, usize)> = Vec::new();
    for b in 0..shape.batch {
        let range = b * per..(b + 1) * per;
        let mut sum = 0.0;
        let mut n = 0usize;
        for i in range {
            if mask[i] {
                let d = target[i] - pred[i];
                sum += d * d;
                n += 1;
            }
        }
        if n == 0 {
            per_sample.push(None);
        } else {
            let l = sum / n as f64;
            per_sample.push(Some(l));
            active.push((b, l, n));
        }
    }

    let k = active.len() as f64;
    let mean = active.iter().map(|a| a.1).sum::<f64>() / k;
    let devs: Vec<f64> = active.iter().map(|a| a.1 - mean).collect();
    let var = devs.iter().map(|d| d * d).sum::<f64>() / k;
    let std = var.sqrt();

    let mut grad = mae.grad;
    let mut penalty = 0.0;
    if std >= DEGENERATE_STD {
        let m4 = devs.iter().map(|d| d.powi(4)).sum::<f64>() / k;
        let m3 = devs.iter().map(|d| d.powi(3)).sum::<f64>() / k;
        let s4 = var * var;
        penalty = lambda * m4 / s4;
        for (&(b, _, n), &d) in active.iter().zip(&devs) {
            // d penalty / d L_b
            let dl = lambda * 4.0 / k * ((d.powi(3) - m3) / s4 - m4 * d / (s4 * var));
            for i in b * per..(b + 1) * per {
                if mask[i] {
                    grad[i] += dl * -2.0 * (target[i] - pred[i]) / n as f64;
                }
            }
        }
    }

    Ok(LossOutput {
        value: mae.value + penalty,
        grad,
        aux: Some(KurtosisAux {
            per_sample,
            mean,
            std,
            penalty,
        }),
    })
}
