//! Batch-based Monte-Carlo balanced MSE.
//!
//! Each query `(b, l)` is classified against every target vector of the
//! batch with logits `-||y_hat_bl - y_b'l'||^2 / (2 sigma^2)`; the loss is
//! the cross-entropy of the true pair, averaged over queries.

use super::{LossOutput, PredBatch};
use crate::error::{Error, Result};

pub fn loss_bmc(batch: &PredBatch, sigma2_noise: f64, max_candidates: usize) -> Result<LossOutput> {
    if !(sigma2_noise > 0.0 && sigma2_noise.is_finite()) {
        return Err(Error::invalid(format!("sigma2_noise must be positive, got {sigma2_noise}")));
    }
    batch.require_valid()?;
    let shape = batch.shape();
    let t_len = shape.horizon;
    let pairs = shape.batch * shape.locations;
    if pairs > max_candidates {
        return Err(Error::BatchTooLarge {
            size: pairs,
            limit: max_candidates,
        });
    }
    let (pred, target, mask) = (batch.pred(), batch.target(), batch.mask());
    let vec_of = |k: usize| k * t_len..(k + 1) * t_len;

    let queries: Vec<usize> = (0..pairs).filter(|&k| mask[vec_of(k)].iter().any(|&m| m)).collect();
    let q_count = queries.len() as f64;
    let inv_two_sigma2 = 0.5 / sigma2_noise;

    let mut value = 0.0;
    let mut grad = vec![0.0; pred.len()];
    let mut logits: Vec<(usize, f64)> = Vec::with_capacity(pairs);
    let mut weighted = vec![0.0; t_len];

    for &q in &queries {
        let (qp, qm) = (&pred[vec_of(q)], &mask[vec_of(q)]);
        logits.clear();
        for c in 0..pairs {
            let (cy, cm) = (&target[vec_of(c)], &mask[vec_of(c)]);
            let mut dist = 0.0;
            let mut overlap = false;
            for t in 0..t_len {
                if qm[t] && cm[t] {
                    overlap = true;
                    let d = qp[t] - cy[t];
                    dist += d * d;
                }
            }
            if overlap {
                logits.push((c, -dist * inv_two_sigma2));
            }
        }
        let top = logits.iter().map(|&(_, z)| z).fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = logits.iter().map(|&(_, z)| (z - top).exp()).sum();
        let log_z = top + denom.ln();
        let own = logits
            .iter()
            .find(|&&(c, _)| c == q)
            .map(|&(_, z)| z)
            .expect("query overlaps itself");
        value += log_z - own;

        // d/d y_hat_qt = (1/sigma^2) m_qt [(y_hat_qt - y_qt) - sum_c p_c m_ct (y_hat_qt - y_ct)]
        weighted.iter_mut().for_each(|w| *w = 0.0);
        for &(c, z) in &logits {
            let p = (z - log_z).exp();
            let (cy, cm) = (&target[vec_of(c)], &mask[vec_of(c)]);
            for t in 0..t_len {
                if cm[t] {
                    weighted[t] += p * (qp[t] - cy[t]);
                }
            }
        }
        let qy = &target[vec_of(q)];
        let g = &mut grad[vec_of(q)];
        for t in 0..t_len {
            if qm[t] {
                g[t] = ((qp[t] - qy[t]) - weighted[t]) / sigma2_noise / q_count;
            }
        }
    }

    Ok(LossOutput {
        value: value / q_count,
        grad,
        aux: None,
    })
}
