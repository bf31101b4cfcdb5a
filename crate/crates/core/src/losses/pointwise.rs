//! Losses that decompose into a mean of per-entry terms of `delta = y - y_hat`.

use super::{LossOutput, PredBatch};
use crate::error::Result;

/// Which error the focal modulation multiplies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FocalOrder {
    /// `e = |y - y_hat|`
    Abs,
    /// `e = (y - y_hat)^2`
    Square,
}

/// Mean of `term(delta)` over valid entries. `term` returns the entry value
/// and its derivative with respect to `delta`.
fn entrywise(batch: &PredBatch, term: impl Fn(f64) -> (f64, f64)) -> Result<LossOutput> {
    let n = batch.require_valid()? as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; batch.pred().len()];
    for (i, ((&p, &y), &m)) in batch.pred().iter().zip(batch.target()).zip(batch.mask()).enumerate() {
        if !m {
            continue;
        }
        let (v, dv) = term(y - p);
        value += v;
        // d delta / d y_hat = -1
        grad[i] = -dv / n;
    }
    Ok(LossOutput {
        value: value / n,
        grad,
        aux: None,
    })
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn loss_mae(batch: &PredBatch) -> Result<LossOutput> {
    entrywise(batch, |d| (d.abs(), sign(d)))
}

pub fn loss_mse(batch: &PredBatch) -> Result<LossOutput> {
    entrywise(batch, |d| (d * d, 2.0 * d))
}

/// `sigmoid(|beta e|)^gamma * e`, differentiated through the modulating factor.
pub fn loss_focal(batch: &PredBatch, beta: f64, gamma: f64, order: FocalOrder) -> Result<LossOutput> {
    entrywise(batch, |d| {
        let (e, de) = match order {
            FocalOrder::Abs => (d.abs(), sign(d)),
            FocalOrder::Square => (d * d, 2.0 * d),
        };
        let s = sigmoid((beta * e).abs());
        let w = s.powf(gamma);
        // d/de [s^gamma e] = s^gamma (1 + gamma beta e (1 - s)) for e >= 0
        let dw = w * (1.0 + gamma * beta.abs() * e * (1.0 - s));
        (w * e, dw * de)
    })
}

/// `delta^2 / 2` inside `|delta| < beta`, `|delta| - beta / 2` outside.
pub fn loss_huber(batch: &PredBatch, beta: f64) -> Result<LossOutput> {
    entrywise(batch, |d| {
        if d.abs() < beta {
            (0.5 * d * d, d)
        } else {
            (d.abs() - 0.5 * beta, sign(d))
        }
    })
}

/// Pinball loss summed over the quantile set, each averaged over entries.
pub fn loss_quantile(batch: &PredBatch, quantiles: &[f64]) -> Result<LossOutput> {
    entrywise(batch, |d| {
        let below = if d < 0.0 { 1.0 } else { 0.0 };
        let mut v = 0.0;
        let mut dv = 0.0;
        for &tau in quantiles {
            v += d * (tau - below);
            dv += tau - below;
        }
        // zero subgradient at the kink keeps perfect fits stationary
        (v, if d == 0.0 { 0.0 } else { dv })
    })
}

/// `(1 - exp(-delta^2))^gamma * delta^2`.
pub fn loss_gumbel(batch: &PredBatch, gamma: f64) -> Result<LossOutput> {
    entrywise(batch, |d| {
        let u = d * d;
        if u == 0.0 {
            return (0.0, 0.0);
        }
        let m = -(-u).exp_m1();
        let w = m.powf(gamma);
        // d/du [m^gamma u] = m^gamma + gamma m^(gamma-1) e^{-u} u
        let dw = w + gamma * w / m * (-u).exp() * u;
        (w * u, dw * 2.0 * d)
    })
}

#[cfg(test)]
mod tests {
    use super::super::BatchShape;
    use super::*;

    fn single(y: f64, p: f64) -> PredBatch {
        PredBatch::dense(BatchShape::new(1, 1, 1), vec![p], vec![y]).unwrap()
    }

    fn pair(y: [f64; 2], p: [f64; 2]) -> PredBatch {
        PredBatch::dense(BatchShape::new(1, 1, 2), p.to_vec(), y.to_vec()).unwrap()
    }

    #[test]
    fn mae_values() {
        assert_eq!(loss_mae(&pair([1.0, 2.0], [1.0, 2.0])).unwrap().value, 0.0);
        assert_eq!(loss_mae(&pair([1.0, 2.0], [2.0, 4.0])).unwrap().value, 1.5);
        // y - y_hat = 2 > 0, so d/dy_hat |y - y_hat| = -1
        assert_eq!(loss_mae(&single(5.0, 3.0)).unwrap().grad, vec![-1.0]);
        assert_eq!(loss_mae(&single(3.0, 3.0)).unwrap().grad, vec![0.0]);
    }

    #[test]
    fn mse_values() {
        assert_eq!(loss_mse(&pair([1.0, 2.0], [2.0, 4.0])).unwrap().value, 2.5);
        assert_eq!(loss_mse(&pair([1.0, 2.0], [2.0, 4.0])).unwrap().grad, vec![1.0, 2.0]);
    }

    #[test]
    fn focal_values() {
        assert_eq!(loss_focal(&single(1.0, 1.0), 0.2, 1.0, FocalOrder::Abs).unwrap().value, 0.0);
        // 1 / (1 + e^{-0.2}) = 0.549833997312478
        let v = loss_focal(&single(1.0, 0.0), 0.2, 1.0, FocalOrder::Abs).unwrap().value;
        assert!((v - 0.549833997312478).abs() < 1e-12);
        let v = loss_focal(&single(1.0, 0.0), 0.2, 1.0, FocalOrder::Square).unwrap().value;
        assert!((v - 0.549833997312478).abs() < 1e-12);
        // sigmoid(0.8) * 4 = 2.75989792451045
        let v = loss_focal(&single(2.0, 0.0), 0.2, 1.0, FocalOrder::Square).unwrap().value;
        assert!((v - 2.75989792451045).abs() < 1e-12, "{v}");
    }

    #[test]
    fn huber_values() {
        assert_eq!(loss_huber(&single(0.5, 0.0), 1.0).unwrap().value, 0.125);
        assert_eq!(loss_huber(&single(2.0, 0.0), 1.0).unwrap().value, 1.5);
        let below = loss_huber(&single(1.0 - 1e-9, 0.0), 1.0).unwrap().value;
        let above = loss_huber(&single(1.0 + 1e-9, 0.0), 1.0).unwrap().value;
        assert!((below - above).abs() < 1e-8);
    }

    #[test]
    fn quantile_values() {
        assert_eq!(loss_quantile(&single(3.0, 3.0), &[0.5]).unwrap().value, 0.0);
        assert_eq!(loss_quantile(&single(1.0, 0.0), &[0.5]).unwrap().value, 0.5);
        let v = loss_quantile(&single(1.0, 0.0), &[0.025, 0.5, 0.975]).unwrap().value;
        assert!((v - 1.5).abs() < 1e-15);
    }

    #[test]
    fn gumbel_values() {
        assert_eq!(loss_gumbel(&single(2.0, 2.0), 1.1).unwrap().value, 0.0);
        // (1 - e^{-1})^{1.1} = 0.6037816458359111
        let v = loss_gumbel(&single(1.0, 0.0), 1.1).unwrap().value;
        assert!((v - 0.6037816458359111).abs() < 1e-12, "{v}");
        let v = loss_gumbel(&single(10.0, 0.0), 1.1).unwrap().value;
        assert!((v - 100.0).abs() < 1e-6);
    }

    #[test]
    fn masked_entries_ignored() {
        let s = BatchShape::new(1, 1, 2);
        let b = PredBatch::new(s, vec![10.0, 45.0], vec![0.0, 50.0], vec![false, true]).unwrap();
        let out = loss_mae(&b).unwrap();
        assert_eq!(out.value, 5.0);
        assert_eq!(out.grad, vec![0.0, -1.0]);
    }
}
