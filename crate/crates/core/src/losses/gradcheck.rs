//! Central finite-difference check of the analytic gradients.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BatchShape, LossKind, LossSpec, PredBatch};
use crate::error::Result;

/// Coordinates this close (in units of the step) to a kink are skipped.
const KINK_MARGIN: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

/// Random batch with `B in 2..=4`, `L in 1..=3`, `T in 1..=4`, targets in
/// `[-2, 2)`, predictions offset by `[-2, 2)` and roughly 10% of entries masked
/// (at least one stays valid).
pub fn random_batch(rng: &mut ChaCha8Rng) -> PredBatch {
    let shape = BatchShape::new(rng.random_range(2..=4), rng.random_range(1..=3), rng.random_range(1..=4));
    let n = shape.len();
    let target: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let pred: Vec<f64> = target.iter().map(|y| y + rng.random_range(-2.0..2.0)).collect();
    let mut mask: Vec<bool> = (0..n).map(|_| !rng.random_bool(0.1)).collect();
    if !mask.iter().any(|&m| m) {
        mask[0] = true;
    }
    PredBatch::new(shape, pred, target, mask).expect("consistent shape")
}

fn near_kink(spec: &LossSpec, delta: f64, margin: f64) -> bool {
    let r = spec.resolved();
    let a = delta.abs();
    match r.kind {
        LossKind::Mae | LossKind::MaeFocal | LossKind::Quantile | LossKind::Kurtosis => a < margin,
        LossKind::Huber => (a - r.beta.unwrap_or(1.0)).abs() < margin,
        _ => false,
    }
}

/// Compares analytic and central-difference gradients on `trials` random
/// batches. The relative error of a coordinate is
/// `|g - g_fd| / max(|g|, |g_fd|, floor)`, where `floor` is `1e-3` times the
/// largest analytic gradient magnitude in that batch; this keeps coordinates
/// whose true gradient is near zero from dominating through rounding noise.
pub fn grad_check(spec: &LossSpec, trials: usize, step: f64, seed: u64) -> Result<GradCheckReport> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    for _ in 0..trials {
        let mut batch = random_batch(&mut rng);
        let analytic = spec.evaluate(&batch)?.grad;
        let floor = 1e-3 * analytic.iter().fold(0.0f64, |m, g| m.max(g.abs())).max(1e-12);
        for (i, &g) in analytic.iter().enumerate() {
            if !batch.mask()[i] {
                continue;
            }
            let delta = batch.target()[i] - batch.pred()[i];
            if near_kink(spec, delta, KINK_MARGIN * step) {
                report.skipped += 1;
                continue;
            }
            let orig = batch.pred()[i];
            batch.pred_mut()[i] = orig + step;
            let up = spec.evaluate(&batch)?.value;
            batch.pred_mut()[i] = orig - step;
            let down = spec.evaluate(&batch)?.value;
            batch.pred_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let rel = (g - numeric).abs() / g.abs().max(numeric.abs()).max(floor);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.checked += 1;
        }
    }
    Ok(report)
}
