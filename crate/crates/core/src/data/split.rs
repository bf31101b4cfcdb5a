use serde::{Deserialize, Serialize};

use super::SpeedPanel;
use crate::error::{Error, Result};

/// Chronological train/validation fractions; the test split takes the rest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.1,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        if !(self.train > 0.0 && self.val > 0.0 && self.train + self.val < 1.0) {
            return Err(Error::invalid(format!(
                "split fractions must be positive with train + val < 1, got {}/{}",
                self.train, self.val
            )));
        }
        Ok(())
    }

    /// Row counts of the three splits for a panel of `rows` rows.
    pub fn sizes(&self, rows: usize) -> (usize, usize, usize) {
        let train = (self.train * rows as f64).floor() as usize;
        let val = (self.val * rows as f64).floor() as usize;
        (train, val, rows - train - val)
    }
}

/// Splits rows in time order into train/validation/test panels.
///
/// Every split must hold at least `min_rows` rows (typically `S + T`, one window).
pub fn split_chronological(
    panel: &SpeedPanel,
    fractions: SplitFractions,
    min_rows: usize,
) -> Result<(SpeedPanel, SpeedPanel, SpeedPanel)> {
    fractions.validate()?;
    let (n_train, n_val, n_test) = fractions.sizes(panel.rows());
    for (split, rows) in [("train", n_train), ("validation", n_val), ("test", n_test)] {
        if rows < min_rows.max(1) {
            return Err(Error::SplitTooSmall {
                split,
                rows,
                needed: min_rows.max(1),
            });
        }
    }
    Ok((
        panel.slice_rows(0, n_train),
        panel.slice_rows(n_train, n_train + n_val),
        panel.slice_rows(n_train + n_val, panel.rows()),
    ))
}
