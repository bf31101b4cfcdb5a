use super::SpeedPanel;
use crate::error::{Error, Result};

/// Sliding-window view over a panel: each sample pairs `input_len` rows of
/// history with the `horizon_len` rows that immediately follow.
///
/// Samples are not materialized; [`WindowedDataset::sample`] borrows
/// contiguous row blocks from the owned panel.
#[derive(Debug, Clone)]
pub struct WindowedDataset {
    panel: SpeedPanel,
    input_len: usize,
    horizon_len: usize,
    target_starts: Vec<usize>,
}

/// One sample. `input` is `S x D` and `target` is `T x D`, both row-major.
#[derive(Debug, Clone, Copy)]
pub struct Window<'a> {
    pub input: &'a [f64],
    pub target: &'a [f64],
    pub target_start: usize,
}

pub fn make_windows(
    panel: &SpeedPanel,
    input_len: usize,
    horizon_len: usize,
    stride: usize,
) -> Result<WindowedDataset> {
    if input_len == 0 || horizon_len == 0 || stride == 0 {
        return Err(Error::invalid("input length, horizon length and stride must be >= 1"));
    }
    let span = input_len + horizon_len;
    if panel.rows() < span {
        return Err(Error::InsufficientRows {
            rows: panel.rows(),
            needed: span,
        });
    }
    let count = (panel.rows() - span) / stride + 1;
    let target_starts = (0..count).map(|i| i * stride + input_len).collect();
    Ok(WindowedDataset {
        panel: panel.clone(),
        input_len,
        horizon_len,
        target_starts,
    })
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.target_starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target_starts.is_empty()
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn horizon_len(&self) -> usize {
        self.horizon_len
    }

    pub fn n_sensors(&self) -> usize {
        self.panel.n_sensors()
    }

    pub fn panel(&self) -> &SpeedPanel {
        &self.panel
    }

    pub fn target_starts(&self) -> &[usize] {
        &self.target_starts
    }

    pub fn sample(&self, i: usize) -> Window<'_> {
        let t0 = self.target_starts[i];
        Window {
            input: self.panel.row_block(t0 - self.input_len, t0),
            target: self.panel.row_block(t0, t0 + self.horizon_len),
            target_start: t0,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Window<'_>> + '_ {
        (0..self.len()).map(move |i| self.sample(i))
    }
}
