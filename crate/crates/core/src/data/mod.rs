//! Speed panels: ingestion, chronological splits, sliding windows,
//! normalization and a synthetic two-regime generator.

mod csv;
mod norm;
mod split;
mod synthetic;
mod window;

pub use self::csv::{load_csv, read_csv, write_csv};
pub use norm::{apply_norm, fit_norm, invert_norm, NormStats};
pub use split::{split_chronological, SplitFractions};
pub use synthetic::{generate_synthetic, generate_synthetic_labeled, SyntheticConfig, SyntheticData};
pub use window::{make_windows, Window, WindowedDataset};

use crate::error::{Error, Result};

/// Default sampling interval of the benchmark datasets (5 minutes).
pub const DEFAULT_STEP_SECONDS: i64 = 300;

/// Speed reading that marks a missing observation.
pub const MISSING_SENTINEL: f64 = 0.0;

/// Timestamped speed matrix for `D` sensors.
///
/// Values are stored row-major: one row per time step, one column per sensor.
/// A panel is immutable once constructed.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedPanel {
    timestamps: Vec<i64>,
    sensor_ids: Vec<String>,
    values: Vec<f64>,
    missing_sentinel: f64,
}

impl SpeedPanel {
    /// Builds a panel, checking shape, spacing and value invariants.
    pub fn new(
        timestamps: Vec<i64>,
        sensor_ids: Vec<String>,
        values: Vec<f64>,
        missing_sentinel: f64,
    ) -> Result<Self> {
        if sensor_ids.is_empty() {
            return Err(Error::invalid("panel needs at least one sensor"));
        }
        if values.len() != timestamps.len() * sensor_ids.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} rows x {} sensors",
                values.len(),
                timestamps.len(),
                sensor_ids.len()
            )));
        }
        check_spacing(&timestamps)?;
        let mut seen = std::collections::HashSet::with_capacity(sensor_ids.len());
        for (column, id) in sensor_ids.iter().enumerate() {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateSensor {
                    id: id.clone(),
                    column: column + 1,
                });
            }
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            let d = sensor_ids.len();
            return Err(Error::invalid(format!(
                "speed at row {}, sensor {:?} is negative or non-finite",
                pos / d,
                sensor_ids[pos % d]
            )));
        }
        Ok(Self {
            timestamps,
            sensor_ids,
            values,
            missing_sentinel,
        })
    }

    pub fn rows(&self) -> usize {
        self.timestamps.len()
    }

    pub fn n_sensors(&self) -> usize {
        self.sensor_ids.len()
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn sensor_ids(&self) -> &[String] {
        &self.sensor_ids
    }

    /// Row-major value buffer (`rows * n_sensors`).
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn missing_sentinel(&self) -> f64 {
        self.missing_sentinel
    }

    pub fn is_missing(&self, v: f64) -> bool {
        v == self.missing_sentinel
    }

    pub fn value(&self, row: usize, sensor: usize) -> f64 {
        self.values[row * self.n_sensors() + sensor]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let d = self.n_sensors();
        &self.values[row * d..(row + 1) * d]
    }

    /// Rows `start..end` as one contiguous row-major slice.
    pub fn row_block(&self, start: usize, end: usize) -> &[f64] {
        let d = self.n_sensors();
        &self.values[start * d..end * d]
    }

    /// Full time series of one sensor, missing entries included.
    pub fn column(&self, sensor: usize) -> Vec<f64> {
        self.values
            .iter()
            .skip(sensor)
            .step_by(self.n_sensors())
            .copied()
            .collect()
    }

    /// Non-missing observations of one sensor, in time order.
    pub fn observed(&self, sensor: usize) -> Vec<f64> {
        self.values
            .iter()
            .skip(sensor)
            .step_by(self.n_sensors())
            .copied()
            .filter(|v| !self.is_missing(*v))
            .collect()
    }

    pub fn sensor_index(&self, id: &str) -> Option<usize> {
        self.sensor_ids.iter().position(|s| s == id)
    }

    /// Spacing between consecutive timestamps, if the panel has two rows.
    pub fn step_seconds(&self) -> Option<i64> {
        match self.timestamps.as_slice() {
            [a, b, ..] => Some(b - a),
            _ => None,
        }
    }

    /// Sub-panel over rows `start..end`.
    pub fn slice_rows(&self, start: usize, end: usize) -> SpeedPanel {
        SpeedPanel {
            timestamps: self.timestamps[start..end].to_vec(),
            sensor_ids: self.sensor_ids.clone(),
            values: self.row_block(start, end).to_vec(),
            missing_sentinel: self.missing_sentinel,
        }
    }

    /// Sub-panel restricted to the given sensor columns.
    pub fn select_sensors(&self, sensors: &[usize]) -> Result<SpeedPanel> {
        let d = self.n_sensors();
        if let Some(bad) = sensors.iter().find(|&&s| s >= d) {
            return Err(Error::invalid(format!("sensor index {bad} out of range")));
        }
        let mut values = Vec::with_capacity(self.rows() * sensors.len());
        for r in 0..self.rows() {
            let row = self.row(r);
            values.extend(sensors.iter().map(|&s| row[s]));
        }
        SpeedPanel::new(
            self.timestamps.clone(),
            sensors.iter().map(|&s| self.sensor_ids[s].clone()).collect(),
            values,
            self.missing_sentinel,
        )
    }
}

fn check_spacing(timestamps: &[i64]) -> Result<()> {
    if timestamps.len() < 2 {
        return Ok(());
    }
    let step = timestamps[1] - timestamps[0];
    for (i, w) in timestamps.windows(2).enumerate() {
        let delta = w[1] - w[0];
        if delta <= 0 || delta != step {
            return Err(Error::NonUniformTimestamps {
                // header is line 1, first data row is line 2
                line: i as u64 + 3,
                message: format!("expected spacing {step}s, found {delta}s"),
            });
        }
    }
    if step <= 0 {
        return Err(Error::NonUniformTimestamps {
            line: 3,
            message: format!("spacing {step}s is not positive"),
        });
    }
    Ok(())
}
