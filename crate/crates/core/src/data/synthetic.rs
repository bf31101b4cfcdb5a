use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{SpeedPanel, DEFAULT_STEP_SECONDS, MISSING_SENTINEL};
use crate::error::{Error, Result};

/// 2012-03-01T00:00:00Z, the first timestamp of generated panels.
const SYNTHETIC_EPOCH: i64 = 1_330_560_000;

/// Parameters of the two-regime (free-flow / congested) speed generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_sensors: usize,
    pub n_steps: usize,
    pub free_flow_mean: f64,
    pub free_flow_std: f64,
    pub congested_mean: f64,
    pub congested_std: f64,
    /// Per-step probability of switching free-flow -> congested.
    pub p_enter: f64,
    /// Per-step probability of switching congested -> free-flow.
    pub p_exit: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_sensors: 8,
            n_steps: 20_000,
            free_flow_mean: 65.0,
            free_flow_std: 3.0,
            congested_mean: 25.0,
            congested_std: 6.0,
            p_enter: 0.01,
            p_exit: 0.05,
            seed: 7,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sensors == 0 || self.n_steps == 0 {
            return Err(Error::invalid("synthetic panel needs sensors and steps"));
        }
        if !(0.0..1.0).contains(&self.p_enter) || !(0.0..1.0).contains(&self.p_exit) {
            return Err(Error::invalid("switch probabilities must lie in [0, 1)"));
        }
        if self.congested_mean.partial_cmp(&self.free_flow_mean) != Some(std::cmp::Ordering::Less) {
            return Err(Error::invalid("congested mean must be below free-flow mean"));
        }
        if !(self.free_flow_std > 0.0 && self.congested_std > 0.0) {
            return Err(Error::invalid("regime standard deviations must be positive"));
        }
        Ok(())
    }

    /// Long-run fraction of time spent congested.
    pub fn stationary_congested(&self) -> f64 {
        let total = self.p_enter + self.p_exit;
        if total == 0.0 {
            0.0
        } else {
            self.p_enter / total
        }
    }
}

/// Generated panel plus the hidden regime path of every sensor.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub panel: SpeedPanel,
    /// `congested[sensor][step]`.
    pub congested: Vec<Vec<bool>>,
}

impl SyntheticData {
    /// Steps at which the regime differs from the previous step.
    pub fn transitions(&self, sensor: usize) -> Vec<usize> {
        let path = &self.congested[sensor];
        (1..path.len()).filter(|&t| path[t] != path[t - 1]).collect()
    }
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SpeedPanel> {
    generate_synthetic_labeled(config).map(|d| d.panel)
}

/// Per sensor, a two-state Markov chain selects the regime and the speed is
/// drawn from that regime's normal law, clamped to `[0, ff_mean + 4 ff_std]`.
/// Each sensor uses its own ChaCha stream so output is a pure function of
/// the config.
pub fn generate_synthetic_labeled(config: &SyntheticConfig) -> Result<SyntheticData> {
    config.validate()?;
    let free = Normal::new(config.free_flow_mean, config.free_flow_std)
        .map_err(|e| Error::invalid(e.to_string()))?;
    let jam = Normal::new(config.congested_mean, config.congested_std)
        .map_err(|e| Error::invalid(e.to_string()))?;
    let ceiling = config.free_flow_mean + 4.0 * config.free_flow_std;

    let (n, d) = (config.n_steps, config.n_sensors);
    let mut values = vec![MISSING_SENTINEL; n * d];
    let mut congested = Vec::with_capacity(d);
    for s in 0..d {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(s as u64);
        let mut state = rng.random_bool(config.stationary_congested());
        let mut path = Vec::with_capacity(n);
        for t in 0..n {
            if t > 0 {
                let p = if state { config.p_exit } else { config.p_enter };
                if rng.random_bool(p) {
                    state = !state;
                }
            }
            let draw = if state { jam.sample(&mut rng) } else { free.sample(&mut rng) };
            values[t * d + s] = draw.clamp(0.0, ceiling);
            path.push(state);
        }
        congested.push(path);
    }

    let panel = SpeedPanel::new(
        (0..n as i64).map(|i| SYNTHETIC_EPOCH + i * DEFAULT_STEP_SECONDS).collect(),
        (0..d).map(|i| format!("S{i:03}")).collect(),
        values,
        MISSING_SENTINEL,
    )?;
    Ok(SyntheticData { panel, congested })
}
