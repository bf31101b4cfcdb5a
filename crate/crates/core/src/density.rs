//! Per-sensor speed densities and the significant-bimodality test.
//!
//! A sensor is flagged when its smoothed speed density has a local minimum
//! at least `min_gap` mph below the global mode and more than
//! `min_proportion` of the observations lie below that minimum.

use serde::{Deserialize, Serialize};

use crate::data::SpeedPanel;
use crate::error::{Error, Result};
use crate::parallel::par_map;

pub const DEFAULT_GRID_POINTS: usize = 512;
pub const MIN_KDE_SAMPLES: usize = 30;

/// `exp(-x^2 / 2)` underflows to zero in f64 past this many bandwidths, so
/// skipping farther samples leaves the density unchanged. A shorter cutoff
/// would flatten the low-density gap between clusters and move its minimum.
const KERNEL_CUTOFF: f64 = 38.7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BimodalityConfig {
    /// Fixed KDE bandwidth in mph; Silverman's rule when absent.
    pub bandwidth: Option<f64>,
    pub grid_points: usize,
    /// Minimum distance below the mode for a density minimum to count.
    pub min_gap: f64,
    /// Fraction of samples below a minimum needed for significance.
    pub min_proportion: f64,
}

impl Default for BimodalityConfig {
    fn default() -> Self {
        Self {
            bandwidth: None,
            grid_points: DEFAULT_GRID_POINTS,
            min_gap: 10.0,
            min_proportion: 0.1,
        }
    }
}

impl BimodalityConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(h) = self.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::invalid(format!("bandwidth must be positive, got {h}")));
            }
        }
        if self.grid_points < 3 {
            return Err(Error::invalid("density grid needs at least 3 points"));
        }
        if self.min_gap.is_nan() || self.min_gap < 0.0 || !(0.0..1.0).contains(&self.min_proportion) {
            return Err(Error::invalid("min_gap must be >= 0 and min_proportion in [0, 1)"));
        }
        Ok(())
    }
}

/// Kernel density evaluated on an even grid over `[0, max speed]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityProfile {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
    pub mode_speed: f64,
}

impl DensityProfile {
    /// Trapezoidal integral of the density over the grid.
    pub fn integral(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(g, f)| 0.5 * (g[1] - g[0]) * (f[0] + f[1]))
            .sum()
    }

    /// Grid indices of strict local maxima (plateaus reported at their low end).
    pub fn local_maxima(&self) -> Vec<usize> {
        let neg: Vec<f64> = self.density.iter().map(|v| -v).collect();
        interior_minima(&neg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Minimum {
    pub speed: f64,
    pub proportion_below: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BimodalityVerdict {
    pub sensor_id: String,
    pub significant: bool,
    pub minima: Vec<Minimum>,
    pub chosen_minimum: Option<Minimum>,
    pub mode_speed: Option<f64>,
    pub bandwidth: Option<f64>,
    /// Set when the sensor could not be classified (e.g. too few samples).
    pub unclassifiable: Option<String>,
}

impl BimodalityVerdict {
    fn unclassifiable(sensor_id: &str, reason: String) -> Self {
        Self {
            sensor_id: sensor_id.to_owned(),
            significant: false,
            minima: Vec::new(),
            chosen_minimum: None,
            mode_speed: None,
            bandwidth: None,
            unclassifiable: Some(reason),
        }
    }
}

/// Silverman's rule of thumb: `0.9 * min(std, IQR / 1.34) * n^(-1/5)`.
///
/// Falls back to the standard deviation alone when the IQR is zero.
pub fn silverman_bandwidth(samples: &[f64]) -> Result<f64> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::TooFewSamples { got: n, needed: 2 });
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let std = var.sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { std.min(iqr / 1.34) } else { std };
    let h = 0.9 * spread * (n as f64).powf(-0.2);
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::ZeroBandwidth);
    }
    Ok(h)
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn kde_fit(samples: &[f64], bandwidth: Option<f64>) -> Result<DensityProfile> {
    kde_fit_with(samples, bandwidth, DEFAULT_GRID_POINTS)
}

/// Gaussian KDE on `grid_points` even points spanning `[0, max(samples)]`.
pub fn kde_fit_with(
    samples: &[f64],
    bandwidth: Option<f64>,
    grid_points: usize,
) -> Result<DensityProfile> {
    if samples.len() < MIN_KDE_SAMPLES {
        return Err(Error::TooFewSamples {
            got: samples.len(),
            needed: MIN_KDE_SAMPLES,
        });
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("samples must be finite"));
    }
    if grid_points < 3 {
        return Err(Error::invalid("density grid needs at least 3 points"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted[0] == sorted[sorted.len() - 1] {
        return Err(Error::ZeroBandwidth);
    }
    let h = match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => return Err(Error::invalid(format!("bandwidth must be positive, got {h}"))),
        None => silverman_bandwidth(&sorted)?,
    };

    let top = sorted[sorted.len() - 1].max(0.0);
    let step = top / (grid_points - 1) as f64;
    let grid: Vec<f64> = (0..grid_points).map(|i| i as f64 * step).collect();
    let norm = 1.0 / (sorted.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let reach = KERNEL_CUTOFF * h;

    let mut lo = 0;
    let mut density = Vec::with_capacity(grid_points);
    for &g in &grid {
        while lo < sorted.len() && sorted[lo] < g - reach {
            lo += 1;
        }
        let mut sum = 0.0;
        for &x in &sorted[lo..] {
            if x > g + reach {
                break;
            }
            let u = (g - x) / h;
            sum += (-0.5 * u * u).exp();
        }
        density.push(sum * norm);
    }

    let mode_idx = argmax(&density);
    Ok(DensityProfile {
        mode_speed: grid[mode_idx],
        grid,
        density,
        bandwidth: h,
    })
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Interior indices where a run of equal values is bounded by strictly
/// larger values on both sides; each run is reported at its first index.
fn interior_minima(values: &[f64]) -> Vec<usize> {
    let mut out = Vec::new();
    let n = values.len();
    let mut i = 1;
    while i + 1 < n {
        let mut j = i;
        while j + 1 < n && values[j + 1] == values[i] {
            j += 1;
        }
        if j + 1 < n && values[i - 1] > values[i] && values[j + 1] > values[i] {
            out.push(i);
        }
        i = j + 1;
    }
    out
}

/// Speeds of density minima lying at least `min_gap` below the mode.
pub fn find_local_minima(profile: &DensityProfile, min_gap: f64) -> Vec<f64> {
    interior_minima(&profile.density)
        .into_iter()
        .map(|i| profile.grid[i])
        .filter(|&speed| speed <= profile.mode_speed - min_gap)
        .collect()
}

/// Applies the proportion test to every admissible minimum of `profile`.
pub fn classify_bimodality(
    sensor_id: &str,
    samples: &[f64],
    profile: &DensityProfile,
    config: &BimodalityConfig,
) -> BimodalityVerdict {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len().max(1) as f64;
    let minima: Vec<Minimum> = find_local_minima(profile, config.min_gap)
        .into_iter()
        .map(|speed| Minimum {
            speed,
            proportion_below: sorted.partition_point(|&x| x < speed) as f64 / n,
        })
        .collect();
    let chosen_minimum = minima
        .iter()
        .filter(|m| m.proportion_below > config.min_proportion)
        .fold(None::<Minimum>, |best, m| match best {
            Some(b) if b.proportion_below >= m.proportion_below => Some(b),
            _ => Some(*m),
        });
    BimodalityVerdict {
        sensor_id: sensor_id.to_owned(),
        significant: chosen_minimum.is_some(),
        minima,
        chosen_minimum,
        mode_speed: Some(profile.mode_speed),
        bandwidth: Some(profile.bandwidth),
        unclassifiable: None,
    }
}

/// Fits and classifies one sensor's observations.
pub fn sensor_verdict(sensor_id: &str, samples: &[f64], config: &BimodalityConfig) -> BimodalityVerdict {
    match kde_fit_with(samples, config.bandwidth, config.grid_points) {
        Ok(profile) => classify_bimodality(sensor_id, samples, &profile, config),
        Err(e) => BimodalityVerdict::unclassifiable(sensor_id, e.to_string()),
    }
}

/// One verdict per sensor, in sensor order, from each sensor's non-missing values.
///
/// Pass the training split so that the choice of congestion sensors does
/// not see test data.
pub fn bimodality_map(panel: &SpeedPanel, config: &BimodalityConfig) -> Result<Vec<BimodalityVerdict>> {
    config.validate()?;
    let sensors: Vec<usize> = (0..panel.n_sensors()).collect();
    Ok(par_map(&sensors, |&s| {
        sensor_verdict(&panel.sensor_ids()[s], &panel.observed(s), config)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn normal_draws(n: usize, mean: f64, sd: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(mean, sd).unwrap();
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    fn mixture(seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hi = Normal::<f64>::new(65.0, 2.0).unwrap();
        let lo = Normal::<f64>::new(20.0, 5.0).unwrap();
        (0..1000)
            .map(|_| {
                if rng.random_bool(0.2) {
                    lo.sample(&mut rng).max(0.1)
                } else {
                    hi.sample(&mut rng)
                }
            })
            .collect()
    }

    // Oracle: untruncated KDE on the same grid, then count -/+ sign changes
    // of the forward difference below `mode - gap`.
    fn oracle_minima(samples: &[f64], h: f64, gap: f64) -> Vec<f64> {
        let top = samples.iter().cloned().fold(f64::MIN, f64::max);
        let step = top / 511.0;
        let grid: Vec<f64> = (0..512).map(|i| i as f64 * step).collect();
        let f: Vec<f64> = grid
            .iter()
            .map(|g| samples.iter().map(|x| (-0.5 * ((g - x) / h).powi(2)).exp()).sum::<f64>())
            .collect();
        let mode = grid[(0..512).fold(0, |b, i| if f[i] > f[b] { i } else { b })];
        let diff: Vec<f64> = f.windows(2).map(|w| w[1] - w[0]).collect();
        let mut out = Vec::new();
        for i in 1..diff.len() {
            if diff[i - 1] < 0.0 && diff[i] > 0.0 && grid[i] <= mode - gap {
                out.push(grid[i]);
            }
        }
        out
    }

    #[test]
    fn unimodal_has_no_qualifying_minimum() {
        let xs = normal_draws(1000, 65.0, 2.0, 1);
        let p = kde_fit(&xs, None).unwrap();
        assert!(oracle_minima(&xs, p.bandwidth, 10.0).is_empty());
        assert!(find_local_minima(&p, 10.0).is_empty());
        let v = classify_bimodality("u", &xs, &p, &BimodalityConfig::default());
        assert!(!v.significant);
    }

    #[test]
    fn mixture_minima_match_oracle() {
        let xs = mixture(5);
        let p = kde_fit(&xs, None).unwrap();
        let expected = oracle_minima(&xs, p.bandwidth, 10.0);
        let found = find_local_minima(&p, 10.0);
        assert_eq!(found, expected);
        // the small Silverman bandwidth leaves ripples in the sparse low
        // cluster; one minimum sits in the gap between the clusters
        assert!(found.iter().any(|&m| m > 35.0 && m < 60.0), "{found:?}");
    }

    #[test]
    fn mixture_is_significant() {
        let xs = mixture(5);
        let p = kde_fit(&xs, None).unwrap();
        let v = classify_bimodality("m", &xs, &p, &BimodalityConfig::default());
        assert!(v.significant);
        let m = v.chosen_minimum.unwrap();
        let count = xs.iter().filter(|&&x| x < m.speed).count() as f64 / xs.len() as f64;
        assert_eq!(m.proportion_below, count);
        assert!((m.proportion_below - 0.2).abs() < 0.03, "{m:?}");
    }

    #[test]
    fn profile_invariants() {
        for xs in [normal_draws(1000, 65.0, 2.0, 2), mixture(9)] {
            let p = kde_fit(&xs, None).unwrap();
            assert_eq!(p.grid.len(), DEFAULT_GRID_POINTS);
            assert!(p.density.iter().all(|&d| d >= 0.0));
            assert!((p.integral() - 1.0).abs() < 0.01, "{}", p.integral());
            let max = p.density.iter().cloned().fold(0.0, f64::max);
            let at_mode = p.density[p.grid.iter().position(|&g| g == p.mode_speed).unwrap()];
            assert_eq!(at_mode, max);
        }
    }

    #[test]
    fn silverman_matches_hand_computation() {
        // n = 5, std = sqrt(2.5), IQR = 2 -> min(1.5811, 1.4925) = 1.4925
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let h = silverman_bandwidth(&xs).unwrap();
        let expected = 0.9 * (2.0 / 1.34) * 5f64.powf(-0.2);
        assert!((h - expected).abs() < 1e-12);
    }

    #[test]
    fn constant_samples_zero_bandwidth() {
        assert!(matches!(kde_fit(&[42.0; 100], None), Err(Error::ZeroBandwidth)));
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(
            kde_fit(&[1.0; 10], None),
            Err(Error::TooFewSamples { got: 10, .. })
        ));
    }

    fn profile_from(density: Vec<f64>) -> DensityProfile {
        let grid: Vec<f64> = (0..density.len()).map(|i| i as f64).collect();
        let mode = argmax(&density);
        DensityProfile {
            mode_speed: grid[mode],
            grid,
            density,
            bandwidth: 1.0,
        }
    }

    #[test]
    fn v_shape_minimum() {
        // minimum at 5, mode at 20
        let mut d: Vec<f64> = (0..=5).map(|i| 10.0 - i as f64).collect();
        d.extend((6..=20).map(|i| 5.0 + (i - 5) as f64));
        d.extend([10.0, 5.0]);
        let p = profile_from(d);
        assert_eq!(p.mode_speed, 20.0);
        assert_eq!(find_local_minima(&p, 10.0), vec![5.0]);
        assert!(find_local_minima(&p, 16.0).is_empty());
    }

    #[test]
    fn monotone_has_no_minima() {
        let p = profile_from((0..50).map(|i| i as f64).collect());
        assert!(find_local_minima(&p, 10.0).is_empty());
        let p = profile_from((0..50).map(|i| 50.0 - i as f64).collect());
        assert!(find_local_minima(&p, 0.0).is_empty());
    }

    #[test]
    fn plateau_reported_at_low_end() {
        let p = profile_from(vec![5.0, 1.0, 1.0, 1.0, 4.0, 6.0, 8.0, 9.0, 9.5, 9.0, 9.9, 10.0, 12.0, 30.0, 2.0]);
        assert_eq!(find_local_minima(&p, 10.0), vec![1.0]);
    }

    #[test]
    fn map_flags_unclassifiable() {
        let hi = normal_draws(400, 65.0, 2.0, 4);
        let mut values = Vec::new();
        for x in &hi {
            values.extend([*x, 0.0]);
        }
        let panel = SpeedPanel::new(
            (0..400).map(|i| i * 300).collect(),
            vec!["ok".into(), "dead".into()],
            values,
            0.0,
        )
        .unwrap();
        let v = bimodality_map(&panel, &BimodalityConfig::default()).unwrap();
        assert_eq!(v[0].sensor_id, "ok");
        assert!(v[0].unclassifiable.is_none());
        assert!(!v[1].significant);
        assert!(v[1].unclassifiable.is_some());
    }
}
