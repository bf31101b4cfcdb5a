//! Offline change-point detection with an RBF kernel cost and a linear
//! penalty, solved exactly by the pruned dynamic program, plus the
//! change-point intervals that define the congestion evaluation scope.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::SpeedPanel;
use crate::density::BimodalityVerdict;
use crate::error::{Error, Result};
use crate::parallel::par_map;

/// Upper bound on pairs used by the median heuristic.
pub const MAX_MEDIAN_PAIRS: usize = 10_000;
const MEDIAN_PAIR_SEED: u64 = 0x6d65_6469_616e;

pub const DEFAULT_RADIUS: usize = 2;
pub const NOT_CLASSIFIED: &str = "not congested-classified";

/// Relative tolerance under which two objective values count as tied.
const TIE_RTOL: f64 = 1e-10;

#[inline]
pub(crate) fn ties(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIE_RTOL * (1.0 + a.abs().max(b.abs()))
}

/// Default linear penalty `3 ln n`.
pub fn default_penalty(n: usize) -> f64 {
    3.0 * (n as f64).ln()
}

/// Median heuristic for the RBF kernel scale: the median of pairwise squared
/// differences, over all pairs or a fixed-seed sample of
/// [`MAX_MEDIAN_PAIRS`] pairs for long series.
///
/// Falls back to a unit scale when the median is zero but the series is not
/// constant.
pub fn rbf_bandwidth(series: &[f64]) -> Result<f64> {
    let n = series.len();
    if n < 2 {
        return Err(Error::invalid("series needs at least two points"));
    }
    if series.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("series must be finite"));
    }
    if series.iter().all(|&x| x == series[0]) {
        return Err(Error::ZeroScale);
    }
    let total = n * (n - 1) / 2;
    let mut sq = Vec::with_capacity(total.min(MAX_MEDIAN_PAIRS));
    if total <= MAX_MEDIAN_PAIRS {
        for i in 0..n {
            for j in i + 1..n {
                sq.push((series[i] - series[j]).powi(2));
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(MEDIAN_PAIR_SEED);
        while sq.len() < MAX_MEDIAN_PAIRS {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            if i != j {
                sq.push((series[i] - series[j]).powi(2));
            }
        }
    }
    sq.sort_by(f64::total_cmp);
    let m = sq.len();
    let median = if m % 2 == 1 {
        sq[m / 2]
    } else {
        0.5 * (sq[m / 2 - 1] + sq[m / 2])
    };
    Ok(if median > 0.0 { median } else { 1.0 })
}

#[inline]
fn rbf(x: f64, y: f64, scale: f64) -> f64 {
    (-(x - y) * (x - y) / scale).exp()
}

/// Kernel cost of `series[start..end]`:
/// `sum_i k(x_i, x_i) - (1/len) sum_{i,j} k(x_i, x_j)`.
pub fn segment_cost(series: &[f64], start: usize, end: usize, scale: f64) -> Result<f64> {
    if start >= end || end > series.len() {
        return Err(Error::EmptySegment { start, end });
    }
    if scale.is_nan() || scale <= 0.0 {
        return Err(Error::ZeroScale);
    }
    let seg = &series[start..end];
    let mut gram = 0.0;
    for &a in seg {
        for &b in seg {
            gram += rbf(a, b, scale);
        }
    }
    let len = seg.len() as f64;
    Ok((len - gram / len).max(0.0))
}

/// Optimal segmentation: change-point indices and the penalized objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    pub indices: Vec<usize>,
    pub objective: f64,
}

/// Detected change points of one sensor's series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangePointSet {
    pub sensor_id: String,
    /// First index of each new segment, strictly increasing in `(0, series_len)`.
    pub indices: Vec<usize>,
    pub series_len: usize,
}

/// Minimizes `sum(segment costs) + penalty * #change points` over all
/// segmentations of `series` using the median-heuristic kernel scale.
pub fn pelt_detect(series: &[f64], penalty: f64) -> Result<Segmentation> {
    if series.len() < 4 {
        return Err(Error::invalid(format!(
            "change-point detection needs at least 4 points, got {}",
            series.len()
        )));
    }
    let scale = rbf_bandwidth(series)?;
    pelt_with_scale(series, penalty, scale)
}

/// Pruned exact dynamic program for a given kernel scale.
///
/// Ties within a relative 1e-10 prefer fewer change points, then the
/// lexicographically smallest index set.
pub fn pelt_with_scale(series: &[f64], penalty: f64, scale: f64) -> Result<Segmentation> {
    if !(penalty > 0.0 && penalty.is_finite()) {
        return Err(Error::invalid(format!("penalty must be positive, got {penalty}")));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::ZeroScale);
    }
    let n = series.len();
    if n == 0 {
        return Err(Error::EmptySegment { start: 0, end: 0 });
    }

    // best[t]: optimum over series[..t]; parent[t]: start of its last segment.
    let mut best = vec![0.0f64; n + 1];
    let mut count = vec![0usize; n + 1];
    let mut parent = vec![0usize; n + 1];
    best[0] = -penalty;

    // (segment start, Gram sum over series[start..t])
    let mut candidates: Vec<(usize, f64)> = vec![(0, 0.0)];
    let mut column: Vec<f64> = Vec::with_capacity(n);
    let mut costs: Vec<f64> = Vec::with_capacity(n);

    for t in 1..=n {
        let newest = series[t - 1];
        let first = candidates[0].0;
        // suffix sums of k(x_i, x_{t-1}) for i in [first, t-1)
        column.clear();
        column.resize(t - first, 0.0);
        let mut acc = 0.0;
        for i in (first..t - 1).rev() {
            acc += rbf(series[i], newest, scale);
            column[i - first] = acc;
        }

        costs.clear();
        for (s, gram) in candidates.iter_mut() {
            *gram += 2.0 * column[*s - first] + 1.0;
            let len = (t - *s) as f64;
            costs.push((len - *gram / len).max(0.0));
        }
        // select the optimum among candidates with the tie rule
        let mut chosen = 0usize;
        for k in 1..candidates.len() {
            let (s_new, s_old) = (candidates[k].0, candidates[chosen].0);
            let v_new = best[s_new] + costs[k];
            let v_old = best[s_old] + costs[chosen];
            if ties(v_new, v_old) {
                let c_new = count[s_new] + usize::from(s_new > 0);
                let c_old = count[s_old] + usize::from(s_old > 0);
                if c_new < c_old
                    || (c_new == c_old && extended(&parent, s_new) < extended(&parent, s_old))
                {
                    chosen = k;
                }
            } else if v_new < v_old {
                chosen = k;
            }
        }
        let s_best = candidates[chosen].0;
        best[t] = best[s_best] + costs[chosen] + penalty;
        count[t] = count[s_best] + usize::from(s_best > 0);
        parent[t] = s_best;

        // prune starts that can never again be optimal (or tied)
        let bound = best[t];
        let mut k = 0;
        candidates.retain(|&(s, _)| {
            let v = best[s] + costs[k];
            k += 1;
            v <= bound || ties(v, bound)
        });
        candidates.push((t, 0.0));
    }

    Ok(Segmentation {
        indices: path(&parent, n),
        objective: best[n],
    })
}

/// Change points of the best segmentation whose last segment starts at `s`.
fn extended(parent: &[usize], s: usize) -> Vec<usize> {
    let mut p = path(parent, s);
    if s > 0 {
        p.push(s);
    }
    p
}

/// Change points of the optimal segmentation of `series[..t]`.
fn path(parent: &[usize], mut t: usize) -> Vec<usize> {
    let mut out = Vec::new();
    while t > 0 {
        let s = parent[t];
        if s > 0 {
            out.push(s);
        }
        t = s;
    }
    out.reverse();
    out
}

/// Per-sensor boolean timeline, true inside a change-point interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CongestionMask {
    pub sensor_id: String,
    pub mask: Vec<bool>,
    /// Why the mask is all-false without detection having run, if so.
    pub flag: Option<String>,
}

impl CongestionMask {
    pub fn empty(sensor_id: &str, len: usize, flag: impl Into<String>) -> Self {
        Self {
            sensor_id: sensor_id.to_owned(),
            mask: vec![false; len],
            flag: Some(flag.into()),
        }
    }

    pub fn popcount(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    /// Half-open `[start, end)` runs of `true`.
    pub fn runs(&self) -> Vec<[usize; 2]> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < self.mask.len() {
            if self.mask[i] {
                let start = i;
                while i < self.mask.len() && self.mask[i] {
                    i += 1;
                }
                out.push([start, i]);
            } else {
                i += 1;
            }
        }
        out
    }

    pub fn to_rle(&self) -> MaskRle {
        MaskRle {
            sensor_id: self.sensor_id.clone(),
            len: self.mask.len(),
            runs: self.runs(),
            flag: self.flag.clone(),
        }
    }

    pub fn from_rle(rle: &MaskRle) -> Result<Self> {
        let mut mask = vec![false; rle.len];
        for &[start, end] in &rle.runs {
            if start >= end || end > rle.len {
                return Err(Error::invalid(format!(
                    "bad run [{start}, {end}) for mask of length {}",
                    rle.len
                )));
            }
            mask[start..end].iter_mut().for_each(|b| *b = true);
        }
        Ok(Self {
            sensor_id: rle.sensor_id.clone(),
            mask,
            flag: rle.flag.clone(),
        })
    }
}

/// Run-length encoded mask, the on-disk JSON form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskRle {
    pub sensor_id: String,
    pub len: usize,
    pub runs: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<String>,
}

/// Marks `[cp - radius, cp + radius]` around every change point, clamped to the series.
pub fn expand_intervals(cps: &ChangePointSet, radius: usize) -> CongestionMask {
    let n = cps.series_len;
    let mut mask = vec![false; n];
    for &cp in &cps.indices {
        let lo = cp.saturating_sub(radius);
        let hi = (cp + radius).min(n.saturating_sub(1));
        for b in mask.iter_mut().take(hi + 1).skip(lo) {
            *b = true;
        }
    }
    CongestionMask {
        sensor_id: cps.sensor_id.clone(),
        mask,
        flag: None,
    }
}

/// Fills missing entries by linear interpolation between observed
/// neighbours and by nearest value at the ends. `None` if nothing is observed.
pub fn interpolate_missing(values: &[f64], is_missing: impl Fn(f64) -> bool) -> Option<Vec<f64>> {
    let observed: Vec<usize> = (0..values.len()).filter(|&i| !is_missing(values[i])).collect();
    let (&first, &last) = (observed.first()?, observed.last()?);
    let mut out = values.to_vec();
    out[..first].iter_mut().for_each(|v| *v = values[first]);
    out[last + 1..].iter_mut().for_each(|v| *v = values[last]);
    for w in observed.windows(2) {
        let (a, b) = (w[0], w[1]);
        let span = (b - a) as f64;
        for (i, v) in out.iter_mut().enumerate().take(b).skip(a + 1) {
            let frac = (i - a) as f64 / span;
            *v = values[a] + frac * (values[b] - values[a]);
        }
    }
    Some(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChangePointConfig {
    /// Linear penalty per change point; `3 ln n` when absent.
    pub penalty: Option<f64>,
    /// Half-width of each change-point interval in time steps.
    pub radius: usize,
}

impl Default for ChangePointConfig {
    fn default() -> Self {
        Self {
            penalty: None,
            radius: DEFAULT_RADIUS,
        }
    }
}

/// Change points and interval mask of one sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorDetection {
    pub change_points: ChangePointSet,
    pub mask: CongestionMask,
}

/// Detects change points on the ground-truth series of every significant
/// sensor; other sensors get flagged all-false masks.
///
/// Missing entries are interpolated for detection only.
pub fn detect_congestion(
    panel: &SpeedPanel,
    verdicts: &[BimodalityVerdict],
    config: &ChangePointConfig,
) -> Result<Vec<SensorDetection>> {
    if verdicts.len() != panel.n_sensors()
        || verdicts
            .iter()
            .zip(panel.sensor_ids())
            .any(|(v, id)| &v.sensor_id != id)
    {
        return Err(Error::ShapeMismatch(
            "verdicts must cover the panel's sensors in order".into(),
        ));
    }
    if let Some(p) = config.penalty {
        if !(p > 0.0 && p.is_finite()) {
            return Err(Error::invalid(format!("penalty must be positive, got {p}")));
        }
    }
    let n = panel.rows();
    let sensors: Vec<usize> = (0..panel.n_sensors()).collect();
    Ok(par_map(&sensors, |&s| {
        let id = &panel.sensor_ids()[s];
        let flagged = |flag: String| SensorDetection {
            change_points: ChangePointSet {
                sensor_id: id.clone(),
                indices: Vec::new(),
                series_len: n,
            },
            mask: CongestionMask::empty(id, n, flag),
        };
        if !verdicts[s].significant {
            return flagged(NOT_CLASSIFIED.to_owned());
        }
        let Some(series) = interpolate_missing(&panel.column(s), |v| panel.is_missing(v)) else {
            return flagged("no observations".to_owned());
        };
        let penalty = config.penalty.unwrap_or_else(|| default_penalty(n));
        match pelt_detect(&series, penalty) {
            Ok(seg) => {
                let change_points = ChangePointSet {
                    sensor_id: id.clone(),
                    indices: seg.indices,
                    series_len: n,
                };
                let mask = expand_intervals(&change_points, config.radius);
                SensorDetection {
                    change_points,
                    mask,
                }
            }
            Err(e) => flagged(format!("detection failed: {e}")),
        }
    }))
}

/// Masks only; see [`detect_congestion`].
pub fn congestion_masks(
    panel: &SpeedPanel,
    verdicts: &[BimodalityVerdict],
    config: &ChangePointConfig,
) -> Result<Vec<CongestionMask>> {
    Ok(detect_congestion(panel, verdicts, config)?
        .into_iter()
        .map(|d| d.mask)
        .collect())
}
