//! Masked point metrics at fixed horizon steps and Value-at-Risk of the
//! absolute-error distribution.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::changepoint::CongestionMask;
use crate::data::SpeedPanel;
use crate::error::{Error, Result};

pub const DEFAULT_HORIZONS: [usize; 3] = [3, 6, 12];
pub const DEFAULT_ALPHAS: [f64; 3] = [0.95, 0.98, 0.99];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Overall,
    #[default]
    Congestion,
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::Overall => "overall",
            Scope::Congestion => "congestion",
        })
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "overall" => Ok(Scope::Overall),
            "congestion" => Ok(Scope::Congestion),
            other => Err(Error::invalid(format!("unknown scope {other:?} (congestion|overall)"))),
        }
    }
}

/// Denormalized forecasts for consecutive windows of one panel.
///
/// Sample `i` covers panel rows `target_starts[i] .. target_starts[i] + horizon`
/// and is stored time-major (`horizon x n_sensors`), like a window target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSet {
    horizon: usize,
    n_sensors: usize,
    target_starts: Vec<usize>,
    values: Vec<f64>,
}

impl ForecastSet {
    pub fn new(horizon: usize, n_sensors: usize, target_starts: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if values.len() != target_starts.len() * horizon * n_sensors {
            return Err(Error::ShapeMismatch(format!(
                "{} samples x {horizon} steps x {n_sensors} sensors needs {} values, got {}",
                target_starts.len(),
                target_starts.len() * horizon * n_sensors,
                values.len()
            )));
        }
        Ok(Self {
            horizon,
            n_sensors,
            target_starts,
            values,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_sensors(&self) -> usize {
        self.n_sensors
    }

    pub fn len(&self) -> usize {
        self.target_starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target_starts.is_empty()
    }

    pub fn target_starts(&self) -> &[usize] {
        &self.target_starts
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Forecast of sample `i` at 1-based step `h` for `sensor`.
    pub fn at(&self, i: usize, h: usize, sensor: usize) -> f64 {
        self.values[(i * self.horizon + h - 1) * self.n_sensors + sensor]
    }

    /// Forecasts that equal the panel's own values (missing entries included).
    pub fn oracle(panel: &SpeedPanel, horizon: usize, target_starts: Vec<usize>) -> Result<Self> {
        let d = panel.n_sensors();
        let mut values = Vec::with_capacity(target_starts.len() * horizon * d);
        for &s in &target_starts {
            if s + horizon > panel.rows() {
                return Err(Error::ShapeMismatch(format!("window at row {s} runs past the panel")));
            }
            values.extend_from_slice(panel.row_block(s, s + horizon));
        }
        Self::new(horizon, d, target_starts, values)
    }
}

/// Absolute errors over a scope, with the targets they were measured against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDistribution {
    pub scope: Scope,
    pub errors: Vec<f64>,
    pub targets: Vec<f64>,
}

/// Which entries a distribution draws from.
#[derive(Debug, Clone, Copy)]
pub enum Selection<'a> {
    All,
    /// One mask per sensor, indexed by panel row.
    Masks(&'a [CongestionMask]),
}

impl Selection<'_> {
    fn scope(&self) -> Scope {
        match self {
            Selection::All => Scope::Overall,
            Selection::Masks(_) => Scope::Congestion,
        }
    }
}

/// Collects `|y - y_hat|` at exactly step `h` over non-missing, selected entries.
pub fn masked_errors(
    forecast: &ForecastSet,
    panel: &SpeedPanel,
    h: usize,
    selection: Selection<'_>,
) -> Result<ErrorDistribution> {
    if h == 0 || h > forecast.horizon {
        return Err(Error::invalid(format!(
            "horizon step {h} outside 1..={}",
            forecast.horizon
        )));
    }
    let d = panel.n_sensors();
    if forecast.n_sensors != d {
        return Err(Error::ShapeMismatch(format!(
            "forecast has {} sensors, panel {d}",
            forecast.n_sensors
        )));
    }
    if let Selection::Masks(masks) = selection {
        if masks.len() != d || masks.iter().any(|m| m.mask.len() != panel.rows()) {
            return Err(Error::ShapeMismatch("one full-length mask per sensor required".into()));
        }
    }
    let mut errors = Vec::new();
    let mut targets = Vec::new();
    for (i, &start) in forecast.target_starts.iter().enumerate() {
        let row = start + h - 1;
        if row >= panel.rows() {
            return Err(Error::ShapeMismatch(format!("target row {row} past the panel")));
        }
        for s in 0..d {
            let y = panel.value(row, s);
            if panel.is_missing(y) {
                continue;
            }
            if let Selection::Masks(masks) = selection {
                if !masks[s].mask[row] {
                    continue;
                }
            }
            errors.push((y - forecast.at(i, h, s)).abs());
            targets.push(y);
        }
    }
    if errors.is_empty() {
        return Err(Error::EmptySelection);
    }
    Ok(ErrorDistribution {
        scope: selection.scope(),
        errors,
        targets,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointMetrics {
    pub mae: f64,
    pub rmse: f64,
    /// Percent; `None` when every target is zero.
    pub mape: Option<f64>,
}

pub fn mae_rmse_mape(dist: &ErrorDistribution) -> Result<PointMetrics> {
    if dist.errors.is_empty() {
        return Err(Error::EmptySelection);
    }
    if dist.targets.len() != dist.errors.len() {
        return Err(Error::ShapeMismatch("errors and targets differ in length".into()));
    }
    let n = dist.errors.len() as f64;
    let mae = dist.errors.iter().sum::<f64>() / n;
    let rmse = (dist.errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    let mut ape = 0.0;
    let mut m = 0usize;
    for (e, y) in dist.errors.iter().zip(&dist.targets) {
        if *y != 0.0 {
            ape += e / y.abs();
            m += 1;
        }
    }
    Ok(PointMetrics {
        mae,
        rmse,
        mape: (m > 0).then(|| 100.0 * ape / m as f64),
    })
}

/// Smallest observed error `e` with `#{E >= e} / n <= 1 - alpha`.
///
/// When no observed error qualifies (fewer than `1 / (1 - alpha)` errors),
/// the largest error is returned.
pub fn var_at(dist: &ErrorDistribution, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if dist.errors.is_empty() {
        return Err(Error::EmptySelection);
    }
    let mut sorted = dist.errors.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let bound = 1.0 - alpha;
    let mut i = 0;
    while i < n {
        // i is the first index of value sorted[i], so n - i errors are >= it
        if (n - i) as f64 / n as f64 <= bound {
            return Ok(sorted[i]);
        }
        let v = sorted[i];
        while i < n && sorted[i] == v {
            i += 1;
        }
    }
    Ok(sorted[n - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScopeMetrics {
    pub count: usize,
    pub mae: Option<f64>,
    pub rmse: Option<f64>,
    pub mape: Option<f64>,
}

impl ScopeMetrics {
    fn from_dist(dist: Option<&ErrorDistribution>) -> Result<Self> {
        match dist {
            None => Ok(Self {
                count: 0,
                mae: None,
                rmse: None,
                mape: None,
            }),
            Some(d) => {
                let m = mae_rmse_mape(d)?;
                Ok(Self {
                    count: d.errors.len(),
                    mae: Some(m.mae),
                    rmse: Some(m.rmse),
                    mape: m.mape,
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarCell {
    pub alpha: f64,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonReport {
    pub step: usize,
    pub minutes: Option<i64>,
    pub overall: ScopeMetrics,
    pub congestion: ScopeMetrics,
    pub var: Vec<VarCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub loss: String,
    pub var_scope: Scope,
    pub horizons: Vec<HorizonReport>,
}

impl EvalReport {
    pub fn horizon(&self, step: usize) -> Option<&HorizonReport> {
        self.horizons.iter().find(|h| h.step == step)
    }

    /// RMSE >= MAE in every populated cell and VaR non-decreasing in alpha.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        for h in &self.horizons {
            for (name, s) in [("overall", &h.overall), ("congestion", &h.congestion)] {
                if let (Some(mae), Some(rmse)) = (s.mae, s.rmse) {
                    if rmse < mae * (1.0 - 1e-12) {
                        return Err(format!("step {}: {name} RMSE {rmse} < MAE {mae}", h.step));
                    }
                }
            }
            if h.congestion.count > h.overall.count {
                return Err(format!("step {}: congestion count exceeds overall", h.step));
            }
            let mut cells: Vec<&VarCell> = h.var.iter().collect();
            cells.sort_by(|a, b| a.alpha.total_cmp(&b.alpha));
            for w in cells.windows(2) {
                if let (Some(a), Some(b)) = (w[0].value, w[1].value) {
                    if b < a {
                        return Err(format!("step {}: VaR decreases from alpha {} to {}", h.step, w[0].alpha, w[1].alpha));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn to_markdown(&self) -> String {
        markdown_tables(std::slice::from_ref(self))
    }
}

/// Builds the overall/congestion/VaR report at each horizon step.
///
/// `masks` holds one congestion mask per sensor over the rows of `panel`.
/// Empty scopes produce `None` cells rather than errors.
pub fn build_report(
    label: &str,
    forecast: &ForecastSet,
    panel: &SpeedPanel,
    masks: &[CongestionMask],
    horizons: &[usize],
    alphas: &[f64],
    var_scope: Scope,
) -> Result<EvalReport> {
    let optional = |r: Result<ErrorDistribution>| match r {
        Ok(d) => Ok(Some(d)),
        Err(Error::EmptySelection) => Ok(None),
        Err(e) => Err(e),
    };
    let minutes_per_step = panel.step_seconds().map(|s| s / 60);
    let mut out = Vec::with_capacity(horizons.len());
    for &h in horizons {
        let overall = optional(masked_errors(forecast, panel, h, Selection::All))?;
        let congestion = optional(masked_errors(forecast, panel, h, Selection::Masks(masks)))?;
        let var_source = match var_scope {
            Scope::Overall => overall.as_ref(),
            Scope::Congestion => congestion.as_ref(),
        };
        let var = alphas
            .iter()
            .map(|&alpha| {
                Ok(VarCell {
                    alpha,
                    value: var_source.map(|d| var_at(d, alpha)).transpose()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(HorizonReport {
            step: h,
            minutes: minutes_per_step.map(|m| m * h as i64),
            overall: ScopeMetrics::from_dist(overall.as_ref())?,
            congestion: ScopeMetrics::from_dist(congestion.as_ref())?,
            var,
        });
    }
    Ok(EvalReport {
        loss: label.to_owned(),
        var_scope,
        horizons: out,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_owned(), |x| format!("{x:.2}"))
}

fn horizon_title(h: &HorizonReport) -> String {
    match h.minutes {
        Some(m) => format!("{m} min"),
        None => format!("step {}", h.step),
    }
}

/// Three tables (overall, congestion, VaR) with one row per report. Columns
/// follow the horizons of the first report.
pub fn markdown_tables(reports: &[EvalReport]) -> String {
    let Some(first) = reports.first() else {
        return String::new();
    };
    let mut md = String::new();
    for (title, pick) in [
        ("Overall", Scope::Overall),
        ("Congestion (change-point intervals)", Scope::Congestion),
    ] {
        md.push_str(&format!("### {title}\n\n| Loss |"));
        for h in &first.horizons {
            let t = horizon_title(h);
            md.push_str(&format!(" {t} MAE | {t} RMSE | {t} MAPE (%) |"));
        }
        md.push_str("\n|---|");
        md.push_str(&"---:|".repeat(3 * first.horizons.len()));
        md.push('\n');
        for r in reports {
            md.push_str(&format!("| {} |", r.loss));
            for h in &r.horizons {
                let s = match pick {
                    Scope::Overall => &h.overall,
                    Scope::Congestion => &h.congestion,
                };
                md.push_str(&format!(" {} | {} | {} |", cell(s.mae), cell(s.rmse), cell(s.mape)));
            }
            md.push('\n');
        }
        md.push('\n');
    }
    md.push_str(&format!("### VaR of absolute error ({} scope)\n\n| Loss |", first.var_scope));
    for h in &first.horizons {
        for v in &h.var {
            md.push_str(&format!(" {} {}% |", horizon_title(h), v.alpha * 100.0));
        }
    }
    md.push_str("\n|---|");
    md.push_str(&"---:|".repeat(first.horizons.iter().map(|h| h.var.len()).sum()));
    md.push('\n');
    for r in reports {
        md.push_str(&format!("| {} |", r.loss));
        for h in &r.horizons {
            for v in &h.var {
                md.push_str(&format!(" {} |", cell(v.value)));
            }
        }
        md.push('\n');
    }
    md
}
