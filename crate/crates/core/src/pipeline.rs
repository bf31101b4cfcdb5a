//! Subcommand implementations. Every command writes its artifacts under
//! `RunConfig::out_dir` and returns the paths it wrote; output bytes depend
//! only on the configuration and the data.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baseline::{predict, train, TrainedModel};
use crate::changepoint::{detect_congestion, CongestionMask, MaskRle, SensorDetection};
use crate::config::{sub_seed, RunConfig, STAGE_TRAIN};
use crate::data::{
    fit_norm, generate_synthetic, load_csv, make_windows, split_chronological, NormStats, SpeedPanel,
};
use crate::density::{bimodality_map, kde_fit_with, BimodalityVerdict};
use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::metrics::{build_report, markdown_tables, EvalReport};
use crate::parallel::par_map;

/// The configured panel: the CSV when `data` is set, otherwise the synthetic one.
pub fn load_panel(cfg: &RunConfig) -> Result<SpeedPanel> {
    match &cfg.data {
        Some(p) => load_csv(p),
        None => generate_synthetic(&cfg.synthetic),
    }
}

/// Chronological splits plus normalization fitted on the training split.
pub struct Prepared {
    pub train: SpeedPanel,
    pub val: SpeedPanel,
    pub test: SpeedPanel,
    pub norm: NormStats,
}

pub fn prepare(cfg: &RunConfig, panel: &SpeedPanel) -> Result<Prepared> {
    let (train, val, test) = split_chronological(panel, cfg.split, cfg.input_len + cfg.horizon_len)?;
    let norm = fit_norm(&train)?;
    Ok(Prepared {
        train,
        val,
        test,
        norm,
    })
}

/// File-name-safe form of a loss label.
pub fn file_stem(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

fn write(path: PathBuf, contents: &[u8], written: &mut Vec<PathBuf>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::invalid(format!("csv write: {e}"));
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::invalid(format!("csv write: {e}")))
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s.into_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unclassifiable {
    pub sensor_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BimodalitySummary {
    pub sensors: usize,
    pub significant: usize,
    pub fraction: f64,
    pub bandwidth: Option<f64>,
    pub unclassifiable: Vec<Unclassifiable>,
}

impl BimodalitySummary {
    pub fn from_verdicts(verdicts: &[BimodalityVerdict], bandwidth: Option<f64>) -> Self {
        let significant = verdicts.iter().filter(|v| v.significant).count();
        Self {
            sensors: verdicts.len(),
            significant,
            fraction: if verdicts.is_empty() {
                0.0
            } else {
                significant as f64 / verdicts.len() as f64
            },
            bandwidth,
            unclassifiable: verdicts
                .iter()
                .filter_map(|v| {
                    v.unclassifiable.as_ref().map(|r| Unclassifiable {
                        sensor_id: v.sensor_id.clone(),
                        reason: r.clone(),
                    })
                })
                .collect(),
        }
    }
}

fn write_bimodality(
    dir: &Path,
    verdicts: &[BimodalityVerdict],
    cfg: &RunConfig,
    written: &mut Vec<PathBuf>,
) -> Result<BimodalitySummary> {
    let rows = verdicts.iter().map(|v| {
        let m = v.chosen_minimum.as_ref();
        vec![
            v.sensor_id.clone(),
            v.significant.to_string(),
            m.map_or(String::new(), |m| m.speed.to_string()),
            m.map_or(String::new(), |m| m.proportion_below.to_string()),
        ]
    });
    let csv = csv_bytes(&["sensor_id", "significant", "minimum_speed", "proportion_below"], rows)?;
    write(dir.join("bimodality.csv"), &csv, written)?;
    let summary = BimodalitySummary::from_verdicts(verdicts, cfg.bimodality.bandwidth);
    write(dir.join("bimodality_summary.json"), &json_bytes(&summary)?, written)?;
    Ok(summary)
}

fn write_changepoints(
    dir: &Path,
    panel: &SpeedPanel,
    detections: &[SensorDetection],
    written: &mut Vec<PathBuf>,
) -> Result<()> {
    let mut rows = Vec::new();
    for d in detections {
        for &i in &d.change_points.indices {
            rows.push(vec![
                d.change_points.sensor_id.clone(),
                i.to_string(),
                panel.timestamps()[i].to_string(),
            ]);
        }
    }
    let csv = csv_bytes(&["sensor_id", "index", "timestamp"], rows)?;
    write(dir.join("changepoints.csv"), &csv, written)?;
    let masks: Vec<MaskRle> = detections.iter().map(|d| d.mask.to_rle()).collect();
    write(dir.join("congestion_masks.json"), &json_bytes(&masks)?, written)
}

/// Per-sensor bimodality of the whole configured panel.
pub fn cmd_bimodality(cfg: &RunConfig) -> Result<(BimodalitySummary, Vec<PathBuf>)> {
    let panel = load_panel(cfg)?;
    let verdicts = bimodality_map(&panel, &cfg.bimodality)?;
    let mut written = Vec::new();
    let summary = write_bimodality(&cfg.out_dir, &verdicts, cfg, &mut written)?;
    Ok((summary, written))
}

/// Change points and interval masks of the whole configured panel, gated by
/// its own bimodality verdicts.
pub fn cmd_changepoints(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let panel = load_panel(cfg)?;
    let verdicts = bimodality_map(&panel, &cfg.bimodality)?;
    let detections = detect_congestion(&panel, &verdicts, &cfg.changepoint)?;
    let mut written = Vec::new();
    write_changepoints(&cfg.out_dir, &panel, &detections, &mut written)?;
    Ok(written)
}

/// KDE curve and 1 mph histogram counts of one sensor.
pub fn cmd_histogram(cfg: &RunConfig, sensor_id: &str) -> Result<Vec<PathBuf>> {
    let panel = load_panel(cfg)?;
    let s = panel
        .sensor_index(sensor_id)
        .ok_or_else(|| Error::UnknownSensor(sensor_id.to_owned()))?;
    let samples = panel.observed(s);
    let profile = kde_fit_with(&samples, cfg.bimodality.bandwidth, cfg.bimodality.grid_points)?;
    let stem = file_stem(sensor_id);
    let mut written = Vec::new();

    let rows = profile
        .grid
        .iter()
        .zip(&profile.density)
        .map(|(g, d)| vec![g.to_string(), d.to_string()]);
    write(
        cfg.out_dir.join(format!("histogram_{stem}_density.csv")),
        &csv_bytes(&["speed", "density"], rows)?,
        &mut written,
    )?;

    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min).floor();
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max).floor();
    let bins = (hi - lo) as usize + 1;
    let mut counts = vec![0usize; bins];
    for &x in &samples {
        counts[((x.floor() - lo) as usize).min(bins - 1)] += 1;
    }
    let rows = counts.iter().enumerate().map(|(i, c)| {
        let start = lo + i as f64;
        vec![start.to_string(), (start + 1.0).to_string(), c.to_string()]
    });
    write(
        cfg.out_dir.join(format!("histogram_{stem}_counts.csv")),
        &csv_bytes(&["bin_start", "bin_end", "count"], rows)?,
        &mut written,
    )?;
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossStatus {
    pub loss: String,
    pub ok: bool,
    pub error: Option<String>,
    pub best_epoch: Option<usize>,
    pub epochs_run: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub losses: Vec<LossStatus>,
    pub failures: usize,
}

impl RunSummary {
    fn new(losses: Vec<LossStatus>) -> Self {
        let failures = losses.iter().filter(|l| !l.ok).count();
        Self { losses, failures }
    }
}

/// Outcome of a multi-loss command. `summary.failures > 0` means some
/// requested artifacts are missing.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub written: Vec<PathBuf>,
    pub summary: RunSummary,
    pub reports: Vec<EvalReport>,
}

fn train_all(cfg: &RunConfig, prep: &Prepared) -> Result<Vec<Result<TrainedModel>>> {
    let tr = make_windows(&prep.train, cfg.input_len, cfg.horizon_len, 1)?;
    let va = make_windows(&prep.val, cfg.input_len, cfg.horizon_len, 1)?;
    let seed = sub_seed(cfg.seed, STAGE_TRAIN);
    Ok(par_map(&cfg.losses, |loss: &LossSpec| {
        train(&tr, &va, prep.norm, &cfg.train.for_loss(loss.clone(), seed))
    }))
}

fn model_path(cfg: &RunConfig, loss: &LossSpec) -> PathBuf {
    cfg.out_dir.join("models").join(format!("{}.json", file_stem(&loss.label())))
}

fn status_ok(loss: &LossSpec, m: Option<&TrainedModel>) -> LossStatus {
    LossStatus {
        loss: loss.label(),
        ok: true,
        error: None,
        best_epoch: m.map(|m| m.best_epoch),
        epochs_run: m.map(|m| m.history.len()),
    }
}

fn status_err(loss: &LossSpec, e: &Error) -> LossStatus {
    LossStatus {
        loss: loss.label(),
        ok: false,
        error: Some(e.to_string()),
        best_epoch: None,
        epochs_run: None,
    }
}

/// Trains one baseline per configured loss and writes `models/<loss>.json`.
pub fn cmd_train(cfg: &RunConfig) -> Result<RunOutcome> {
    let panel = load_panel(cfg)?;
    let prep = prepare(cfg, &panel)?;
    let mut written = Vec::new();
    let mut statuses = Vec::new();
    for (loss, res) in cfg.losses.iter().zip(train_all(cfg, &prep)?) {
        match res.and_then(|m| {
            write(model_path(cfg, loss), m.to_json()?.as_bytes(), &mut written)?;
            Ok(m)
        }) {
            Ok(m) => statuses.push(status_ok(loss, Some(&m))),
            Err(e) => statuses.push(status_err(loss, &e)),
        }
    }
    let summary = RunSummary::new(statuses);
    write(cfg.out_dir.join("train_summary.json"), &json_bytes(&summary)?, &mut written)?;
    Ok(RunOutcome {
        written,
        summary,
        reports: Vec::new(),
    })
}

/// Ground-truth congestion masks over the test split, gated by bimodality of
/// the training split.
fn test_masks(cfg: &RunConfig, prep: &Prepared) -> Result<(Vec<BimodalityVerdict>, Vec<SensorDetection>)> {
    let verdicts = bimodality_map(&prep.train, &cfg.bimodality)?;
    let detections = detect_congestion(&prep.test, &verdicts, &cfg.changepoint)?;
    Ok((verdicts, detections))
}

fn report_for(cfg: &RunConfig, prep: &Prepared, masks: &[CongestionMask], m: &TrainedModel, label: &str) -> Result<EvalReport> {
    let te = make_windows(&prep.test, cfg.input_len, cfg.horizon_len, 1)?;
    let forecast = predict(&m.model, &te)?;
    build_report(label, &forecast, &prep.test, masks, &cfg.horizons, &cfg.var_levels, cfg.var_scope)
}

fn write_reports(
    cfg: &RunConfig,
    reports: &[EvalReport],
    statuses: Vec<LossStatus>,
    written: &mut Vec<PathBuf>,
) -> Result<RunSummary> {
    for r in reports {
        let stem = file_stem(&r.loss);
        let dir = cfg.out_dir.join("reports");
        write(dir.join(format!("{stem}.json")), r.to_json()?.as_bytes(), written)?;
        write(dir.join(format!("{stem}.md")), r.to_markdown().as_bytes(), written)?;
    }
    if !reports.is_empty() {
        let comparison = compare(reports, &cfg.var_levels);
        write(cfg.out_dir.join("comparison.json"), &json_bytes(&comparison)?, written)?;
        let mut md = markdown_tables(reports);
        md.push('\n');
        md.push_str(&comparison_markdown(&comparison));
        write(cfg.out_dir.join("comparison.md"), md.as_bytes(), written)?;
    }
    let summary = RunSummary::new(statuses);
    write(cfg.out_dir.join("summary.json"), &json_bytes(&summary)?, written)?;
    Ok(summary)
}

/// Evaluates the models written by `train` on the test split.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<RunOutcome> {
    let panel = load_panel(cfg)?;
    let prep = prepare(cfg, &panel)?;
    let (_, detections) = test_masks(cfg, &prep)?;
    let masks: Vec<CongestionMask> = detections.into_iter().map(|d| d.mask).collect();
    let mut written = Vec::new();
    let mut statuses = Vec::new();
    let mut reports = Vec::new();
    for loss in &cfg.losses {
        let path = model_path(cfg, loss);
        let res = fs::read_to_string(&path)
            .map_err(|e| Error::io(&path, e))
            .and_then(|s| TrainedModel::from_json(&s))
            .and_then(|m| report_for(cfg, &prep, &masks, &m, &loss.label()).map(|r| (m, r)));
        match res {
            Ok((m, r)) => {
                statuses.push(status_ok(loss, Some(&m)));
                reports.push(r);
            }
            Err(e) => statuses.push(status_err(loss, &e)),
        }
    }
    let summary = write_reports(cfg, &reports, statuses, &mut written)?;
    Ok(RunOutcome {
        written,
        summary,
        reports,
    })
}

/// split -> normalize -> bimodality (train) -> change points (test) ->
/// train per loss -> predict -> reports and comparison.
pub fn cmd_pipeline(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let panel = load_panel(cfg)?;
    let prep = prepare(cfg, &panel)?;
    let mut written = Vec::new();
    write(cfg.out_dir.join("config.json"), cfg.to_json()?.as_bytes(), &mut written)?;

    let (verdicts, detections) = test_masks(cfg, &prep)?;
    write_bimodality(&cfg.out_dir, &verdicts, cfg, &mut written)?;
    write_changepoints(&cfg.out_dir, &prep.test, &detections, &mut written)?;
    let masks: Vec<CongestionMask> = detections.into_iter().map(|d| d.mask).collect();

    let mut statuses = Vec::new();
    let mut reports = Vec::new();
    for (loss, res) in cfg.losses.iter().zip(train_all(cfg, &prep)?) {
        let res = res.and_then(|m| {
            write(model_path(cfg, loss), m.to_json()?.as_bytes(), &mut written)?;
            let r = report_for(cfg, &prep, &masks, &m, &loss.label())?;
            Ok((m, r))
        });
        match res {
            Ok((m, r)) => {
                statuses.push(status_ok(loss, Some(&m)));
                reports.push(r);
            }
            Err(e) => statuses.push(status_err(loss, &e)),
        }
    }
    let summary = write_reports(cfg, &reports, statuses, &mut written)?;
    Ok(RunOutcome {
        written,
        summary,
        reports,
    })
}

/// Marks for one metric against a reference: strictly lower, within 0.1, or neither.
pub fn mark(value: Option<f64>, reference: Option<f64>) -> &'static str {
    match (value, reference) {
        (Some(v), Some(r)) if v < r => "✓✓",
        (Some(v), Some(r)) if v <= r + 0.1 => "✓",
        _ => "",
    }
}

pub const COMPARISON_COLUMNS: [&str; 5] = [
    "overall MAE",
    "overall RMSE",
    "congestion MAE",
    "congestion RMSE",
    "extreme VaR",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub step: usize,
    pub loss: String,
    pub vs_mae: Vec<String>,
    pub vs_mse: Vec<String>,
}

fn comparison_cells(r: &EvalReport, step: usize, alpha: Option<f64>) -> [Option<f64>; 5] {
    let Some(h) = r.horizon(step) else {
        return [None; 5];
    };
    let var = alpha.and_then(|a| h.var.iter().find(|v| v.alpha == a)).and_then(|v| v.value);
    [h.overall.mae, h.overall.rmse, h.congestion.mae, h.congestion.rmse, var]
}

/// Every non-reference loss against the MAE and MSE runs at each horizon.
/// "Extreme VaR" uses the highest configured level.
pub fn compare(reports: &[EvalReport], alphas: &[f64]) -> Vec<ComparisonRow> {
    let extreme = alphas.iter().cloned().fold(None, |m: Option<f64>, a| Some(m.map_or(a, |m| m.max(a))));
    let find = |label: &str| reports.iter().find(|r| r.loss == label);
    let (mae, mse) = (find("MAE"), find("MSE"));
    let steps: Vec<usize> = reports.first().map_or(Vec::new(), |r| r.horizons.iter().map(|h| h.step).collect());
    let mut rows = Vec::new();
    for &step in &steps {
        for r in reports.iter().filter(|r| r.loss != "MAE" && r.loss != "MSE") {
            let cells = comparison_cells(r, step, extreme);
            let against = |reference: Option<&EvalReport>| -> Vec<String> {
                let refs = reference.map_or([None; 5], |x| comparison_cells(x, step, extreme));
                cells.iter().zip(refs).map(|(&v, rf)| mark(v, rf).to_owned()).collect()
            };
            rows.push(ComparisonRow {
                step,
                loss: r.loss.clone(),
                vs_mae: against(mae),
                vs_mse: against(mse),
            });
        }
    }
    rows
}

pub fn comparison_markdown(rows: &[ComparisonRow]) -> String {
    let mut md = String::from("### Benchmarked against MAE and MSE\n\n| Step | Loss |");
    for group in ["MAE", "MSE"] {
        for c in COMPARISON_COLUMNS {
            md.push_str(&format!(" vs {group}: {c} |"));
        }
    }
    md.push_str("\n|---|---|");
    md.push_str(&":---:|".repeat(2 * COMPARISON_COLUMNS.len()));
    md.push('\n');
    for r in rows {
        md.push_str(&format!("| {} | {} |", r.step, r.loss));
        for c in r.vs_mae.iter().chain(&r.vs_mse) {
            md.push_str(&format!(" {c} |"));
        }
        md.push('\n');
    }
    md.push_str("\n✓✓: strictly lower than the reference; ✓: at most 0.1 above it.\n");
    md
}
