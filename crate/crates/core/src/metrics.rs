//! Error metrics, naive baselines, model evaluation, lookback/horizon
//! sweeps and plot-data export.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, Array3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{CountScaling, DayClass, SnapshotSeries, WindowDataset};
use crate::error::{Error, Result};
use crate::graph::MultiGraphWindow;
use crate::model::{ModelConfig, ModelParams};
use crate::train::{predict, split_train_test, train, TrainConfig, TrainHistory};
use crate::{MINUTES_PER_DAY, MOVEMENTS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitSpace {
    Normalized,
    Raw,
}

impl std::fmt::Display for UnitSpace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            UnitSpace::Normalized => "normalized",
            UnitSpace::Raw => "raw",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub horizon: usize,
    pub lookback: usize,
    pub mse: f64,
    pub rmse: f64,
    pub mae: f64,
    /// Percent; `None` when every true value is zero.
    pub mape: Option<f64>,
    pub unit_space: UnitSpace,
    pub sample_count: usize,
    /// Elements left out of MAPE because their true value is zero.
    pub excluded_zero_count: usize,
}

impl MetricsReport {
    pub fn with_window(mut self, lookback: usize, horizon: usize) -> Self {
        self.lookback = lookback;
        self.horizon = horizon;
        self
    }
}

/// MSE, RMSE, MAE and MAPE over pooled samples. MAPE skips zero truths and
/// reports how many were skipped.
pub fn compute_metrics(pred: &[f64], truth: &[f64], unit_space: UnitSpace) -> Result<MetricsReport> {
    if pred.len() != truth.len() {
        return Err(Error::shape("compute_metrics", truth.len(), pred.len()));
    }
    if pred.is_empty() {
        return Err(Error::InvalidInput("no samples to score".into()));
    }
    let n = pred.len() as f64;
    let (mut se, mut ae, mut ape) = (0.0, 0.0, 0.0);
    let mut excluded = 0usize;
    for (&p, &t) in pred.iter().zip(truth) {
        let d = p - t;
        se += d * d;
        ae += d.abs();
        if t == 0.0 {
            excluded += 1;
        } else {
            ape += (d / t).abs();
        }
    }
    let mse = se / n;
    let used = pred.len() - excluded;
    Ok(MetricsReport {
        horizon: 0,
        lookback: 0,
        mse,
        rmse: mse.sqrt(),
        mae: ae / n,
        mape: (used > 0).then(|| 100.0 * ape / used as f64),
        unit_space,
        sample_count: pred.len(),
        excluded_zero_count: excluded,
    })
}

/// Repeats the last observed counts. `count_columns[j]` is the feature
/// column holding movement `j`, so the result is in feature space.
pub fn persistence_baseline(window: &MultiGraphWindow<'_>, count_columns: &[usize]) -> Result<Array2<f64>> {
    if count_columns.len() != MOVEMENTS {
        return Err(Error::shape("persistence count columns", MOVEMENTS, count_columns.len()));
    }
    let last = &window.last().node_features;
    if let Some(&c) = count_columns.iter().find(|&&c| c >= last.ncols()) {
        return Err(Error::InvalidInput(format!("count column {c} out of range")));
    }
    Ok(Array2::from_shape_fn((last.nrows(), MOVEMENTS), |(v, j)| last[[v, count_columns[j]]]))
}

/// Mean raw count per (day class, minute of day, node, movement) over the
/// training minutes.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoricalAverage {
    /// `[class][minute_of_day]` sums, `1440 x n x 12` per class.
    sums: [Array3<f64>; 2],
    counts: [Vec<usize>; 2],
    class_mean: [Option<Array2<f64>>; 2],
}

impl HistoricalAverage {
    /// Fits on every minute of `series` strictly before `train_end_minute`.
    pub fn fit(series: &SnapshotSeries, train_end_minute: usize) -> Result<Self> {
        let n = series.node_count();
        let mut sums = [
            Array3::zeros((MINUTES_PER_DAY, n, MOVEMENTS)),
            Array3::zeros((MINUTES_PER_DAY, n, MOVEMENTS)),
        ];
        let mut counts = [vec![0usize; MINUTES_PER_DAY], vec![0usize; MINUTES_PER_DAY]];
        let first = series.first_minute();
        let mut any = false;
        for (k, raw) in series.raw_counts.iter().enumerate() {
            let minute = first + k;
            if minute >= train_end_minute {
                break;
            }
            let c = series.day_class[k] as usize;
            let mut cell = sums[c].index_axis_mut(ndarray::Axis(0), minute % MINUTES_PER_DAY);
            cell += raw;
            counts[c][minute % MINUTES_PER_DAY] += 1;
            any = true;
        }
        if !any {
            return Err(Error::InvalidInput("no training minutes for the historical average".into()));
        }
        let class_mean = [0, 1].map(|c| {
            let total: usize = counts[c].iter().sum();
            (total > 0).then(|| sums[c].sum_axis(ndarray::Axis(0)) / total as f64)
        });
        Ok(Self {
            sums,
            counts,
            class_mean,
        })
    }

    /// Prediction for a cell and whether the class-wide fallback was used.
    /// A class never seen in training falls back to the other class.
    pub fn predict(&self, minute: usize, class: DayClass) -> (Array2<f64>, bool) {
        let c = class as usize;
        let m = minute % MINUTES_PER_DAY;
        if self.counts[c][m] > 0 {
            let cell = self.sums[c].index_axis(ndarray::Axis(0), m);
            return (cell.mapv(|v| v / self.counts[c][m] as f64), false);
        }
        let mean = self.class_mean[c]
            .as_ref()
            .or(self.class_mean[1 - c].as_ref())
            .expect("fit guarantees at least one class");
        (mean.clone(), true)
    }
}

/// Scores of one method in both unit spaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodScores {
    pub method: String,
    pub raw: MetricsReport,
    pub normalized: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub lookback: usize,
    pub horizon: usize,
    pub methods: Vec<MethodScores>,
    /// Test cells where the historical average had to fall back.
    pub historical_fallbacks: usize,
}

impl EvaluationReport {
    pub fn method(&self, name: &str) -> Option<&MethodScores> {
        self.methods.iter().find(|m| m.method == name)
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("lookback {}  horizon {}\n", self.lookback, self.horizon);
        let _ = writeln!(
            out,
            "{:<12} {:<10} {:>12} {:>12} {:>12} {:>10} {:>9}",
            "method", "space", "MSE", "RMSE", "MAE", "MAPE(%)", "excluded"
        );
        for m in &self.methods {
            for r in [&m.raw, &m.normalized] {
                let _ = writeln!(
                    out,
                    "{:<12} {:<10} {:>12.6} {:>12.6} {:>12.6} {:>10} {:>9}",
                    m.method,
                    r.unit_space.to_string(),
                    r.mse,
                    r.rmse,
                    r.mae,
                    fmt_mape(r.mape),
                    r.excluded_zero_count
                );
            }
        }
        out
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for m in &self.methods {
            for r in [&m.raw, &m.normalized] {
                let rec = serde_json::json!({ "method": m.method, "report": r });
                out.push_str(&rec.to_string());
                out.push('\n');
            }
        }
        out
    }
}

fn fmt_mape(m: Option<f64>) -> String {
    m.map_or_else(|| "undefined".into(), |v| format!("{v:.4}"))
}

/// Raw-space truth and predictions for a set of test windows.
#[derive(Debug, Clone, PartialEq)]
pub struct TestPredictions {
    pub minutes: Vec<usize>,
    pub truth: Vec<Array2<f64>>,
    pub model: Vec<Array2<f64>>,
    pub persistence: Vec<Array2<f64>>,
    pub historical: Vec<Array2<f64>>,
    pub historical_fallbacks: usize,
}

fn flatten(a: &[Array2<f64>]) -> Vec<f64> {
    a.iter().flat_map(|x| x.iter().copied()).collect()
}

fn normalized(a: &[Array2<f64>], scaling: &CountScaling) -> Vec<Array2<f64>> {
    a.iter().map(|x| scaling.normalize(x.view())).collect()
}

/// Model, persistence and historical-average predictions in raw counts.
pub fn predict_test(
    dataset: &WindowDataset,
    test_idx: &[usize],
    params: &ModelParams,
    historical: &HistoricalAverage,
) -> Result<TestPredictions> {
    let scaling = &dataset.series().scaling;
    let model = predict(dataset, test_idx, params)?
        .into_iter()
        .map(|p| scaling.denormalize(p.view()))
        .collect();
    let mut fallbacks = 0;
    let mut out = TestPredictions {
        minutes: Vec::with_capacity(test_idx.len()),
        truth: Vec::with_capacity(test_idx.len()),
        model,
        persistence: Vec::with_capacity(test_idx.len()),
        historical: Vec::with_capacity(test_idx.len()),
        historical_fallbacks: 0,
    };
    for &i in test_idx {
        let minute = dataset.target_minute(i);
        out.minutes.push(minute);
        out.truth.push(dataset.raw_target(i).to_owned());
        out.persistence.push(dataset.raw_last_observed(i).to_owned());
        let (h, fell_back) = historical.predict(minute, dataset.target_class(i));
        fallbacks += usize::from(fell_back);
        out.historical.push(h);
    }
    if fallbacks > 0 {
        log::warn!("historical average fell back to the class mean for {fallbacks} test window(s)");
    }
    out.historical_fallbacks = fallbacks;
    Ok(out)
}

/// Scores model and baselines on the test windows in both unit spaces.
pub fn evaluate(
    dataset: &WindowDataset,
    test_idx: &[usize],
    params: &ModelParams,
    historical: &HistoricalAverage,
) -> Result<(EvaluationReport, TestPredictions)> {
    let preds = predict_test(dataset, test_idx, params, historical)?;
    let report = score(&preds, &dataset.series().scaling, dataset.lookback(), dataset.horizon())?;
    Ok((report, preds))
}

pub fn score(preds: &TestPredictions, scaling: &CountScaling, lookback: usize, horizon: usize) -> Result<EvaluationReport> {
    let truth_raw = flatten(&preds.truth);
    let truth_norm = flatten(&normalized(&preds.truth, scaling));
    let mut methods = Vec::new();
    for (name, p) in [
        ("mgcnn", &preds.model),
        ("persistence", &preds.persistence),
        ("historical", &preds.historical),
    ] {
        let raw = compute_metrics(&flatten(p), &truth_raw, UnitSpace::Raw)?.with_window(lookback, horizon);
        let norm = compute_metrics(&flatten(&normalized(p, scaling)), &truth_norm, UnitSpace::Normalized)?
            .with_window(lookback, horizon);
        methods.push(MethodScores {
            method: name.into(),
            raw,
            normalized: norm,
        });
    }
    Ok(EvaluationReport {
        lookback,
        horizon,
        methods,
        historical_fallbacks: preds.historical_fallbacks,
    })
}

/// Shared settings for training runs inside sweeps and evaluations.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub train_days: usize,
    pub total_days: usize,
}

/// One sweep configuration's outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lookback: usize,
    pub horizon: usize,
    pub raw: MetricsReport,
    pub normalized: MetricsReport,
    pub epochs_run: usize,
}

/// Which quantity a sweep varies; it heads the first table column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Lookback,
    Horizon,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    /// `M|N  MSE  RMSE  MAE  MAPE` table in the chosen unit space.
    pub fn to_table(&self, space: UnitSpace) -> String {
        let key = match self.axis {
            SweepAxis::Lookback => "M",
            SweepAxis::Horizon => "N",
        };
        let mut out = format!("{space} units\n");
        let _ = writeln!(out, "{:>4} {:>12} {:>12} {:>12} {:>10}", key, "MSE", "RMSE", "MAE", "MAPE(%)");
        for row in &self.rows {
            let r = match space {
                UnitSpace::Raw => &row.raw,
                UnitSpace::Normalized => &row.normalized,
            };
            let k = match self.axis {
                SweepAxis::Lookback => row.lookback,
                SweepAxis::Horizon => row.horizon,
            };
            let _ = writeln!(
                out,
                "{:>4} {:>12.6} {:>12.6} {:>12.6} {:>10}",
                k,
                r.mse,
                r.rmse,
                r.mae,
                fmt_mape(r.mape)
            );
        }
        out
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            out.push_str(&serde_json::to_string(row).expect("sweep rows serialize"));
            out.push('\n');
        }
        out
    }
}

fn run_one(base: &WindowDataset, lookback: usize, horizon: usize, exp: &Experiment) -> Result<(SweepRow, TrainHistory)> {
    let ds = base.rewindow(lookback, horizon)?;
    let split = split_train_test(&ds, exp.train_days, exp.total_days)?;
    let model = ModelConfig { lookback, ..exp.model };
    let (params, history) = train(&ds, &split.train, &model, &exp.train)?;
    let ha = HistoricalAverage::fit(ds.series(), exp.train_days * MINUTES_PER_DAY)?;
    let (report, _) = evaluate(&ds, &split.test, &params, &ha)?;
    let m = report.method("mgcnn").ok_or_else(|| Error::Invariant("model row missing".into()))?;
    Ok((
        SweepRow {
            lookback,
            horizon,
            raw: m.raw.clone(),
            normalized: m.normalized.clone(),
            epochs_run: history.epochs.len(),
        },
        history,
    ))
}

fn sweep(base: &WindowDataset, configs: Vec<(usize, usize)>, exp: &Experiment, axis: SweepAxis) -> Result<SweepReport> {
    let rows = configs
        .par_iter()
        .map(|&(m, n)| run_one(base, m, n, exp).map(|(row, _)| row))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport { axis, rows })
}

pub const LOOKBACKS: [usize; 6] = [10, 20, 30, 40, 50, 60];
pub const HORIZONS: [usize; 5] = [1, 2, 3, 4, 5];

/// Trains one model per lookback with the same seed and settings.
pub fn sweep_lookback(base: &WindowDataset, lookbacks: &[usize], horizon: usize, exp: &Experiment) -> Result<SweepReport> {
    sweep(base, lookbacks.iter().map(|&m| (m, horizon)).collect(), exp, SweepAxis::Lookback)
}

/// Trains one model per horizon with the same seed and settings. Warns when
/// the error at the shortest horizon exceeds that at the longest.
pub fn sweep_horizon(base: &WindowDataset, lookback: usize, horizons: &[usize], exp: &Experiment) -> Result<SweepReport> {
    let report = sweep(base, horizons.iter().map(|&n| (lookback, n)).collect(), exp, SweepAxis::Horizon)?;
    if let (Some(first), Some(last)) = (report.rows.first(), report.rows.last()) {
        if first.raw.mse > last.raw.mse {
            log::warn!(
                "MSE at N={} ({:.4}) exceeds MSE at N={} ({:.4})",
                first.horizon,
                first.raw.mse,
                last.horizon,
                last.raw.mse
            );
        }
    }
    Ok(report)
}

/// Writes `minute,truth,prediction` lines sorted by minute.
pub fn export_series(minutes: &[usize], truth: &[f64], pred: &[f64], path: &Path) -> Result<()> {
    if minutes.len() != truth.len() || truth.len() != pred.len() {
        return Err(Error::shape(
            "export_series",
            minutes.len(),
            format!("{} truths / {} predictions", truth.len(), pred.len()),
        ));
    }
    let mut order: Vec<usize> = (0..minutes.len()).collect();
    order.sort_by_key(|&i| minutes[i]);
    let mut out = String::from("minute,truth,prediction\n");
    for i in order {
        let _ = writeln!(out, "{},{:?},{:?}", minutes[i], truth[i], pred[i]);
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Parses a file written by [`export_series`].
pub fn read_series(path: &Path) -> Result<Vec<(usize, f64, f64)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let err = |line: usize, msg: &str| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    };
    let mut lines = text.lines();
    if lines.next() != Some("minute,truth,prediction") {
        return Err(err(1, "bad header"));
    }
    lines
        .enumerate()
        .map(|(k, l)| {
            let mut f = l.split(',');
            let (Some(m), Some(t), Some(p), None) = (f.next(), f.next(), f.next(), f.next()) else {
                return Err(err(k + 2, "expected three fields"));
            };
            Ok((
                m.parse().map_err(|_| err(k + 2, "bad minute"))?,
                t.parse().map_err(|_| err(k + 2, "bad truth"))?,
                p.parse().map_err(|_| err(k + 2, "bad prediction"))?,
            ))
        })
        .collect()
}
