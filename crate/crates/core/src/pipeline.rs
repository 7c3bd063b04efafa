//! Ingestion and preprocessing of per-intersection CSV telemetry.
//!
//! Stages, in order: [`ingest_csv`] (with gap filling), [`drop_occupancy`],
//! [`iqr_outlier_replace`] on every attribute except the day class,
//! [`prune_collinear`] per intersection, a majority vote for the global kept
//! set, z-score normalization fitted on training rows, and [`assemble`] into
//! a [`WindowDataset`].
//!
//! Attributes are stored as `attributes x minutes` matrices.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{CountScaling, DayClass, SnapshotSeries, WindowDataset};
use crate::error::{Error, Result};
use crate::graph::{build_snapshot, CorridorTopology, GraphSnapshot, Heading};
use crate::spectral::SpectralConfig;
use crate::{MINUTES_PER_DAY, MOVEMENTS};

pub const BOUNDS: [&str; 4] = ["NB", "SB", "EB", "WB"];
pub const TURNS: [&str; 3] = ["L", "T", "R"];

/// Raw schema width: 11 measures x 12 movements plus the class column.
pub const RAW_WIDTH: usize = 133;
/// Width after the occupancy measures are removed (A1..A85).
pub const CLEAN_WIDTH: usize = 85;
/// Index of the class attribute in the 85-wide schema (A85).
pub const CLASS_ATTR: usize = 84;

/// Per-minute measures, in canonical column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Measure {
    Count,
    Speed,
    ArrGreen,
    ArrRed,
    ArrYellow,
    GreenTime,
    RedTime,
    Occ,
    OccGreen,
    OccRed,
    OccYellow,
}

impl Measure {
    pub const ALL: [Measure; 11] = [
        Measure::Count,
        Measure::Speed,
        Measure::ArrGreen,
        Measure::ArrRed,
        Measure::ArrYellow,
        Measure::GreenTime,
        Measure::RedTime,
        Measure::Occ,
        Measure::OccGreen,
        Measure::OccRed,
        Measure::OccYellow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Measure::Count => "count",
            Measure::Speed => "speed",
            Measure::ArrGreen => "arr_green",
            Measure::ArrRed => "arr_red",
            Measure::ArrYellow => "arr_yellow",
            Measure::GreenTime => "green_time",
            Measure::RedTime => "red_time",
            Measure::Occ => "occ",
            Measure::OccGreen => "occ_green",
            Measure::OccRed => "occ_red",
            Measure::OccYellow => "occ_yellow",
        }
    }

    pub fn is_occupancy(self) -> bool {
        matches!(self, Measure::Occ | Measure::OccGreen | Measure::OccRed | Measure::OccYellow)
    }

    /// Gaps in these measures are filled with zero; the rest carry forward.
    pub fn fills_with_zero(self) -> bool {
        !matches!(self, Measure::Speed | Measure::GreenTime | Measure::RedTime)
    }
}

/// `bound * 3 + turn`, e.g. EB thru is 7.
pub fn movement_index(bound: usize, turn: usize) -> usize {
    bound * 3 + turn
}

pub fn movement_name(movement: usize) -> String {
    format!("{}_{}", BOUNDS[movement / 3], TURNS[movement % 3])
}

/// The 133 raw column names in canonical order.
pub fn raw_attribute_names() -> Vec<String> {
    let mut names: Vec<String> = Measure::ALL
        .iter()
        .flat_map(|m| (0..MOVEMENTS).map(move |mv| format!("{}_{}", m.name(), movement_name(mv))))
        .collect();
    names.push("class".into());
    names
}

/// The 85 retained names; index `i` is attribute `A{i+1}`.
pub fn clean_attribute_names() -> Vec<String> {
    let mut names: Vec<String> = Measure::ALL
        .iter()
        .filter(|m| !m.is_occupancy())
        .flat_map(|m| (0..MOVEMENTS).map(move |mv| format!("{}_{}", m.name(), movement_name(mv))))
        .collect();
    names.push("class".into());
    names
}

/// Measure behind a clean attribute index, `None` for the class column.
pub fn clean_measure(attr: usize) -> Option<Measure> {
    let kept: Vec<Measure> = Measure::ALL.iter().copied().filter(|m| !m.is_occupancy()).collect();
    kept.get(attr / MOVEMENTS).copied().filter(|_| attr < CLASS_ATTR)
}

/// Targets are the twelve counts, A1..A12.
pub fn is_target(attr: usize) -> bool {
    attr < MOVEMENTS
}

/// Clean-schema index of the speed of a movement (A13..A24).
pub fn speed_attr(movement: usize) -> usize {
    MOVEMENTS + movement
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawIntersectionSeries {
    pub intersection_id: String,
    pub first_minute: usize,
    pub attribute_names: Vec<String>,
    /// `attributes x minutes`.
    pub attributes: Array2<f64>,
}

impl RawIntersectionSeries {
    pub fn len(&self) -> usize {
        self.attributes.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.ncols() == 0
    }

    pub fn minutes(&self) -> Range<usize> {
        self.first_minute..self.first_minute + self.len()
    }
}

/// Minutes that were missing from an input file and filled in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GapReport {
    pub intersection_id: String,
    pub filled_minutes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub series: Vec<RawIntersectionSeries>,
    pub gaps: Vec<GapReport>,
}

pub const DEFAULT_GAP_LIMIT: usize = 60;

struct Builder {
    id: String,
    first_minute: usize,
    last_minute: usize,
    columns: Vec<Vec<f64>>,
    filled: Vec<usize>,
}

impl Builder {
    fn push(&mut self, minute: usize, row: Vec<f64>, gap_limit: usize, path: &Path, line: usize) -> Result<()> {
        if minute <= self.last_minute {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("minute {minute} for {} is not after {}", self.id, self.last_minute),
            });
        }
        let gap = minute - self.last_minute - 1;
        if gap > gap_limit {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!(
                    "{} has a gap of {gap} minutes before minute {minute}, over the limit of {gap_limit}",
                    self.id
                ),
            });
        }
        if gap > 0 {
            let last: Vec<f64> = self.columns.last().cloned().unwrap_or_default();
            let measures: Vec<Option<Measure>> = (0..RAW_WIDTH)
                .map(|a| Measure::ALL.get(a / MOVEMENTS).copied().filter(|_| a < RAW_WIDTH - 1))
                .collect();
            let filler: Vec<f64> = last
                .iter()
                .zip(&measures)
                .map(|(&v, m)| match m {
                    Some(m) if m.fills_with_zero() => 0.0,
                    _ => v,
                })
                .collect();
            for g in 1..=gap {
                self.filled.push(self.last_minute + g);
                self.columns.push(filler.clone());
            }
        }
        self.columns.push(row);
        self.last_minute = minute;
        Ok(())
    }

    fn finish(self) -> (RawIntersectionSeries, GapReport) {
        let t = self.columns.len();
        let mut attributes = Array2::zeros((RAW_WIDTH, t));
        for (j, col) in self.columns.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                attributes[[i, j]] = *v;
            }
        }
        (
            RawIntersectionSeries {
                intersection_id: self.id.clone(),
                first_minute: self.first_minute,
                attribute_names: raw_attribute_names(),
                attributes,
            },
            GapReport {
                intersection_id: self.id,
                filled_minutes: self.filled,
            },
        )
    }
}

/// Reads per-intersection CSV files.
///
/// Header: `minute,intersection_id,` followed by the 133 attribute names in
/// any order. Rows for one intersection must have increasing minutes; gaps
/// of up to `gap_limit` minutes are filled (zero for counts, arrivals and
/// occupancy, carry-forward for speed, signal times and class) and listed in
/// the returned gap reports.
pub fn ingest_csv(paths: &[PathBuf], gap_limit: usize) -> Result<Ingested> {
    let canonical = raw_attribute_names();
    let mut builders: Vec<Builder> = Vec::new();
    let mut by_id: BTreeMap<String, usize> = BTreeMap::new();

    for path in paths {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| csv_error(path, e))?;
        let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: path.clone(),
            line,
            msg,
        };
        if header.get(0) != Some("minute") || header.get(1) != Some("intersection_id") {
            return Err(parse_err(1, "header must start with minute,intersection_id".into()));
        }
        let mut position = vec![usize::MAX; RAW_WIDTH];
        for (col, name) in header.iter().enumerate().skip(2) {
            let idx = canonical
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| parse_err(1, format!("unknown attribute {name:?}")))?;
            if position[idx] != usize::MAX {
                return Err(parse_err(1, format!("duplicate attribute {name:?}")));
            }
            position[idx] = col;
        }
        if let Some(missing) = position.iter().position(|&p| p == usize::MAX) {
            return Err(parse_err(1, format!("missing attribute {:?}", canonical[missing])));
        }

        let mut seen_here: Vec<String> = Vec::new();
        for (k, record) in reader.records().enumerate() {
            let line = k + 2;
            let record = record.map_err(|e| csv_error(path, e))?;
            if record.len() != RAW_WIDTH + 2 {
                return Err(parse_err(line, format!("expected {} fields, found {}", RAW_WIDTH + 2, record.len())));
            }
            let minute: usize = record[0]
                .parse()
                .map_err(|_| parse_err(line, format!("bad minute {:?}", &record[0])))?;
            let id = record[1].to_string();
            if id.is_empty() {
                return Err(parse_err(line, "empty intersection_id".into()));
            }
            let mut row = Vec::with_capacity(RAW_WIDTH);
            for (a, &col) in position.iter().enumerate() {
                let v: f64 = record[col]
                    .parse()
                    .map_err(|_| parse_err(line, format!("bad value {:?} for {}", &record[col], canonical[a])))?;
                if !v.is_finite() || v < 0.0 {
                    return Err(parse_err(line, format!("{} must be finite and nonnegative, got {v}", canonical[a])));
                }
                row.push(v);
            }
            let class = row[RAW_WIDTH - 1];
            if class != 0.0 && class != 1.0 {
                return Err(parse_err(line, format!("class must be 0 or 1, got {class}")));
            }

            match by_id.get(&id) {
                Some(&b) => {
                    if !seen_here.contains(&id) {
                        return Err(parse_err(line, format!("intersection {id} appears in more than one file")));
                    }
                    builders[b].push(minute, row, gap_limit, path, line)?;
                }
                None => {
                    by_id.insert(id.clone(), builders.len());
                    seen_here.push(id.clone());
                    builders.push(Builder {
                        id,
                        first_minute: minute,
                        last_minute: minute,
                        columns: vec![row],
                        filled: Vec::new(),
                    });
                }
            }
        }
    }

    let mut series = Vec::with_capacity(builders.len());
    let mut gaps = Vec::new();
    for b in builders {
        let (s, g) = b.finish();
        if !g.filled_minutes.is_empty() {
            log::warn!(
                "{}: filled {} missing minute(s): {:?}",
                g.intersection_id,
                g.filled_minutes.len(),
                g.filled_minutes
            );
            gaps.push(g);
        }
        series.push(s);
    }
    Ok(Ingested { series, gaps })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("{other:?}"),
        },
    }
}

/// Every `*.csv` file in `dir`, sorted by name.
pub fn csv_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::InvalidInput(format!("no .csv files in {}", dir.display())));
    }
    Ok(files)
}

/// Removes the four occupancy measures (48 attributes), leaving A1..A85.
pub fn drop_occupancy(series: RawIntersectionSeries) -> Result<RawIntersectionSeries> {
    if series.attributes.nrows() != RAW_WIDTH {
        return Err(Error::shape("drop_occupancy", RAW_WIDTH, series.attributes.nrows()));
    }
    let keep: Vec<usize> = (0..RAW_WIDTH)
        .filter(|&a| {
            Measure::ALL
                .get(a / MOVEMENTS)
                .is_none_or(|m| a == RAW_WIDTH - 1 || !m.is_occupancy())
        })
        .collect();
    debug_assert_eq!(keep.len(), CLEAN_WIDTH);
    Ok(RawIntersectionSeries {
        attributes: series.attributes.select(Axis(0), &keep),
        attribute_names: clean_attribute_names(),
        ..series
    })
}

/// Pearson correlations between the rows of an `F x T` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Correlation {
    pub r: Array2<f64>,
    /// Rows with zero variance; their correlation with everything is 0,
    /// including with themselves.
    pub constant: Vec<bool>,
}

pub fn correlation_matrix(attributes: ArrayView2<f64>) -> Result<Correlation> {
    let (f, t) = attributes.dim();
    if t < 2 {
        return Err(Error::InvalidInput(format!("correlation needs at least 2 samples, got {t}")));
    }
    let mut z = attributes.to_owned();
    let mut constant = vec![false; f];
    for (i, mut row) in z.axis_iter_mut(Axis(0)).enumerate() {
        let mean = row.sum() / t as f64;
        row.mapv_inplace(|v| v - mean);
        let norm = row.dot(&row).sqrt();
        if norm <= 1e-12 * (1.0 + mean.abs()) * (t as f64).sqrt() {
            constant[i] = true;
            row.fill(0.0);
        } else {
            row.mapv_inplace(|v| v / norm);
        }
    }
    let mut r = z.dot(&z.t());
    for i in 0..f {
        for j in 0..f {
            r[[i, j]] = r[[i, j]].clamp(-1.0, 1.0);
        }
        if !constant[i] {
            r[[i, i]] = 1.0;
        }
    }
    if constant.iter().any(|&c| c) {
        log::debug!("{} constant attribute(s) given zero correlation", constant.iter().filter(|&&c| c).count());
    }
    Ok(Correlation { r, constant })
}

/// Outcome of [`prune_collinear`].
#[derive(Debug, Clone, PartialEq)]
pub struct PruneResult {
    /// Kept row positions, ascending.
    pub kept: Vec<usize>,
    /// `(dropped, partner, r)` in the order decisions were made.
    pub dropped: Vec<(usize, usize, f64)>,
}

/// Greedy collinearity pruning over the rows of an `F x T` matrix.
///
/// Pairs of non-target rows with `|r| >= threshold` are visited in
/// descending `|r|`. When both members are still kept, the one whose largest
/// `|r|` to any target is smaller is dropped; ties drop the higher index.
pub fn prune_collinear(
    attributes: ArrayView2<f64>,
    target: impl Fn(usize) -> bool,
    threshold: f64,
) -> Result<PruneResult> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Config(format!("collinearity threshold must lie in (0, 1], got {threshold}")));
    }
    let f = attributes.nrows();
    let corr = correlation_matrix(attributes)?;
    let r = &corr.r;
    let targets: Vec<usize> = (0..f).filter(|&i| target(i)).collect();
    let target_affinity: Vec<f64> = (0..f)
        .map(|i| targets.iter().filter(|&&t| t != i).map(|&t| r[[i, t]].abs()).fold(0.0, f64::max))
        .collect();

    let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
    for i in 0..f {
        for j in i + 1..f {
            if target(i) || target(j) {
                continue;
            }
            let v = r[[i, j]];
            if v.abs() >= threshold {
                pairs.push((i, j, v));
            }
        }
    }
    pairs.sort_by(|a, b| b.2.abs().total_cmp(&a.2.abs()).then((a.0, a.1).cmp(&(b.0, b.1))));

    let mut keep = vec![true; f];
    let mut dropped = Vec::new();
    for (i, j, v) in pairs {
        if !(keep[i] && keep[j]) {
            continue;
        }
        let (drop, partner) = if target_affinity[i] < target_affinity[j] { (i, j) } else { (j, i) };
        keep[drop] = false;
        dropped.push((drop, partner, v));
    }
    Ok(PruneResult {
        kept: (0..f).filter(|&i| keep[i]).collect(),
        dropped,
    })
}

/// Type-7 quantile (linear interpolation between order statistics) of
/// sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `(lower fence, upper fence, median)`.
pub fn iqr_fences(series: &[f64]) -> (f64, f64, f64) {
    let mut sorted = series.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    (q1 - 1.5 * iqr, q3 + 1.5 * iqr, quantile_sorted(&sorted, 0.5))
}

/// Replaces values outside the 1.5 IQR fences with the series median, in a
/// single pass. Series shorter than four samples are returned unchanged.
pub fn iqr_outlier_replace(series: &[f64]) -> Vec<f64> {
    if series.len() < 4 {
        return series.to_vec();
    }
    let (lo, hi, median) = iqr_fences(series);
    series.iter().map(|&v| if v < lo || v > hi { median } else { v }).collect()
}

/// Per-attribute z-score statistics fitted on training minutes only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Constant attributes, normalized as the identity.
    pub passthrough: Vec<bool>,
    /// Exclusive end of the training minutes the stats were fitted on.
    pub train_end_minute: usize,
}

impl NormalizationStats {
    /// Fits on the columns of `attributes` (starting at `first_minute`) that
    /// fall in `fit_minutes`. Any fit minute at or past `train_end_minute`
    /// is test data and is rejected.
    pub fn fit(
        attributes: ArrayView2<f64>,
        first_minute: usize,
        fit_minutes: Range<usize>,
        train_end_minute: usize,
    ) -> Result<Self> {
        if fit_minutes.end > train_end_minute {
            return Err(Error::Leakage(format!(
                "fit minutes {fit_minutes:?} reach past the training boundary {train_end_minute}"
            )));
        }
        let t = attributes.ncols();
        let start = fit_minutes.start.max(first_minute) - first_minute;
        let end = fit_minutes.end.min(first_minute + t).saturating_sub(first_minute);
        if start >= end {
            return Err(Error::InvalidInput(format!("no training minutes in {fit_minutes:?}")));
        }
        let rows = attributes.slice(s![.., start..end]);
        let count = (end - start) as f64;
        let mut stats = Self {
            mean: Vec::new(),
            std: Vec::new(),
            passthrough: Vec::new(),
            train_end_minute,
        };
        for row in rows.axis_iter(Axis(0)) {
            let mean = row.sum() / count;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
            let std = var.sqrt();
            if std <= 1e-12 {
                stats.mean.push(0.0);
                stats.std.push(1.0);
                stats.passthrough.push(true);
            } else {
                stats.mean.push(mean);
                stats.std.push(std);
                stats.passthrough.push(false);
            }
        }
        Ok(stats)
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    /// Normalizes every column of an `F x T` matrix.
    pub fn normalize(&self, attributes: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(attributes.nrows())?;
        let mut out = attributes.to_owned();
        for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            let (m, s) = (self.mean[i], self.std[i]);
            row.mapv_inplace(|v| (v - m) / s);
        }
        Ok(out)
    }

    pub fn denormalize(&self, attributes: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(attributes.nrows())?;
        let mut out = attributes.to_owned();
        for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            let (m, s) = (self.mean[i], self.std[i]);
            row.mapv_inplace(|v| v * s + m);
        }
        Ok(out)
    }

    fn check(&self, rows: usize) -> Result<()> {
        if rows != self.width() {
            return Err(Error::shape("normalization stats", self.width(), rows));
        }
        Ok(())
    }
}

/// Cleaned features of one intersection.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanFeatureSeries {
    pub intersection_id: String,
    pub first_minute: usize,
    /// Clean-schema indices (`A{id+1}`) of the rows of `attributes`.
    pub kept_attribute_ids: Vec<usize>,
    /// Normalized `F x T` features.
    pub attributes: Array2<f64>,
    /// Outlier-cleaned raw counts, `12 x T`.
    pub counts: Array2<f64>,
    /// Outlier-cleaned raw speeds, `12 x T`, used for edge weights even when
    /// the speed attributes themselves were pruned.
    pub speeds: Array2<f64>,
    pub class: Vec<DayClass>,
    pub stats: NormalizationStats,
}

impl CleanFeatureSeries {
    pub fn len(&self) -> usize {
        self.attributes.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.ncols() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub collinearity_threshold: f64,
    pub train_days: usize,
    pub gap_limit: usize,
    pub replace_outliers: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            collinearity_threshold: 0.8,
            train_days: 19,
            gap_limit: DEFAULT_GAP_LIMIT,
            replace_outliers: true,
        }
    }
}

/// Everything needed to replay preprocessing on the same raw data.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineManifest {
    pub collinearity_threshold: f64,
    pub train_end_minute: usize,
    pub replace_outliers: bool,
    pub kept_attribute_ids: Vec<usize>,
    /// Per intersection, in input order.
    pub stats: Vec<(String, NormalizationStats)>,
    /// How many intersections voted to keep each clean attribute.
    pub votes: Vec<usize>,
}

pub const PIPELINE_VERSION: &str = "mgcnn-pipeline-v1";

impl PipelineManifest {
    pub fn feature_names(&self) -> Vec<String> {
        let names = clean_attribute_names();
        self.kept_attribute_ids.iter().map(|&a| names[a].clone()).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{PIPELINE_VERSION}");
        let _ = writeln!(out, "collinearity_threshold {:?}", self.collinearity_threshold);
        let _ = writeln!(out, "train_end_minute {}", self.train_end_minute);
        let _ = writeln!(out, "replace_outliers {}", self.replace_outliers);
        let kept: Vec<String> = self.kept_attribute_ids.iter().map(|a| format!("A{}", a + 1)).collect();
        let _ = writeln!(out, "kept {}", kept.join(" "));
        let names = self.feature_names();
        let _ = writeln!(out, "# {}", names.join(" "));
        let votes: Vec<String> = self.votes.iter().map(usize::to_string).collect();
        let _ = writeln!(out, "votes {}", votes.join(" "));
        for (id, st) in &self.stats {
            let _ = writeln!(out, "node {id}");
            let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
            let _ = writeln!(out, "mean {}", join(&st.mean));
            let _ = writeln!(out, "std {}", join(&st.std));
            let flags: Vec<&str> = st.passthrough.iter().map(|&p| if p { "1" } else { "0" }).collect();
            let _ = writeln!(out, "passthrough {}", flags.join(" "));
        }
        out.push_str("end\n");
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut m = PipelineManifest {
            collinearity_threshold: 0.0,
            train_end_minute: 0,
            replace_outliers: true,
            kept_attribute_ids: Vec::new(),
            stats: Vec::new(),
            votes: Vec::new(),
        };
        let mut ended = false;
        let floats = |rest: &str, line: usize| -> Result<Vec<f64>> {
            rest.split_whitespace()
                .map(|v| v.parse().map_err(|_| err(line, format!("bad number {v:?}"))))
                .collect()
        };
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            if k == 0 {
                if raw.trim() != PIPELINE_VERSION {
                    return Err(err(line, format!("expected {PIPELINE_VERSION}")));
                }
                continue;
            }
            let raw = raw.trim();
            if raw.is_empty() || raw.starts_with('#') {
                continue;
            }
            let (key, rest) = raw.split_once(' ').unwrap_or((raw, ""));
            match key {
                "collinearity_threshold" => {
                    m.collinearity_threshold = rest.parse().map_err(|_| err(line, "bad threshold".into()))?
                }
                "train_end_minute" => m.train_end_minute = rest.parse().map_err(|_| err(line, "bad minute".into()))?,
                "replace_outliers" => m.replace_outliers = rest == "true",
                "kept" => {
                    m.kept_attribute_ids = rest
                        .split_whitespace()
                        .map(|a| {
                            a.strip_prefix('A')
                                .and_then(|n| n.parse::<usize>().ok())
                                .filter(|&n| (1..=CLEAN_WIDTH).contains(&n))
                                .map(|n| n - 1)
                                .ok_or_else(|| err(line, format!("bad attribute {a:?}")))
                        })
                        .collect::<Result<_>>()?
                }
                "votes" => {
                    m.votes = rest
                        .split_whitespace()
                        .map(|v| v.parse().map_err(|_| err(line, format!("bad vote {v:?}"))))
                        .collect::<Result<_>>()?
                }
                "node" => m.stats.push((
                    rest.to_string(),
                    NormalizationStats {
                        mean: Vec::new(),
                        std: Vec::new(),
                        passthrough: Vec::new(),
                        train_end_minute: m.train_end_minute,
                    },
                )),
                "mean" | "std" | "passthrough" => {
                    let (_, st) = m.stats.last_mut().ok_or_else(|| err(line, format!("{key} before node")))?;
                    match key {
                        "mean" => st.mean = floats(rest, line)?,
                        "std" => st.std = floats(rest, line)?,
                        _ => st.passthrough = rest.split_whitespace().map(|f| f == "1").collect(),
                    }
                }
                "end" => {
                    ended = true;
                    break;
                }
                other => return Err(err(line, format!("unknown key {other:?}"))),
            }
        }
        if !ended {
            return Err(err(text.lines().count(), "truncated manifest (no `end`)".into()));
        }
        let f = m.kept_attribute_ids.len();
        for (id, st) in &m.stats {
            if st.mean.len() != f || st.std.len() != f || st.passthrough.len() != f {
                return Err(err(0, format!("stats for {id} do not match {f} kept attributes")));
            }
        }
        Ok(m)
    }
}

/// Output of [`prepare`].
#[derive(Debug, Clone)]
pub struct Prepared {
    pub series: Vec<CleanFeatureSeries>,
    pub manifest: PipelineManifest,
    /// Per-intersection kept sets before the vote, in clean-schema indices.
    pub local_kept: Vec<Vec<usize>>,
}

fn clean_one(raw: RawIntersectionSeries, replace_outliers: bool) -> Result<RawIntersectionSeries> {
    let mut s = if raw.attributes.nrows() == RAW_WIDTH { drop_occupancy(raw)? } else { raw };
    if s.attributes.nrows() != CLEAN_WIDTH {
        return Err(Error::shape("intersection attributes", CLEAN_WIDTH, s.attributes.nrows()));
    }
    if replace_outliers {
        for a in 0..CLASS_ATTR {
            let row = s.attributes.row(a).to_vec();
            let cleaned = iqr_outlier_replace(&row);
            s.attributes.row_mut(a).assign(&Array1::from(cleaned));
        }
    }
    Ok(s)
}

fn training_columns(s: &RawIntersectionSeries, train_end_minute: usize) -> Result<Range<usize>> {
    let end = train_end_minute.min(s.first_minute + s.len()).saturating_sub(s.first_minute);
    if end < 2 {
        return Err(Error::InvalidInput(format!(
            "{} has fewer than 2 training minutes before minute {train_end_minute}",
            s.intersection_id
        )));
    }
    Ok(0..end)
}

fn finish_series(
    s: RawIntersectionSeries,
    kept: &[usize],
    stats: NormalizationStats,
) -> Result<CleanFeatureSeries> {
    let selected = s.attributes.select(Axis(0), kept);
    let attributes = stats.normalize(selected.view())?;
    let counts = s.attributes.slice(s![0..MOVEMENTS, ..]).to_owned();
    let speeds = s.attributes.slice(s![MOVEMENTS..2 * MOVEMENTS, ..]).to_owned();
    let class = s.attributes.row(CLASS_ATTR).iter().map(|&v| DayClass::from_value(v)).collect();
    Ok(CleanFeatureSeries {
        intersection_id: s.intersection_id,
        first_minute: s.first_minute,
        kept_attribute_ids: kept.to_vec(),
        attributes,
        counts,
        speeds,
        class,
        stats,
    })
}

fn check_aligned(raw: &[RawIntersectionSeries]) -> Result<()> {
    let first = raw.first().ok_or_else(|| Error::InvalidInput("no intersections".into()))?;
    if let Some(bad) = raw.iter().find(|s| s.minutes() != first.minutes()) {
        return Err(Error::InvalidInput(format!(
            "minute ranges differ: {} covers {:?}, {} covers {:?}",
            first.intersection_id,
            first.minutes(),
            bad.intersection_id,
            bad.minutes()
        )));
    }
    Ok(())
}

/// Runs every cleaning stage and fits the global kept set and the
/// per-intersection normalization on minutes before
/// `train_days * 1440`.
pub fn prepare(raw: Vec<RawIntersectionSeries>, config: &PipelineConfig) -> Result<Prepared> {
    check_aligned(&raw)?;
    let train_end = config.train_days * MINUTES_PER_DAY;
    let cleaned: Vec<RawIntersectionSeries> = raw
        .into_par_iter()
        .map(|s| clean_one(s, config.replace_outliers))
        .collect::<Result<_>>()?;

    let local_kept: Vec<Vec<usize>> = cleaned
        .par_iter()
        .map(|s| {
            let cols = training_columns(s, train_end)?;
            let view = s.attributes.slice(s![.., cols]);
            Ok(prune_collinear(view, is_target, config.collinearity_threshold)?.kept)
        })
        .collect::<Result<_>>()?;

    let mut votes = vec![0usize; CLEAN_WIDTH];
    for kept in &local_kept {
        for &a in kept {
            votes[a] += 1;
        }
    }
    let n = cleaned.len();
    let kept: Vec<usize> = (0..CLEAN_WIDTH).filter(|&a| is_target(a) || 2 * votes[a] >= n).collect();
    log::info!("keeping {} of {CLEAN_WIDTH} attributes", kept.len());

    let series: Vec<CleanFeatureSeries> = cleaned
        .into_par_iter()
        .map(|s| {
            let cols = training_columns(&s, train_end)?;
            let selected = s.attributes.select(Axis(0), &kept);
            let stats = NormalizationStats::fit(
                selected.view(),
                s.first_minute,
                s.first_minute..s.first_minute + cols.end,
                train_end,
            )?;
            finish_series(s, &kept, stats)
        })
        .collect::<Result<_>>()?;

    let manifest = PipelineManifest {
        collinearity_threshold: config.collinearity_threshold,
        train_end_minute: train_end,
        replace_outliers: config.replace_outliers,
        kept_attribute_ids: kept,
        stats: series.iter().map(|s| (s.intersection_id.clone(), s.stats.clone())).collect(),
        votes,
    };
    Ok(Prepared {
        series,
        manifest,
        local_kept,
    })
}

/// Re-applies a stored manifest: same kept set, same statistics.
pub fn prepare_with_manifest(raw: Vec<RawIntersectionSeries>, manifest: &PipelineManifest) -> Result<Vec<CleanFeatureSeries>> {
    check_aligned(&raw)?;
    raw.into_par_iter()
        .map(|s| {
            let stats = manifest
                .stats
                .iter()
                .find(|(id, _)| *id == s.intersection_id)
                .map(|(_, st)| st.clone())
                .ok_or_else(|| Error::InvalidInput(format!("manifest has no statistics for {}", s.intersection_id)))?;
            let s = clean_one(s, manifest.replace_outliers)?;
            finish_series(s, &manifest.kept_attribute_ids, stats)
        })
        .collect()
}

/// Index of the approach speed that drives an edge's travel time: the thru
/// movement entering the arrival node in the edge's heading.
pub fn edge_speed_movement(heading: Heading) -> usize {
    match heading {
        Heading::Eastbound => movement_index(2, 1),
        Heading::Westbound => movement_index(3, 1),
    }
}

/// Builds per-minute snapshots, Laplacians and normalized targets, then
/// windows them with lookback `lookback` and horizon `horizon`.
pub fn assemble(
    clean: &[CleanFeatureSeries],
    topology: &CorridorTopology,
    lookback: usize,
    horizon: usize,
    spectral: &SpectralConfig,
    speed_floor_mph: f64,
) -> Result<WindowDataset> {
    let series = assemble_series(clean, topology, spectral, speed_floor_mph)?;
    WindowDataset::new(Arc::new(series), lookback, horizon)
}

/// The minute series underlying [`assemble`].
pub fn assemble_series(
    clean: &[CleanFeatureSeries],
    topology: &CorridorTopology,
    spectral: &SpectralConfig,
    speed_floor_mph: f64,
) -> Result<SnapshotSeries> {
    let n = topology.node_count();
    if clean.len() != n {
        return Err(Error::InvalidInput(format!(
            "topology has {n} nodes but {} intersections were given",
            clean.len()
        )));
    }
    let ordered: Vec<&CleanFeatureSeries> = topology
        .node_ids()
        .iter()
        .map(|id| {
            clean
                .iter()
                .find(|c| &c.intersection_id == id)
                .ok_or_else(|| Error::InvalidInput(format!("no data for topology node {id}")))
        })
        .collect::<Result<_>>()?;
    let first = ordered[0];
    for c in &ordered {
        if c.first_minute != first.first_minute || c.len() != first.len() {
            return Err(Error::InvalidInput(format!(
                "minute ranges differ between {} and {}",
                first.intersection_id, c.intersection_id
            )));
        }
        if c.kept_attribute_ids != first.kept_attribute_ids {
            return Err(Error::InvalidInput(format!(
                "kept attributes differ between {} and {}",
                first.intersection_id, c.intersection_id
            )));
        }
    }
    let t = first.len();
    let f = first.kept_attribute_ids.len();

    let snapshots: Vec<GraphSnapshot> = (0..t)
        .into_par_iter()
        .map(|col| {
            let features = Array2::from_shape_fn((n, f), |(v, a)| ordered[v].attributes[[a, col]]);
            let speeds: Vec<f64> = topology
                .edges()
                .iter()
                .map(|e| ordered[e.to].speeds[[edge_speed_movement(e.heading), col]])
                .collect();
            build_snapshot(topology, first.first_minute + col, &speeds, features, speed_floor_mph)
        })
        .collect::<Result<_>>()?;
    let raw_counts: Vec<Array2<f64>> = (0..t)
        .map(|col| Array2::from_shape_fn((n, MOVEMENTS), |(v, j)| ordered[v].counts[[j, col]]))
        .collect();

    let target_pos: Vec<usize> = (0..MOVEMENTS)
        .map(|j| first.kept_attribute_ids.iter().position(|&a| a == j))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::Invariant("a count attribute is missing from the kept set".into()))?;
    let scaling = CountScaling {
        mean: Array2::from_shape_fn((n, MOVEMENTS), |(v, j)| ordered[v].stats.mean[target_pos[j]]),
        std: Array2::from_shape_fn((n, MOVEMENTS), |(v, j)| ordered[v].stats.std[target_pos[j]]),
    };
    SnapshotSeries::new(
        topology.node_ids().to_vec(),
        snapshots,
        raw_counts,
        first.class.clone(),
        scaling,
        spectral,
    )
}

/// Column means of a view, for tests and reports.
pub fn row_means(attributes: ArrayView2<f64>) -> Vec<f64> {
    attributes.axis_iter(Axis(0)).map(|r: ArrayView1<f64>| r.mean().unwrap_or(0.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use std::io::Write;

    #[test]
    fn schema_sizes_and_order() {
        let raw = raw_attribute_names();
        assert_eq!(raw.len(), RAW_WIDTH);
        assert_eq!(raw[0], "count_NB_L");
        assert_eq!(raw[7], "count_EB_T");
        assert_eq!(raw[132], "class");
        let clean = clean_attribute_names();
        assert_eq!(clean.len(), CLEAN_WIDTH);
        assert_eq!(clean[12], "speed_NB_L");
        assert_eq!(clean[84], "class");
        assert!(clean.iter().all(|n| !n.starts_with("occ")));
        assert_eq!(clean_measure(speed_attr(7)), Some(Measure::Speed));
        assert_eq!(clean_measure(CLASS_ATTR), None);
    }

    fn write_csv(dir: &Path, name: &str, id: &str, minutes: &[usize], value: impl Fn(usize, usize) -> f64) -> PathBuf {
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "minute,intersection_id,{}", raw_attribute_names().join(",")).unwrap();
        for &m in minutes {
            let vals: Vec<String> = (0..RAW_WIDTH).map(|a| value(m, a).to_string()).collect();
            writeln!(f, "{m},{id},{}", vals.join(",")).unwrap();
        }
        path
    }

    #[test]
    fn ingest_minimal_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_csv(dir.path(), "a.csv", "x", &[0, 1], |m, a| if a == 132 { 1.0 } else { (m + a) as f64 });
        let got = ingest_csv(&[p], DEFAULT_GAP_LIMIT).unwrap();
        assert_eq!(got.series.len(), 1);
        assert_eq!(got.series[0].len(), 2);
        assert_eq!(got.series[0].attributes[[5, 1]], 6.0);
        assert!(got.gaps.is_empty());
    }

    #[test]
    fn ingest_fills_gaps() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_csv(dir.path(), "a.csv", "x", &[0, 1, 5], |_, a| if a == 132 { 1.0 } else { 7.0 });
        let got = ingest_csv(&[p.clone()], DEFAULT_GAP_LIMIT).unwrap();
        let s = &got.series[0];
        assert_eq!(s.len(), 6);
        assert_eq!(got.gaps[0].filled_minutes, vec![2, 3, 4]);
        assert_eq!(s.attributes[[0, 3]], 0.0, "counts fill with zero");
        assert_eq!(s.attributes[[12, 3]], 7.0, "speed carries forward");
        assert_eq!(s.attributes[[132, 3]], 1.0, "class carries forward");

        assert!(ingest_csv(&[p], 2).is_err());
    }

    #[test]
    fn ingest_rejects_bad_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_csv(dir.path(), "a.csv", "x", &[0, 1], |m, a| if m == 1 && a == 3 { -1.0 } else { 0.0 });
        match ingest_csv(&[p], 60).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("{e}"),
        }
        let p = write_csv(dir.path(), "b.csv", "x", &[3, 2], |_, _| 0.0);
        assert!(ingest_csv(&[p], 60).is_err());
        let p = write_csv(dir.path(), "c.csv", "x", &[0], |_, a| if a == 132 { 2.0 } else { 0.0 });
        assert!(ingest_csv(&[p], 60).is_err());
    }

    #[test]
    fn occupancy_drop() {
        let s = RawIntersectionSeries {
            intersection_id: "x".into(),
            first_minute: 0,
            attribute_names: raw_attribute_names(),
            attributes: Array2::from_shape_fn((RAW_WIDTH, 3), |(a, _)| a as f64),
        };
        let d = drop_occupancy(s).unwrap();
        assert_eq!(d.attributes.nrows(), 85);
        assert_eq!(d.attributes[[84, 0]], 132.0);
        assert_eq!(d.attributes[[83, 0]], 83.0);
        let narrow = RawIntersectionSeries {
            attributes: Array2::zeros((10, 3)),
            ..d
        };
        assert!(drop_occupancy(narrow).is_err());
    }

    #[test]
    fn correlation_examples() {
        let x = array![[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [3.0, 2.0, 1.0], [5.0, 5.0, 5.0]];
        let c = correlation_matrix(x.view()).unwrap();
        assert!((c.r[[0, 0]] - 1.0).abs() < 1e-12);
        assert!((c.r[[0, 1]] - 1.0).abs() < 1e-12);
        assert!((c.r[[0, 2]] + 1.0).abs() < 1e-12);
        assert_eq!(c.r[[3, 0]], 0.0);
        assert_eq!(c.r[[3, 3]], 0.0);
        assert_eq!(c.constant, vec![false, false, false, true]);
        assert!(correlation_matrix(array![[1.0]].view()).is_err());
    }

    #[test]
    fn prune_identical_pair() {
        let base: Vec<f64> = (0..50).map(|t| ((t * 37) % 11) as f64).collect();
        let other: Vec<f64> = (0..50).map(|t| ((t * 13) % 7) as f64).collect();
        let m = Array2::from_shape_fn((3, 50), |(r, t)| if r == 2 { other[t] } else { base[t] });
        let res = prune_collinear(m.view(), |_| false, 0.8).unwrap();
        assert_eq!(res.kept, vec![0, 2]);
        assert_eq!(res.dropped.len(), 1);
        let none = prune_collinear(m.select(Axis(0), &[0, 2]).view(), |_| false, 0.8).unwrap();
        assert_eq!(none.kept, vec![0, 1]);
    }

    #[test]
    fn prune_keeps_member_closer_to_targets() {
        // row 0 is a target; row 2 tracks it more closely than row 1 does.
        let t: Vec<f64> = (0..200).map(|i| (i as f64 * 0.37).sin()).collect();
        let noise: Vec<f64> = (0..200).map(|i| (i as f64 * 1.91).cos()).collect();
        let m = Array2::from_shape_fn((3, 200), |(r, i)| match r {
            0 => t[i],
            1 => t[i] + 0.45 * noise[i],
            _ => t[i] + 0.40 * noise[i],
        });
        let res = prune_collinear(m.view(), |i| i == 0, 0.8).unwrap();
        assert_eq!(res.kept, vec![0, 2]);
    }

    #[test]
    fn iqr_examples() {
        assert_eq!(iqr_outlier_replace(&[1.0, 2.0, 3.0, 4.0, 100.0]), vec![1.0, 2.0, 3.0, 4.0, 3.0]);
        assert_eq!(iqr_outlier_replace(&[5.0; 6]), vec![5.0; 6]);
        let clean = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0];
        assert_eq!(iqr_outlier_replace(&clean), clean.to_vec());
        let (lo, hi, med) = iqr_fences(&[1.0, 2.0, 3.0, 4.0, 100.0]);
        assert_eq!((lo, hi, med), (-1.0, 7.0, 3.0));
    }

    #[test]
    fn normalization_examples() {
        let m = array![[1.0, 2.0, 3.0, 100.0], [4.0, 4.0, 4.0, 4.0]];
        let st = NormalizationStats::fit(m.view(), 0, 0..3, 3).unwrap();
        assert_eq!(st.passthrough, vec![false, true]);
        let z = st.normalize(m.view()).unwrap();
        assert!(z.slice(s![0, 0..3]).sum().abs() < 1e-10);
        assert_eq!(z.row(1), m.row(1));
        let back = st.denormalize(z.view()).unwrap();
        assert!(back.iter().zip(m.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(matches!(NormalizationStats::fit(m.view(), 0, 0..4, 3), Err(Error::Leakage(_))));
    }

    #[test]
    fn manifest_round_trip() {
        let m = PipelineManifest {
            collinearity_threshold: 0.85,
            train_end_minute: 27360,
            replace_outliers: true,
            kept_attribute_ids: vec![0, 1, 2, 84],
            stats: vec![(
                "a".into(),
                NormalizationStats {
                    mean: vec![0.1, 1.0 / 3.0, 2.0, 0.0],
                    std: vec![1.5, 2.0, 1.0, 1.0],
                    passthrough: vec![false, false, false, true],
                    train_end_minute: 27360,
                },
            )],
            votes: vec![3; CLEAN_WIDTH],
        };
        let text = m.to_text();
        assert_eq!(PipelineManifest::from_text(&text, Path::new("m")).unwrap(), m);
        assert!(PipelineManifest::from_text(&text.replace("end\n", ""), Path::new("m")).is_err());
    }

    #[test]
    fn misaligned_minutes_rejected() {
        let mk = |id: &str, first: usize| RawIntersectionSeries {
            intersection_id: id.into(),
            first_minute: first,
            attribute_names: raw_attribute_names(),
            attributes: Array2::zeros((RAW_WIDTH, 10)),
        };
        let err = prepare(vec![mk("a", 0), mk("b", 100)], &PipelineConfig::default()).unwrap_err();
        assert!(err.to_string().contains("minute ranges differ"));
    }
}
