//! Metric tables, aggregates, calibration and transform-robustness reports,
//! rendered as CSV or Markdown.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::imaging::IDENTITY_CHAIN_ID;
use crate::manifest::Label;
use crate::metrics::{
    average_precision, confusion_at, oracle_threshold, roc_auc, ScoreSet, DEFAULT_THRESHOLD,
};
use crate::runner::{write_atomic, RunResult};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("run has no completed cells")]
    NoCompletedCells,
    #[error("manifest `{0}` is not available; family grouping needs it")]
    ManifestUnavailable(String),
    #[error("invalid threshold `{0}` (expected a number or `oracle`)")]
    InvalidThreshold(String),
    #[error("invalid grouping `{0}` (expected `family`)")]
    InvalidGroupBy(String),
    #[error("record `{id}` is not in manifest `{manifest}`")]
    UnknownRecord { id: String, manifest: String },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdMode {
    Fixed(f64),
    Oracle,
}

impl Default for ThresholdMode {
    fn default() -> Self {
        Self::Fixed(DEFAULT_THRESHOLD)
    }
}

impl FromStr for ThresholdMode {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("oracle") {
            return Ok(Self::Oracle);
        }
        match s.parse::<f64>() {
            Ok(t) if t.is_finite() => Ok(Self::Fixed(t)),
            _ => Err(ReportError::InvalidThreshold(s.to_string())),
        }
    }
}

impl fmt::Display for ThresholdMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Fixed(t) => write!(f, "{t}"),
            Self::Oracle => f.write_str("oracle"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GroupBy {
    #[default]
    None,
    /// One row per fake family of each dataset: that family's fakes against
    /// all of the dataset's reals.
    Family,
}

impl FromStr for GroupBy {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "family" => Ok(Self::Family),
            "none" => Ok(Self::None),
            _ => Err(ReportError::InvalidGroupBy(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub detector: String,
    pub dataset: String,
    pub family: String,
    pub chain_id: String,
    pub preprocess: String,
    pub threshold_used: f64,
    pub acc: Option<f64>,
    pub ap: Option<f64>,
    pub tpr: Option<f64>,
    pub tnr: Option<f64>,
    pub auc: Option<f64>,
    pub n_real: usize,
    pub n_fake: usize,
}

/// Metrics of one score set at `mode`; undefined values are `None`.
fn make_row(detector: &str, dataset: &str, family: &str, chain_id: &str, preprocess: &str, scores: &ScoreSet, mode: ThresholdMode) -> MetricRow {
    let threshold_used = match mode {
        ThresholdMode::Fixed(t) => t,
        ThresholdMode::Oracle => oracle_threshold(scores).map_or(DEFAULT_THRESHOLD, |o| o.threshold),
    };
    let counts = confusion_at(scores, threshold_used).ok();
    let acc = counts.and_then(|c| c.accuracy().ok());
    let tpr = counts.and_then(|c| c.tpr());
    let tnr = counts.and_then(|c| c.tnr());
    let ap = average_precision(scores).ok();
    let auc = roc_auc(scores).ok();
    MetricRow {
        detector: detector.to_string(),
        dataset: dataset.to_string(),
        family: family.to_string(),
        chain_id: chain_id.to_string(),
        preprocess: preprocess.to_string(),
        threshold_used,
        acc,
        ap,
        tpr,
        tnr,
        auc,
        n_real: scores.n_real(),
        n_fake: scores.n_fake(),
    }
}

/// One row per completed cell (per fake family of each cell when grouping
/// by family), in plan order.
pub fn metric_table(result: &RunResult, mode: ThresholdMode, group_by: GroupBy) -> Result<Vec<MetricRow>, ReportError> {
    let mut rows = Vec::new();
    let mut completed = false;
    for (cell, scores) in result.completed() {
        completed = true;
        match group_by {
            GroupBy::None => rows.push(make_row(
                &cell.detector,
                &cell.manifest,
                &cell.family,
                &cell.chain_id,
                &cell.preprocess,
                scores,
                mode,
            )),
            GroupBy::Family => {
                let manifest = result
                    .manifests
                    .get(&cell.manifest)
                    .ok_or_else(|| ReportError::ManifestUnavailable(cell.manifest.clone()))?;
                let family_of: HashMap<&str, &str> = manifest
                    .records
                    .iter()
                    .map(|r| (r.path.as_str(), r.family.as_str()))
                    .collect();
                let mut families = BTreeMap::new();
                for e in scores.entries() {
                    let family = *family_of.get(e.id.as_str()).ok_or_else(|| ReportError::UnknownRecord {
                        id: e.id.clone(),
                        manifest: cell.manifest.clone(),
                    })?;
                    if e.label == Label::Fake {
                        families.insert(family, ());
                    }
                }
                for family in families.keys() {
                    let subset = scores.filter(|e| e.label == Label::Real || family_of.get(e.id.as_str()) == Some(family));
                    rows.push(make_row(
                        &cell.detector,
                        &cell.manifest,
                        family,
                        &cell.chain_id,
                        &cell.preprocess,
                        &subset,
                        mode,
                    ));
                }
            }
        }
    }
    if !completed {
        return Err(ReportError::NoCompletedCells);
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum AggregateScope {
    PerFamily,
    Overall,
    PerTransform,
}

impl AggregateScope {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::PerFamily => "per_family",
            Self::Overall => "overall",
            Self::PerTransform => "per_transform",
        }
    }
}

/// Mean of a metric over member rows where it is defined, and how many
/// members contributed.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Mean {
    pub value: Option<f64>,
    pub n: usize,
}

impl Mean {
    fn of(values: impl Iterator<Item = Option<f64>>) -> Self {
        let defined: Vec<f64> = values.flatten().collect();
        let n = defined.len();
        let value = (n > 0).then(|| defined.iter().sum::<f64>() / n as f64);
        Self { value, n }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub scope: AggregateScope,
    pub detector: String,
    /// Family name, dataset count scope (`all`) or chain id.
    pub key: String,
    pub chain_id: String,
    pub acc: Mean,
    pub ap: Mean,
    pub tpr: Mean,
    pub tnr: Mean,
    pub auc: Mean,
    pub n_datasets: usize,
}

/// Unweighted means over member rows: each dataset row counts once,
/// regardless of its image count. Undefined member values are skipped and
/// the per-metric member counts record how many contributed.
///
/// Groups are keyed by detector and chain, plus the family for
/// [`AggregateScope::PerFamily`]; output follows first appearance in `rows`.
pub fn aggregate(rows: &[MetricRow], scope: AggregateScope) -> Vec<AggregateRow> {
    let mut order: Vec<(String, String, String)> = Vec::new();
    let mut groups: HashMap<(String, String, String), Vec<&MetricRow>> = HashMap::new();
    for row in rows {
        let key = match scope {
            AggregateScope::PerFamily => row.family.clone(),
            AggregateScope::Overall => "all".to_string(),
            AggregateScope::PerTransform => row.chain_id.clone(),
        };
        let group = (row.detector.clone(), row.chain_id.clone(), key);
        groups
            .entry(group.clone())
            .or_insert_with(|| {
                order.push(group);
                Vec::new()
            })
            .push(row);
    }
    if scope == AggregateScope::PerTransform {
        // Detector-major, chain order as first seen for that detector.
        let mut detectors: Vec<&str> = Vec::new();
        for g in &order {
            if !detectors.contains(&g.0.as_str()) {
                detectors.push(&g.0);
            }
        }
        let mut sorted = Vec::with_capacity(order.len());
        for d in detectors {
            sorted.extend(order.iter().filter(|g| g.0 == d).cloned());
        }
        order = sorted;
    }
    order
        .into_iter()
        .map(|group| {
            let members = &groups[&group];
            let (detector, chain_id, key) = group;
            AggregateRow {
                scope,
                detector,
                key,
                chain_id,
                acc: Mean::of(members.iter().map(|r| r.acc)),
                ap: Mean::of(members.iter().map(|r| r.ap)),
                tpr: Mean::of(members.iter().map(|r| r.tpr)),
                tnr: Mean::of(members.iter().map(|r| r.tnr)),
                auc: Mean::of(members.iter().map(|r| r.auc)),
                n_datasets: members.len(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationRow {
    pub detector: String,
    pub dataset: String,
    pub family: String,
    pub chain_id: String,
    pub acc_default: f64,
    pub acc_oracle: f64,
    pub oracle_threshold: f64,
    pub delta: f64,
}

/// Accuracy at the default threshold next to the per-cell oracle accuracy.
pub fn calibration_report(result: &RunResult) -> Result<Vec<CalibrationRow>, ReportError> {
    let mut rows = Vec::new();
    for (cell, scores) in result.completed() {
        let oracle = oracle_threshold(scores).expect("completed cells are non-empty");
        let acc_default = confusion_at(scores, DEFAULT_THRESHOLD)
            .and_then(|c| c.accuracy())
            .expect("completed cells are non-empty");
        rows.push(CalibrationRow {
            detector: cell.detector.clone(),
            dataset: cell.manifest.clone(),
            family: cell.family.clone(),
            chain_id: cell.chain_id.clone(),
            acc_default,
            acc_oracle: oracle.accuracy,
            oracle_threshold: oracle.threshold,
            delta: oracle.accuracy - acc_default,
        });
    }
    if rows.is_empty() {
        return Err(ReportError::NoCompletedCells);
    }
    Ok(rows)
}

/// Per (detector, chain) means across datasets at the default threshold,
/// with warnings for detectors lacking an identity baseline.
pub fn transform_report(result: &RunResult) -> Result<(Vec<AggregateRow>, Vec<String>), ReportError> {
    let rows = metric_table(result, ThresholdMode::default(), GroupBy::None)?;
    let table = aggregate(&rows, AggregateScope::PerTransform);
    let mut warnings = Vec::new();
    let mut detectors: Vec<&str> = Vec::new();
    for r in &table {
        if !detectors.contains(&r.detector.as_str()) {
            detectors.push(&r.detector);
        }
    }
    for d in detectors {
        if !table.iter().any(|r| r.detector == d && r.chain_id == IDENTITY_CHAIN_ID) {
            warnings.push(format!("detector {d} has no identity-chain baseline"));
        }
    }
    Ok((table, warnings))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Text(String),
    Int(u64),
    /// Metric values, rendered with four decimals.
    Metric(Option<f64>),
    /// Thresholds, rendered in shortest round-trip form.
    Exact(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Value>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Markdown,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Csv => "csv",
            Self::Markdown => "md",
        }
    }
}

pub fn format_metric(v: f64) -> String {
    let s = format!("{v:.4}");
    if s == "-0.0000" {
        "0.0000".to_string()
    } else {
        s
    }
}

fn format_value(v: &Value, format: Format) -> String {
    match v {
        Value::Text(s) => s.clone(),
        Value::Int(n) => n.to_string(),
        Value::Metric(Some(x)) => format_metric(*x),
        Value::Metric(None) => match format {
            Format::Csv => String::new(),
            Format::Markdown => "—".to_string(),
        },
        Value::Exact(x) => {
            let x = if *x == 0.0 { 0.0 } else { *x };
            format!("{x}")
        }
    }
}

pub fn render(table: &Table, format: Format) -> String {
    match format {
        Format::Csv => {
            let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
            w.write_record(&table.columns).expect("writing to memory");
            for row in &table.rows {
                w.write_record(row.iter().map(|v| format_value(v, format))).expect("writing to memory");
            }
            String::from_utf8(w.into_inner().expect("writing to memory")).expect("csv output is UTF-8")
        }
        Format::Markdown => {
            let mut out = String::new();
            let line = |cells: Vec<String>| format!("| {} |\n", cells.join(" | "));
            out.push_str(&line(table.columns.iter().map(|c| c.to_string()).collect()));
            out.push_str(&line(table.columns.iter().map(|_| "---".to_string()).collect()));
            for row in &table.rows {
                out.push_str(&line(
                    row.iter()
                        .map(|v| format_value(v, format).replace('|', "\\|"))
                        .collect(),
                ));
            }
            out
        }
    }
}

fn text(s: &str) -> Value {
    Value::Text(s.to_string())
}

pub fn metrics_table(rows: &[MetricRow]) -> Table {
    Table {
        columns: vec![
            "detector", "dataset", "family", "chain", "preprocess", "threshold", "acc", "ap", "tpr", "tnr", "auc", "n_real",
            "n_fake",
        ],
        rows: rows
            .iter()
            .map(|r| {
                vec![
                    text(&r.detector),
                    text(&r.dataset),
                    text(&r.family),
                    text(&r.chain_id),
                    text(&r.preprocess),
                    Value::Exact(r.threshold_used),
                    Value::Metric(r.acc),
                    Value::Metric(r.ap),
                    Value::Metric(r.tpr),
                    Value::Metric(r.tnr),
                    Value::Metric(r.auc),
                    Value::Int(r.n_real as u64),
                    Value::Int(r.n_fake as u64),
                ]
            })
            .collect(),
    }
}

pub fn aggregates_table(rows: &[AggregateRow]) -> Table {
    Table {
        columns: vec![
            "scope", "detector", "key", "chain", "acc", "ap", "tpr", "tnr", "auc", "n_datasets", "n_acc", "n_ap", "n_tpr", "n_tnr",
            "n_auc",
        ],
        rows: rows
            .iter()
            .map(|r| {
                vec![
                    text(r.scope.as_str()),
                    text(&r.detector),
                    text(&r.key),
                    text(&r.chain_id),
                    Value::Metric(r.acc.value),
                    Value::Metric(r.ap.value),
                    Value::Metric(r.tpr.value),
                    Value::Metric(r.tnr.value),
                    Value::Metric(r.auc.value),
                    Value::Int(r.n_datasets as u64),
                    Value::Int(r.acc.n as u64),
                    Value::Int(r.ap.n as u64),
                    Value::Int(r.tpr.n as u64),
                    Value::Int(r.tnr.n as u64),
                    Value::Int(r.auc.n as u64),
                ]
            })
            .collect(),
    }
}

pub fn transforms_table(rows: &[AggregateRow]) -> Table {
    Table {
        columns: vec!["detector", "chain", "acc", "tpr", "tnr", "ap", "auc", "n_datasets"],
        rows: rows
            .iter()
            .map(|r| {
                vec![
                    text(&r.detector),
                    text(&r.chain_id),
                    Value::Metric(r.acc.value),
                    Value::Metric(r.tpr.value),
                    Value::Metric(r.tnr.value),
                    Value::Metric(r.ap.value),
                    Value::Metric(r.auc.value),
                    Value::Int(r.n_datasets as u64),
                ]
            })
            .collect(),
    }
}

pub fn calibration_table(rows: &[CalibrationRow]) -> Table {
    Table {
        columns: vec!["detector", "dataset", "family", "chain", "acc_default", "acc_oracle", "oracle_threshold", "delta"],
        rows: rows
            .iter()
            .map(|r| {
                vec![
                    text(&r.detector),
                    text(&r.dataset),
                    text(&r.family),
                    text(&r.chain_id),
                    Value::Metric(Some(r.acc_default)),
                    Value::Metric(Some(r.acc_oracle)),
                    Value::Exact(r.oracle_threshold),
                    Value::Metric(Some(r.delta)),
                ]
            })
            .collect(),
    }
}

/// Long format for plotting: one line per (row, metric).
pub fn figure_data_table(rows: &[MetricRow]) -> Table {
    let mut out = Vec::new();
    for r in rows {
        for (name, v) in [("acc", r.acc), ("ap", r.ap), ("tpr", r.tpr), ("tnr", r.tnr), ("auc", r.auc)] {
            out.push(vec![
                text(&r.detector),
                text(&r.dataset),
                text(&r.family),
                text(&r.chain_id),
                text(name),
                Value::Metric(v),
            ]);
        }
    }
    Table {
        columns: vec!["detector", "dataset", "family", "chain", "metric", "value"],
        rows: out,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReportOptions {
    pub threshold: ThresholdMode,
    pub group_by: GroupBy,
}

#[derive(Debug, Clone, Default)]
pub struct ReportOutput {
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

fn write_table(dir: &Path, stem: &str, table: &Table, formats: &[Format], out: &mut ReportOutput) -> Result<(), ReportError> {
    for &format in formats {
        let path = dir.join(format!("{stem}.{}", format.extension()));
        write_atomic(&path, render(table, format).as_bytes()).map_err(|source| ReportError::Io {
            context: format!("writing {}", path.display()),
            source,
        })?;
        out.files.push(path);
    }
    Ok(())
}

/// Writes metric, aggregate and figure-data tables into `dir`.
pub fn write_metric_reports(result: &RunResult, options: &ReportOptions, dir: &Path) -> Result<ReportOutput, ReportError> {
    let mut out = ReportOutput::default();
    let both = [Format::Csv, Format::Markdown];
    let rows = metric_table(result, options.threshold, options.group_by)?;
    write_table(dir, "report_metrics", &metrics_table(&rows), &both, &mut out)?;
    let mut aggregates = aggregate(&rows, AggregateScope::PerFamily);
    aggregates.extend(aggregate(&rows, AggregateScope::Overall));
    write_table(dir, "report_aggregates", &aggregates_table(&aggregates), &both, &mut out)?;
    write_table(dir, "figure_data", &figure_data_table(&rows), &[Format::Csv], &mut out)?;
    Ok(out)
}

pub fn write_calibration_report(result: &RunResult, dir: &Path) -> Result<ReportOutput, ReportError> {
    let mut out = ReportOutput::default();
    let rows = calibration_report(result)?;
    write_table(dir, "report_calibration", &calibration_table(&rows), &[Format::Csv, Format::Markdown], &mut out)?;
    Ok(out)
}

pub fn write_transform_report(result: &RunResult, dir: &Path) -> Result<ReportOutput, ReportError> {
    let mut out = ReportOutput::default();
    let (rows, warnings) = transform_report(result)?;
    write_table(dir, "report_transforms", &transforms_table(&rows), &[Format::Csv, Format::Markdown], &mut out)?;
    out.warnings = warnings;
    Ok(out)
}

/// Every report into the run directory.
pub fn write_all_reports(result: &RunResult, options: &ReportOptions) -> Result<ReportOutput, ReportError> {
    let dir = result.run_dir.clone();
    let mut out = write_metric_reports(result, options, &dir)?;
    for part in [write_calibration_report(result, &dir)?, write_transform_report(result, &dir)?] {
        out.files.extend(part.files);
        out.warnings.extend(part.warnings);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::Label::{Fake, Real};
    use crate::runner::{CellRecord, CellStatus};

    fn set(pairs: &[(f64, Label)]) -> ScoreSet {
        ScoreSet::from_pairs(pairs.iter().copied()).unwrap()
    }

    fn cell(detector: &str, manifest: &str, chain: &str) -> CellRecord {
        CellRecord {
            detector: detector.into(),
            command: format!("builtin:{detector}"),
            manifest: manifest.into(),
            family: "gan".into(),
            chain_id: chain.into(),
            preprocess: "none".into(),
            scores_file: format!("scores/{detector}__{manifest}__{chain}.jsonl"),
            status: CellStatus::Completed,
            error: None,
            n_real: 0,
            n_fake: 0,
            cache_hits: 0,
            scored: 0,
            wall_ms: 0,
        }
    }

    fn result(cells: Vec<(CellRecord, Option<ScoreSet>)>) -> RunResult {
        let (cells, scores): (Vec<_>, Vec<_>) = cells.into_iter().unzip();
        RunResult {
            run_dir: PathBuf::from("/nonexistent"),
            chains: vec!["identity".into()],
            preprocess: "none".into(),
            cells,
            scores,
            manifests: BTreeMap::new(),
        }
    }

    fn worked_set() -> ScoreSet {
        set(&[(0.9, Fake), (0.8, Real), (0.6, Fake), (0.55, Fake)])
    }

    fn row(acc: f64, tnr: Option<f64>) -> MetricRow {
        MetricRow {
            detector: "d".into(),
            dataset: "x".into(),
            family: "gan".into(),
            chain_id: "identity".into(),
            preprocess: "none".into(),
            threshold_used: 0.5,
            acc: Some(acc),
            ap: Some(acc),
            tpr: Some(acc),
            tnr,
            auc: None,
            n_real: 1,
            n_fake: 1,
        }
    }

    #[test]
    fn family_average_is_unweighted() {
        let rows = vec![row(0.6, Some(0.2)), row(0.8, None)];
        let agg = aggregate(&rows, AggregateScope::PerFamily);
        assert_eq!(agg.len(), 1);
        assert!((agg[0].acc.value.unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(agg[0].tnr, Mean { value: Some(0.2), n: 1 });
        assert_eq!(agg[0].auc, Mean { value: None, n: 0 });
        assert_eq!(agg[0].n_datasets, 2);
    }

    #[test]
    fn label_leak_row_is_perfect() {
        let r = result(vec![(cell("label_leak@1", "x", "identity"), Some(set(&[(1.0, Fake), (0.0, Real), (1.0, Fake)])))]);
        let rows = metric_table(&r, ThresholdMode::default(), GroupBy::None).unwrap();
        assert_eq!(rows.len(), 1);
        let m = &rows[0];
        assert_eq!((m.acc, m.ap, m.tpr, m.tnr, m.auc), (Some(1.0), Some(1.0), Some(1.0), Some(1.0), Some(1.0)));
        assert_eq!((m.n_real, m.n_fake), (1, 2));
    }

    #[test]
    fn failed_cells_are_skipped_and_all_failed_is_an_error() {
        let mut failed = cell("d", "x", "identity");
        failed.status = CellStatus::Failed;
        let r = result(vec![(failed.clone(), None)]);
        assert!(matches!(metric_table(&r, ThresholdMode::Oracle, GroupBy::None), Err(ReportError::NoCompletedCells)));
        assert!(calibration_report(&r).is_err());
        let r = result(vec![(failed, None), (cell("d", "y", "identity"), Some(worked_set()))]);
        assert_eq!(metric_table(&r, ThresholdMode::Oracle, GroupBy::None).unwrap().len(), 1);
    }

    #[test]
    fn worked_set_calibration() {
        let r = result(vec![(cell("d", "x", "identity"), Some(worked_set()))]);
        let rows = calibration_report(&r).unwrap();
        assert_eq!(rows[0].acc_default, 0.75);
        assert_eq!(rows[0].acc_oracle, 0.75);
        assert_eq!(rows[0].delta, 0.0);
        let oracle_rows = metric_table(&r, ThresholdMode::Oracle, GroupBy::None).unwrap();
        assert_eq!(oracle_rows[0].threshold_used, rows[0].oracle_threshold);
    }

    #[test]
    fn all_equal_scores_have_zero_delta() {
        let r = result(vec![(cell("d", "x", "identity"), Some(set(&[(0.3, Fake), (0.3, Real), (0.3, Real)])))]);
        assert_eq!(calibration_report(&r).unwrap()[0].delta, 0.0);
    }

    #[test]
    fn constant_detector_is_transform_invariant() {
        let s = set(&[(1.0, Fake), (1.0, Real), (1.0, Real)]);
        let r = result(
            ["identity", "blur:sigma=2", "jpeg:q=50"]
                .iter()
                .map(|c| (cell("constant:v=1@1", "x", c), Some(s.clone())))
                .collect(),
        );
        let (rows, warnings) = transform_report(&r).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(rows.len(), 3);
        for row in rows {
            assert_eq!(row.tpr.value, Some(1.0));
            assert_eq!(row.tnr.value, Some(0.0));
        }
    }

    #[test]
    fn missing_identity_warns() {
        let r = result(vec![(cell("d", "x", "jpeg:q=50"), Some(worked_set()))]);
        let (rows, warnings) = transform_report(&r).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(warnings, ["detector d has no identity-chain baseline"]);
    }

    #[test]
    fn rendering_rules() {
        let table = Table {
            columns: vec!["name", "tnr", "v"],
            rows: vec![vec![text("a|b, c"), Value::Metric(None), Value::Metric(Some(0.80556))]],
        };
        assert_eq!(render(&table, Format::Csv), "name,tnr,v\n\"a|b, c\",,0.8056\n");
        assert_eq!(render(&table, Format::Markdown), "| name | tnr | v |\n| --- | --- | --- |\n| a\\|b, c | — | 0.8056 |\n");
        assert_eq!(render(&table, Format::Csv), render(&table, Format::Csv));
        assert_eq!(format_metric(-0.00001), "0.0000");
        assert_eq!(format_metric(1.0), "1.0000");
    }

    #[test]
    fn threshold_mode_parsing() {
        assert_eq!("oracle".parse::<ThresholdMode>().unwrap(), ThresholdMode::Oracle);
        assert_eq!("0.5".parse::<ThresholdMode>().unwrap(), ThresholdMode::Fixed(0.5));
        assert!("NaN".parse::<ThresholdMode>().is_err());
        assert!("high".parse::<ThresholdMode>().is_err());
    }

    #[test]
    fn overall_equals_mean_of_rows() {
        let rows: Vec<MetricRow> = (0..7).map(|i| row(0.1 * i as f64 + 0.05, Some(0.3))).collect();
        let agg = aggregate(&rows, AggregateScope::Overall);
        let mean = rows.iter().map(|r| r.acc.unwrap()).sum::<f64>() / 7.0;
        assert!((agg[0].acc.value.unwrap() - mean).abs() < 1e-12);
        assert_eq!(agg[0].key, "all");
    }
}
