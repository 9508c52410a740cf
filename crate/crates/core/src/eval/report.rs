use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use super::{pearson, spearman, EvalError};
use crate::data::{full_outcome_text, LibraryDataset, ReferenceRecord, TruthRow};
use crate::models::OutcomePredictor;
use crate::seqcore::EditSet;

pub const SCATTER_COLUMNS: [&str; 6] = [
    "editor_id",
    "reference_id",
    "outcome_sequence",
    "is_wildtype",
    "predicted",
    "observed",
];
pub const REPORT_COLUMNS: [&str; 5] = ["editor", "view", "n", "pearson", "spearman"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum View {
    /// Every observed outcome plus the wild type, full distribution.
    All,
    /// One wild-type row per reference.
    WildType,
    /// Edited outcomes only, renormalised to the conditional given editing.
    NonWild,
}

impl View {
    pub const ALL: [View; 3] = [View::All, View::WildType, View::NonWild];

    pub fn name(self) -> &'static str {
        match self {
            View::All => "all",
            View::WildType => "wildtype",
            View::NonWild => "nonwild",
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for View {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        View::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| EvalError::UnknownView(s.to_string()))
    }
}

/// How rows are combined into one correlation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Pooling {
    /// One correlation over all rows of the view.
    #[default]
    Pooled,
    /// Mean of per-reference correlations (references with fewer than two rows
    /// or constant values are skipped). The wild-type view is always pooled.
    PerReference,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRow {
    pub editor_id: String,
    pub reference_id: String,
    pub outcome_sequence: String,
    pub is_wildtype: bool,
    pub predicted: f64,
    pub observed: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub editor: String,
    pub view: View,
    pub n: usize,
    pub pearson: f64,
    pub spearman: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    pub fn get(&self, editor: &str, view: View) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.editor == editor && r.view == view)
    }
}

/// A wild-type row (observed 0 when no wild-type reads were seen) followed by
/// one row per observed edited outcome.
fn rows_for_reference(
    ds: &LibraryDataset,
    r: &ReferenceRecord,
    mut predicted: impl FnMut(EditSet) -> f64,
) -> Vec<PredictionRow> {
    let row = |edits: EditSet, predicted: f64, observed: f64| PredictionRow {
        editor_id: ds.editor_id.clone(),
        reference_id: r.id.clone(),
        outcome_sequence: full_outcome_text(&r.reference, ds.editor, edits),
        is_wildtype: edits.is_empty(),
        predicted,
        observed,
    };
    let wt_observed = r.wild_type().map_or(0.0, |o| o.proportion);
    let mut rows = vec![row(EditSet::EMPTY, predicted(EditSet::EMPTY), wt_observed)];
    for o in r.outcomes.iter().filter(|o| !o.is_wild_type()) {
        let e = o.edits();
        rows.push(row(e, predicted(e), o.proportion));
    }
    rows
}

fn sort_rows(rows: &mut [PredictionRow]) {
    rows.sort_by(|a, b| {
        (&a.editor_id, &a.reference_id, &a.outcome_sequence).cmp(&(
            &b.editor_id,
            &b.reference_id,
            &b.outcome_sequence,
        ))
    });
}

/// Predict every reference of every dataset with `workers` threads. Rows come
/// back sorted by (editor, reference, outcome).
pub fn predict_rows(
    predictor: &(dyn OutcomePredictor + Sync),
    datasets: &[LibraryDataset],
    workers: usize,
) -> Result<Vec<PredictionRow>, EvalError> {
    let jobs: Vec<(&LibraryDataset, &ReferenceRecord)> = datasets
        .iter()
        .flat_map(|ds| ds.references.iter().map(move |r| (ds, r)))
        .collect();
    let run =
        |chunk: &[(&LibraryDataset, &ReferenceRecord)]| -> Result<Vec<PredictionRow>, EvalError> {
            let mut out = Vec::new();
            for &(ds, r) in chunk {
                let dist = predictor.predict_distribution(&ds.editor_id, &r.reference)?;
                out.extend(rows_for_reference(ds, r, |e| dist.get(e).unwrap_or(0.0)));
            }
            Ok(out)
        };
    let workers = workers.max(1);
    let mut rows = if workers == 1 || jobs.len() < 2 {
        run(&jobs)?
    } else {
        let size = jobs.len().div_ceil(workers);
        let parts: Vec<Result<Vec<PredictionRow>, EvalError>> = std::thread::scope(|s| {
            let handles: Vec<_> = jobs.chunks(size).map(|c| s.spawn(move || run(c))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("prediction worker panicked"))
                .collect()
        });
        let mut rows = Vec::new();
        for p in parts {
            rows.extend(p?);
        }
        rows
    };
    sort_rows(&mut rows);
    Ok(rows)
}

/// Rows whose predictions are the oracle probabilities of a truth file.
pub fn rows_from_truth(truth: &[TruthRow], datasets: &[LibraryDataset]) -> Vec<PredictionRow> {
    let table: HashMap<(&str, &str, &str), f64> = truth
        .iter()
        .map(|t| {
            (
                (
                    t.editor_id.as_str(),
                    t.reference_id.as_str(),
                    t.outcome_sequence.as_str(),
                ),
                t.probability,
            )
        })
        .collect();
    let mut rows = Vec::new();
    for ds in datasets {
        for r in &ds.references {
            rows.extend(rows_for_reference(ds, r, |e| {
                let text = full_outcome_text(&r.reference, ds.editor, e);
                table
                    .get(&(ds.editor_id.as_str(), r.id.as_str(), text.as_str()))
                    .copied()
                    .unwrap_or(0.0)
            }));
        }
    }
    sort_rows(&mut rows);
    rows
}

fn correlations(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    (
        pearson(xs, ys).unwrap_or(f64::NAN),
        spearman(xs, ys).unwrap_or(f64::NAN),
    )
}

fn mean_finite(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values
        .filter(|v| v.is_finite())
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// `(reference, predicted, observed)` points of one view.
fn view_points<'a>(rows: &[&'a PredictionRow], view: View) -> Vec<(&'a str, f64, f64)> {
    match view {
        View::All => rows
            .iter()
            .map(|r| (r.reference_id.as_str(), r.predicted, r.observed))
            .collect(),
        View::WildType => rows
            .iter()
            .filter(|r| r.is_wildtype)
            .map(|r| (r.reference_id.as_str(), r.predicted, r.observed))
            .collect(),
        View::NonWild => {
            let wt: HashMap<&str, (f64, f64)> = rows
                .iter()
                .filter(|r| r.is_wildtype)
                .map(|r| (r.reference_id.as_str(), (r.predicted, r.observed)))
                .collect();
            rows.iter()
                .filter(|r| !r.is_wildtype)
                .map(|r| {
                    let (pw, ow) = wt
                        .get(r.reference_id.as_str())
                        .copied()
                        .unwrap_or((0.0, 0.0));
                    let p = r.predicted / (1.0 - pw).max(f64::MIN_POSITIVE);
                    let o = r.observed / (1.0 - ow).max(f64::MIN_POSITIVE);
                    (r.reference_id.as_str(), p, o)
                })
                .collect()
        }
    }
}

/// Per-editor correlations for each requested view, computed from one set of rows.
pub fn evaluate(
    rows: &[PredictionRow],
    views: &[View],
    pooling: Pooling,
) -> Result<EvalReport, EvalError> {
    let mut editors: Vec<&str> = Vec::new();
    let mut by_editor: HashMap<&str, Vec<&PredictionRow>> = HashMap::new();
    for r in rows {
        let entry = by_editor.entry(r.editor_id.as_str()).or_default();
        if entry.is_empty() {
            editors.push(&r.editor_id);
        }
        entry.push(r);
    }
    editors.sort_unstable();
    let mut report = EvalReport::default();
    for editor in editors {
        let editor_rows = &by_editor[editor];
        for &view in views {
            let points = view_points(editor_rows, view);
            if points.is_empty() {
                return Err(EvalError::EmptyView {
                    editor: editor.to_string(),
                    view,
                });
            }
            let (pearson, spearman) = if pooling == Pooling::PerReference && view != View::WildType
            {
                let mut groups: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
                let mut last: Option<&str> = None;
                for &(reference, p, o) in &points {
                    if last != Some(reference) {
                        groups.push((Vec::new(), Vec::new()));
                        last = Some(reference);
                    }
                    let g = groups.last_mut().expect("group was just pushed");
                    g.0.push(p);
                    g.1.push(o);
                }
                let per_ref: Vec<(f64, f64)> =
                    groups.iter().map(|(p, o)| correlations(p, o)).collect();
                (
                    mean_finite(per_ref.iter().map(|c| c.0)),
                    mean_finite(per_ref.iter().map(|c| c.1)),
                )
            } else {
                let p: Vec<f64> = points.iter().map(|t| t.1).collect();
                let o: Vec<f64> = points.iter().map(|t| t.2).collect();
                correlations(&p, &o)
            };
            report.rows.push(ReportRow {
                editor: editor.to_string(),
                view,
                n: points.len(),
                pearson,
                spearman,
            });
        }
    }
    Ok(report)
}

/// Predict, then evaluate the requested views from that single prediction pass.
pub fn evaluate_predictor(
    predictor: &(dyn OutcomePredictor + Sync),
    datasets: &[LibraryDataset],
    views: &[View],
    pooling: Pooling,
    workers: usize,
) -> Result<(Vec<PredictionRow>, EvalReport), EvalError> {
    let rows = predict_rows(predictor, datasets, workers)?;
    let report = evaluate(&rows, views, pooling)?;
    Ok((rows, report))
}

pub fn report_to_string(report: &EvalReport) -> String {
    let mut out = REPORT_COLUMNS.join("\t");
    out.push('\n');
    for r in &report.rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{:.6}\t{:.6}\n",
            r.editor, r.view, r.n, r.pearson, r.spearman
        ));
    }
    out
}

pub fn write_report(report: &EvalReport, path: impl AsRef<Path>) -> Result<(), EvalError> {
    write_file(path.as_ref(), &report_to_string(report))
}

fn parse_err(line: usize, message: impl Into<String>) -> EvalError {
    EvalError::Parse {
        line,
        message: message.into(),
    }
}

fn check_header(text: &str, columns: &[&str]) -> Result<(), EvalError> {
    let header = text.lines().next().unwrap_or_default();
    if header.split('\t').ne(columns.iter().copied()) {
        return Err(parse_err(
            1,
            format!("expected header {:?}", columns.join("\t")),
        ));
    }
    Ok(())
}

fn parse_f64(field: &str, line: usize) -> Result<f64, EvalError> {
    field
        .parse()
        .map_err(|_| parse_err(line, format!("not a number: {field:?}")))
}

pub fn read_report(text: &str) -> Result<EvalReport, EvalError> {
    check_header(text, &REPORT_COLUMNS)?;
    let mut report = EvalReport::default();
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != REPORT_COLUMNS.len() {
            return Err(parse_err(i + 1, "wrong number of fields"));
        }
        report.rows.push(ReportRow {
            editor: f[0].to_string(),
            view: f[1].parse()?,
            n: f[2]
                .parse()
                .map_err(|_| parse_err(i + 1, "bad row count"))?,
            pearson: parse_f64(f[3], i + 1)?,
            spearman: parse_f64(f[4], i + 1)?,
        });
    }
    Ok(report)
}

/// Scatter TSV, sorted by (editor, reference, outcome). Values use the shortest
/// exact decimal form so a reload reproduces them bit for bit.
pub fn scatter_to_string(rows: &[PredictionRow]) -> String {
    let mut sorted = rows.to_vec();
    sort_rows(&mut sorted);
    let mut out = SCATTER_COLUMNS.join("\t");
    out.push('\n');
    for r in &sorted {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            r.editor_id,
            r.reference_id,
            r.outcome_sequence,
            u8::from(r.is_wildtype),
            r.predicted,
            r.observed
        ));
    }
    out
}

pub fn read_scatter(text: &str) -> Result<Vec<PredictionRow>, EvalError> {
    check_header(text, &SCATTER_COLUMNS)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != SCATTER_COLUMNS.len() {
            return Err(parse_err(i + 1, "wrong number of fields"));
        }
        let is_wildtype = match f[3] {
            "1" => true,
            "0" => false,
            other => {
                return Err(parse_err(
                    i + 1,
                    format!("is_wildtype must be 0 or 1, got {other:?}"),
                ))
            }
        };
        rows.push(PredictionRow {
            editor_id: f[0].to_string(),
            reference_id: f[1].to_string(),
            outcome_sequence: f[2].to_string(),
            is_wildtype,
            predicted: parse_f64(f[4], i + 1)?,
            observed: parse_f64(f[5], i + 1)?,
        });
    }
    Ok(rows)
}

pub fn export_scatter(rows: &[PredictionRow], path: impl AsRef<Path>) -> Result<(), EvalError> {
    if rows.is_empty() {
        return Err(EvalError::DegenerateInput(
            "no prediction rows to export".into(),
        ));
    }
    write_file(path.as_ref(), &scatter_to_string(rows))
}

pub fn load_scatter(path: impl AsRef<Path>) -> Result<Vec<PredictionRow>, EvalError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_scatter(&text)
}

fn write_file(path: &Path, text: &str) -> Result<(), EvalError> {
    std::fs::write(path, text).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })
}
