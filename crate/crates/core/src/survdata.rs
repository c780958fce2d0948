//! Canonical in-memory survival data model plus CSV ingestion and validation.
//!
//! Data is held in start-stop form: each subject contributes one or more
//! [`SubjectSpan`]s covering contiguous half-open intervals `(t_start, t_end]`.
//! A simple one-row-per-subject layout is normalized to a single span at load
//! time. Feature values are constant on a span; a feature change starts a new
//! span.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kind of a feature column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeatureKind {
    Numeric,
    /// Dictionary-encoded labels; the stored value is the index into `levels`.
    Categorical { levels: Vec<String> },
}

/// One feature column: a name and how its values are encoded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureColumn {
    pub name: String,
    pub kind: FeatureKind,
}

impl FeatureColumn {
    pub fn numeric(name: &str) -> Self {
        FeatureColumn {
            name: name.to_string(),
            kind: FeatureKind::Numeric,
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.kind, FeatureKind::Categorical { .. })
    }
}

/// Ordered feature columns; the order matches every span's feature vector.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub columns: Vec<FeatureColumn>,
}

impl FeatureSchema {
    pub fn new(columns: Vec<FeatureColumn>) -> Self {
        FeatureSchema { columns }
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }
}

/// One span of a subject's trajectory over `(t_start, t_end]`.
///
/// `status` is the event indicator and is meaningful only on the last span of
/// a trajectory; `cause` identifies the event type `k` in `1..=K` and is
/// required when `status == 1` on multi-cause data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSpan {
    pub subject_id: String,
    pub t_start: f64,
    pub t_end: f64,
    pub status: u8,
    pub cause: Option<usize>,
    pub features: Vec<f64>,
}

/// Subject-level survival data with its feature schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalDataset {
    pub spans: Vec<SubjectSpan>,
    pub schema: FeatureSchema,
    /// Number of transitions / event types K (>= 1).
    pub n_causes: usize,
    /// Optional (origin, destination) state pair per transition.
    pub transition_labels: Option<Vec<(u32, u32)>>,
}

/// A subject's trajectory: indices of its spans in dataset order, sorted by
/// `t_start`, plus the derived entry/exit/outcome summary.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub subject_id: String,
    /// Risk-set entry time (left truncation when > 0).
    pub entry: f64,
    /// Observed event or censoring time.
    pub exit: f64,
    pub status: u8,
    pub cause: Option<usize>,
    /// Indices into `SurvivalDataset::spans`, ordered by `t_start`.
    pub span_indices: Vec<usize>,
}

impl SurvivalDataset {
    pub fn new(spans: Vec<SubjectSpan>, schema: FeatureSchema, n_causes: usize) -> Self {
        SurvivalDataset {
            spans,
            schema,
            n_causes,
            transition_labels: None,
        }
    }

    pub fn n_features(&self) -> usize {
        self.schema.len()
    }

    /// Group spans into per-subject trajectories, in order of first
    /// appearance of each subject id. Spans within a subject are ordered by
    /// `t_start`.
    pub fn trajectories(&self) -> Vec<Trajectory> {
        let mut order: Vec<String> = Vec::new();
        let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, s) in self.spans.iter().enumerate() {
            if !groups.contains_key(s.subject_id.as_str()) {
                order.push(s.subject_id.clone());
            }
            groups.entry(s.subject_id.as_str()).or_default().push(i);
        }
        order
            .into_iter()
            .map(|id| {
                let mut idx = groups.remove(id.as_str()).unwrap_or_default();
                idx.sort_by(|&a, &b| {
                    self.spans[a]
                        .t_start
                        .total_cmp(&self.spans[b].t_start)
                });
                let entry = self.spans[idx[0]].t_start;
                let last = *idx.last().unwrap();
                Trajectory {
                    subject_id: id,
                    entry,
                    exit: self.spans[last].t_end,
                    status: self.spans[last].status,
                    cause: self.spans[last].cause,
                    span_indices: idx,
                }
            })
            .collect()
    }

    /// Number of distinct subjects.
    pub fn n_subjects(&self) -> usize {
        self.trajectories().len()
    }

    /// Maximum exit time over all subjects, 0 for an empty dataset.
    pub fn max_time(&self) -> f64 {
        self.spans.iter().fold(0.0, |m, s| m.max(s.t_end))
    }

    /// Keep only the subjects whose index (in trajectory order) is in `keep`.
    pub fn subset(&self, keep: &[usize]) -> SurvivalDataset {
        let trajs = self.trajectories();
        let mut spans = Vec::new();
        for &i in keep {
            for &si in &trajs[i].span_indices {
                spans.push(self.spans[si].clone());
            }
        }
        SurvivalDataset {
            spans,
            schema: self.schema.clone(),
            n_causes: self.n_causes,
            transition_labels: self.transition_labels.clone(),
        }
    }

    /// Normalize span order: subjects by first appearance, spans by t_start.
    pub fn normalized(&self) -> SurvivalDataset {
        let trajs = self.trajectories();
        let mut spans = Vec::with_capacity(self.spans.len());
        for t in &trajs {
            for &si in &t.span_indices {
                spans.push(self.spans[si].clone());
            }
        }
        SurvivalDataset {
            spans,
            schema: self.schema.clone(),
            n_causes: self.n_causes,
            transition_labels: self.transition_labels.clone(),
        }
    }
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

/// A single invariant violation; violations are data, not errors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub subject_id: String,
    pub rule: String,
    pub detail: String,
}

fn violation(subject: &str, rule: &str, detail: String) -> Violation {
    Violation {
        subject_id: subject.to_string(),
        rule: rule.to_string(),
        detail,
    }
}

/// Check every dataset invariant; returns an empty list iff all hold.
pub fn validate(ds: &SurvivalDataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let width = ds.schema.len();
    for s in &ds.spans {
        if !(s.t_start < s.t_end) {
            out.push(violation(
                &s.subject_id,
                "nonpositive duration",
                format!("span ({}, {}] has t_start >= t_end", s.t_start, s.t_end),
            ));
        }
        if s.t_start < 0.0 {
            out.push(violation(
                &s.subject_id,
                "negative time",
                format!("t_start = {}", s.t_start),
            ));
        }
        if s.status > 1 {
            out.push(violation(
                &s.subject_id,
                "bad status",
                format!("status = {}", s.status),
            ));
        }
        if s.features.len() != width {
            out.push(violation(
                &s.subject_id,
                "feature width",
                format!("expected {} features, got {}", width, s.features.len()),
            ));
        }
        if let Some(c) = s.cause {
            if c == 0 || c > ds.n_causes {
                out.push(violation(
                    &s.subject_id,
                    "cause out of range",
                    format!("cause {} not in 1..={}", c, ds.n_causes),
                ));
            }
        }
        for (j, col) in ds.schema.columns.iter().enumerate() {
            if let FeatureKind::Categorical { levels } = &col.kind {
                if let Some(&v) = s.features.get(j) {
                    if v.fract() != 0.0 || v < 0.0 || (v as usize) >= levels.len() {
                        out.push(violation(
                            &s.subject_id,
                            "unknown category",
                            format!("feature '{}' code {}", col.name, v),
                        ));
                    }
                }
            }
        }
    }
    for t in ds.trajectories() {
        for w in t.span_indices.windows(2) {
            let a = &ds.spans[w[0]];
            let b = &ds.spans[w[1]];
            if b.t_start < a.t_end {
                out.push(violation(
                    &t.subject_id,
                    "overlap",
                    format!(
                        "span starting at {} overlaps span ending at {}",
                        b.t_start, a.t_end
                    ),
                ));
            } else if b.t_start > a.t_end {
                out.push(violation(
                    &t.subject_id,
                    "gap",
                    format!("gap between {} and {}", a.t_end, b.t_start),
                ));
            }
        }
        let last = *t.span_indices.last().unwrap();
        for &si in &t.span_indices {
            if si != last && ds.spans[si].status == 1 {
                out.push(violation(
                    &t.subject_id,
                    "status not terminal",
                    format!("status = 1 on span ending at {}", ds.spans[si].t_end),
                ));
            }
        }
        if t.status == 1 && ds.n_causes > 1 && t.cause.is_none() {
            out.push(violation(
                &t.subject_id,
                "missing cause",
                format!("event without cause with K = {}", ds.n_causes),
            ));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

/// Column-mapping configuration for CSV ingestion.
///
/// Exactly one of `time` (simple layout) or `tstart`/`tstop` (start-stop
/// layout) must be set. In the simple layout every subject gets a single span
/// with `t_start = 0` unless an `entry` column is mapped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub id: String,
    pub time: Option<String>,
    pub tstart: Option<String>,
    pub tstop: Option<String>,
    pub entry: Option<String>,
    pub status: String,
    pub cause: Option<String>,
    pub features: Vec<String>,
    /// Feature columns to dictionary-encode as categorical.
    pub categorical: Vec<String>,
    /// Field delimiter, default `,`.
    pub delimiter: u8,
    /// Number of event types K; inferred from the cause column when absent.
    pub n_causes: Option<usize>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            id: "id".to_string(),
            time: Some("time".to_string()),
            tstart: None,
            tstop: None,
            entry: None,
            status: "status".to_string(),
            cause: None,
            features: Vec::new(),
            categorical: Vec::new(),
            delimiter: b',',
            n_causes: None,
        }
    }
}

impl CsvSchema {
    /// Simple layout with the given feature columns.
    pub fn simple(features: &[&str]) -> Self {
        CsvSchema {
            features: features.iter().map(|s| s.to_string()).collect(),
            ..CsvSchema::default()
        }
    }

    /// Start-stop layout with the given feature columns.
    pub fn start_stop(features: &[&str]) -> Self {
        CsvSchema {
            time: None,
            tstart: Some("tstart".to_string()),
            tstop: Some("tstop".to_string()),
            features: features.iter().map(|s| s.to_string()).collect(),
            ..CsvSchema::default()
        }
    }

    fn check_layout(&self) -> Result<()> {
        let simple = self.time.is_some();
        let span = self.tstart.is_some() || self.tstop.is_some();
        if simple && span {
            return Err(Error::Schema(
                "map either a time column or tstart/tstop columns, not both".into(),
            ));
        }
        if !simple && !(self.tstart.is_some() && self.tstop.is_some()) {
            return Err(Error::Schema(
                "start-stop layout requires both tstart and tstop columns".into(),
            ));
        }
        if span && self.entry.is_some() {
            return Err(Error::Schema(
                "entry column applies to the simple layout only; start-stop already carries entry times".into(),
            ));
        }
        Ok(())
    }
}

struct ColumnIdx {
    id: usize,
    time: Option<usize>,
    tstart: Option<usize>,
    tstop: Option<usize>,
    entry: Option<usize>,
    status: usize,
    cause: Option<usize>,
    features: Vec<usize>,
}

fn find_col(header: &csv::StringRecord, name: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Schema(format!("missing column '{name}'")))
}

fn resolve_columns(header: &csv::StringRecord, schema: &CsvSchema) -> Result<ColumnIdx> {
    Ok(ColumnIdx {
        id: find_col(header, &schema.id)?,
        time: schema.time.as_deref().map(|c| find_col(header, c)).transpose()?,
        tstart: schema
            .tstart
            .as_deref()
            .map(|c| find_col(header, c))
            .transpose()?,
        tstop: schema
            .tstop
            .as_deref()
            .map(|c| find_col(header, c))
            .transpose()?,
        entry: schema
            .entry
            .as_deref()
            .map(|c| find_col(header, c))
            .transpose()?,
        status: find_col(header, &schema.status)?,
        cause: schema
            .cause
            .as_deref()
            .map(|c| find_col(header, c))
            .transpose()?,
        features: schema
            .features
            .iter()
            .map(|c| find_col(header, c))
            .collect::<Result<Vec<_>>>()?,
    })
}

fn row_err(row: usize, message: String) -> Error {
    Error::Row { row, message }
}

fn parse_f64(field: &str, row: usize, col: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| row_err(row, format!("non-numeric value '{field}' in column '{col}'")))
}

/// Load a survival dataset from a CSV file.
pub fn load_csv<P: AsRef<Path>>(path: P, schema: &CsvSchema) -> Result<SurvivalDataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file, schema, None)
}

/// Load using a frozen feature schema (categorical encodings from training).
/// Unknown labels in frozen categorical columns are row errors.
pub fn load_csv_with_schema<P: AsRef<Path>>(
    path: P,
    schema: &CsvSchema,
    frozen: &FeatureSchema,
) -> Result<SurvivalDataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file, schema, Some(frozen))
}

/// Load a survival dataset from any reader (see [`load_csv`]).
pub fn read_csv<R: Read>(
    reader: R,
    schema: &CsvSchema,
    frozen: Option<&FeatureSchema>,
) -> Result<SurvivalDataset> {
    schema.check_layout()?;
    if let Some(f) = frozen {
        if f.len() != schema.features.len() {
            return Err(Error::SchemaMismatch(format!(
                "frozen schema has {} features, mapping names {}",
                f.len(),
                schema.features.len()
            )));
        }
    }

    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let cols = resolve_columns(&header, schema)?;

    // Feature columns: categorical ones get a dictionary built up in
    // first-appearance order (or taken from the frozen schema).
    let mut columns: Vec<FeatureColumn> = Vec::with_capacity(schema.features.len());
    for name in &schema.features {
        if schema.categorical.contains(name) {
            let levels = match frozen {
                Some(f) => match &f.columns[columns.len()].kind {
                    FeatureKind::Categorical { levels } => levels.clone(),
                    FeatureKind::Numeric => {
                        return Err(Error::SchemaMismatch(format!(
                            "feature '{name}' is categorical here but numeric in the frozen schema"
                        )))
                    }
                },
                None => Vec::new(),
            };
            columns.push(FeatureColumn {
                name: name.clone(),
                kind: FeatureKind::Categorical { levels },
            });
        } else {
            columns.push(FeatureColumn::numeric(name));
        }
    }

    let mut spans: Vec<SubjectSpan> = Vec::new();
    let mut n_causes_seen = 0usize;

    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        let get = |c: usize| -> &str { rec.get(c).unwrap_or("") };

        let subject_id = get(cols.id).trim().to_string();
        if subject_id.is_empty() {
            return Err(row_err(row, "empty subject id".into()));
        }

        let (t_start, t_end) = match (cols.time, cols.tstart, cols.tstop) {
            (Some(tc), _, _) => {
                let t = parse_f64(get(tc), row, schema.time.as_deref().unwrap())?;
                let start = match cols.entry {
                    Some(ec) => parse_f64(get(ec), row, schema.entry.as_deref().unwrap())?,
                    None => 0.0,
                };
                (start, t)
            }
            (None, Some(sc), Some(ec)) => (
                parse_f64(get(sc), row, schema.tstart.as_deref().unwrap())?,
                parse_f64(get(ec), row, schema.tstop.as_deref().unwrap())?,
            ),
            _ => unreachable!("layout checked above"),
        };
        if t_start < 0.0 {
            return Err(row_err(row, format!("negative entry time {t_start}")));
        }
        if !(t_end > t_start) {
            return Err(row_err(
                row,
                format!("exit time {t_end} not greater than entry time {t_start}"),
            ));
        }

        let status_raw = parse_f64(get(cols.status), row, &schema.status)?;
        let status = if status_raw == 0.0 {
            0u8
        } else if status_raw == 1.0 {
            1u8
        } else {
            return Err(row_err(
                row,
                format!("status {status_raw} outside {{0, 1}}"),
            ));
        };

        let cause = match cols.cause {
            Some(cc) => {
                let raw = get(cc).trim();
                if raw.is_empty() {
                    None
                } else {
                    let v = parse_f64(raw, row, schema.cause.as_deref().unwrap())?;
                    if v.fract() != 0.0 || v < 1.0 {
                        return Err(row_err(row, format!("cause {v} is not a positive integer")));
                    }
                    let c = v as usize;
                    if let Some(k) = schema.n_causes {
                        if c > k {
                            return Err(row_err(row, format!("cause {c} outside 1..={k}")));
                        }
                    }
                    n_causes_seen = n_causes_seen.max(c);
                    Some(c)
                }
            }
            None => None,
        };
        if status == 1 && cause.is_none() {
            if let Some(k) = schema.n_causes {
                if k > 1 {
                    return Err(row_err(row, format!("event row without cause while K = {k}")));
                }
            }
        }

        let mut features = Vec::with_capacity(cols.features.len());
        for (fi, &fc) in cols.features.iter().enumerate() {
            let raw = get(fc).trim();
            if raw.is_empty() {
                return Err(row_err(
                    row,
                    format!("missing value in feature column '{}'", schema.features[fi]),
                ));
            }
            match &mut columns[fi].kind {
                FeatureKind::Numeric => features.push(parse_f64(raw, row, &schema.features[fi])?),
                FeatureKind::Categorical { levels } => {
                    let code = match levels.iter().position(|l| l == raw) {
                        Some(c) => c,
                        None if frozen.is_some() => {
                            return Err(row_err(
                                row,
                                format!(
                                    "unknown category '{raw}' for feature '{}'",
                                    schema.features[fi]
                                ),
                            ))
                        }
                        None => {
                            levels.push(raw.to_string());
                            levels.len() - 1
                        }
                    };
                    features.push(code as f64);
                }
            }
        }

        spans.push(SubjectSpan {
            subject_id,
            t_start,
            t_end,
            status,
            cause,
            features,
        });
    }

    let n_causes = schema.n_causes.unwrap_or_else(|| n_causes_seen.max(1));
    let ds = SurvivalDataset {
        spans,
        schema: FeatureSchema::new(columns),
        n_causes,
        transition_labels: None,
    }
    .normalized();

    // Per-trajectory structure checks, reported against the offending subject.
    let violations = validate(&ds);
    if let Some(v) = violations.first() {
        return Err(Error::Row {
            row: 0,
            message: format!("subject {}: {} ({})", v.subject_id, v.rule, v.detail),
        });
    }
    Ok(ds)
}

/// Write a dataset in start-stop layout (id, tstart, tstop, status, cause,
/// features...). Categorical features are written back as their labels.
pub fn write_csv<P: AsRef<Path>>(ds: &SurvivalDataset, path: P) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv_to(ds, file)
}

pub fn write_csv_to<W: Write>(ds: &SurvivalDataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec![
        "id".to_string(),
        "tstart".to_string(),
        "tstop".to_string(),
        "status".to_string(),
        "cause".to_string(),
    ];
    header.extend(ds.schema.columns.iter().map(|c| c.name.clone()));
    wtr.write_record(&header)?;
    for s in &ds.spans {
        let mut rec = vec![
            s.subject_id.clone(),
            format!("{}", s.t_start),
            format!("{}", s.t_end),
            format!("{}", s.status),
            s.cause.map(|c| c.to_string()).unwrap_or_default(),
        ];
        for (j, col) in ds.schema.columns.iter().enumerate() {
            match &col.kind {
                FeatureKind::Numeric => rec.push(format!("{}", s.features[j])),
                FeatureKind::Categorical { levels } => {
                    rec.push(levels[s.features[j] as usize].clone())
                }
            }
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// The CSV schema matching [`write_csv`] output for a given dataset.
pub fn round_trip_schema(ds: &SurvivalDataset) -> CsvSchema {
    CsvSchema {
        id: "id".into(),
        time: None,
        tstart: Some("tstart".into()),
        tstop: Some("tstop".into()),
        entry: None,
        status: "status".into(),
        cause: Some("cause".into()),
        features: ds.schema.columns.iter().map(|c| c.name.clone()).collect(),
        categorical: ds
            .schema
            .columns
            .iter()
            .filter(|c| c.is_categorical())
            .map(|c| c.name.clone())
            .collect(),
        delimiter: b',',
        n_causes: Some(ds.n_causes),
    }
}
