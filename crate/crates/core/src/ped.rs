//! Cut-point selection and the survival-to-Poisson data augmentation.
//!
//! The follow-up is partitioned by cut-points `0 = κ_0 < κ_1 < ... < κ_J`.
//! Each subject contributes one row per interval it is at risk in, per
//! transition: the row carries the event label for that interval/transition,
//! the time under risk in the interval (`exposure`, the Poisson offset is its
//! log), the interval representation time `t_j = κ_j` and the transition
//! index `k` appended as model features. Competing risks stack one copy of a
//! subject's rows per transition, with labels one-hot across transitions at
//! the terminal interval.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::survdata::{FeatureColumn, FeatureKind, FeatureSchema, SurvivalDataset};

/// Reserved column names of the PED CSV layout; base features must not
/// collide with them.
pub const RESERVED_PED_COLUMNS: [&str; 6] = ["id", "j", "tj", "toff", "label", "k"];

/// Interval boundaries `κ_0 = 0 < κ_1 < ... < κ_J`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutPoints {
    kappa: Vec<f64>,
}

impl CutPoints {
    /// Build from the full boundary list including the leading zero.
    pub fn new(kappa: Vec<f64>) -> Result<Self> {
        if kappa.len() < 2 {
            return Err(Error::CutPoints(
                "need at least one positive cut-point".into(),
            ));
        }
        if kappa[0] != 0.0 {
            return Err(Error::CutPoints(format!(
                "first cut-point must be 0, got {}",
                kappa[0]
            )));
        }
        for w in kappa.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::CutPoints(format!(
                    "cut-points not strictly increasing at {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(CutPoints { kappa })
    }

    /// Build from positive cut-points; the leading zero is prepended.
    pub fn from_positive(mut cuts: Vec<f64>) -> Result<Self> {
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        if cuts.first().is_some_and(|&c| c <= 0.0) {
            return Err(Error::CutPoints("cut-points must be positive".into()));
        }
        let mut kappa = Vec::with_capacity(cuts.len() + 1);
        kappa.push(0.0);
        kappa.extend(cuts);
        CutPoints::new(kappa)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.kappa
    }

    /// Number of intervals J.
    pub fn n_intervals(&self) -> usize {
        self.kappa.len() - 1
    }

    /// Right endpoint `κ_j` of 1-based interval `j`.
    pub fn right(&self, j: usize) -> f64 {
        self.kappa[j]
    }

    /// Left endpoint `κ_{j-1}` of 1-based interval `j`.
    pub fn left(&self, j: usize) -> f64 {
        self.kappa[j - 1]
    }

    pub fn width(&self, j: usize) -> f64 {
        self.kappa[j] - self.kappa[j - 1]
    }

    pub fn max(&self) -> f64 {
        *self.kappa.last().unwrap()
    }

    /// 1-based interval containing `t` under the half-open convention
    /// `t ∈ (κ_{j-1}, κ_j]`. `None` when `t <= 0` or beyond the last cut.
    pub fn interval_of(&self, t: f64) -> Option<usize> {
        if !(t > 0.0) || t > self.max() {
            return None;
        }
        // first index j >= 1 with kappa[j] >= t
        let j = self.kappa.partition_point(|&k| k < t);
        Some(j)
    }

    /// First 1-based interval a subject entering at `entry` is at risk in:
    /// the first interval with `κ_j > entry` (entry at exactly `κ_j` starts
    /// at interval `j + 1`).
    pub fn entry_interval(&self, entry: f64) -> Option<usize> {
        let j = self.kappa.partition_point(|&k| k <= entry);
        if j >= self.kappa.len() {
            None
        } else {
            Some(j)
        }
    }
}

/// Cut-point selection strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CutStrategy {
    /// Cut-points at all unique event times, plus the maximum follow-up time
    /// when it exceeds the last event time.
    AllEvents,
    /// Same rule applied to the event times of a uniform random sub-sample
    /// of `n` subjects; the maximum follow-up still comes from the full data.
    Subsample { n: usize, seed: u64 },
    /// User-supplied positive cut-points.
    Explicit(Vec<f64>),
}

/// Select cut-points from a dataset according to `strategy`.
pub fn make_cutpoints(ds: &SurvivalDataset, strategy: &CutStrategy) -> Result<CutPoints> {
    match strategy {
        CutStrategy::Explicit(cuts) => CutPoints::from_positive(cuts.clone()),
        CutStrategy::AllEvents => cutpoints_from_events(ds, None),
        CutStrategy::Subsample { n, seed } => {
            if *n == 0 {
                return Err(Error::Parameter("sub-sample size must be positive".into()));
            }
            let n_subjects = ds.n_subjects();
            let take = (*n).min(n_subjects);
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let chosen = rand::seq::index::sample(&mut rng, n_subjects, take).into_vec();
            cutpoints_from_events(ds, Some(&chosen))
        }
    }
}

fn cutpoints_from_events(ds: &SurvivalDataset, subjects: Option<&[usize]>) -> Result<CutPoints> {
    let trajs = ds.trajectories();
    let mut events: Vec<f64> = match subjects {
        Some(keep) => keep
            .iter()
            .filter_map(|&i| (trajs[i].status == 1).then_some(trajs[i].exit))
            .collect(),
        None => trajs
            .iter()
            .filter_map(|t| (t.status == 1).then_some(t.exit))
            .collect(),
    };
    if events.is_empty() {
        return Err(Error::CutPoints("no event times to place cut-points".into()));
    }
    let max_follow_up = ds.max_time();
    events.sort_by(f64::total_cmp);
    events.dedup();
    if max_follow_up > *events.last().unwrap() {
        events.push(max_follow_up);
    }
    CutPoints::from_positive(events)
}

/// One augmented row: subject x interval x transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PedRow {
    /// Index into [`PedDataset::subject_ids`].
    pub subject: usize,
    /// 1-based interval index j.
    pub interval: usize,
    /// Interval representation time `t_j = κ_j`.
    pub t_right: f64,
    /// Time under risk in the interval (`t_ij` > 0); offset is `ln(exposure)`.
    pub exposure: f64,
    /// Event label `δ_ijk`.
    pub label: u8,
    /// 1-based transition index k.
    pub transition: usize,
    /// Model features: base features with `t_j` and `k` appended.
    pub features: Vec<f64>,
}

/// Augmented piece-wise exponential data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PedDataset {
    pub rows: Vec<PedRow>,
    pub cutpoints: CutPoints,
    /// Base features plus the appended `tj` (numeric) and `k` (categorical).
    pub schema: FeatureSchema,
    pub n_causes: usize,
    /// Unique subject ids, in first-appearance order.
    pub subject_ids: Vec<String>,
}

impl PedDataset {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Number of base features (excludes the appended `tj` and `k`).
    pub fn n_base_features(&self) -> usize {
        self.schema.len() - 2
    }

    /// Schema restricted to the base features.
    pub fn base_schema(&self) -> FeatureSchema {
        FeatureSchema::new(self.schema.columns[..self.n_base_features()].to_vec())
    }

    pub fn total_events(&self) -> usize {
        self.rows.iter().map(|r| r.label as usize).sum()
    }
}

/// Feature aggregation notice: a feature changed strictly inside an interval
/// and last-value-carried-forward was applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LvcfWarning {
    pub subject_id: String,
    pub interval: usize,
}

/// Schema of the two appended model features.
fn appended_columns(n_causes: usize) -> [FeatureColumn; 2] {
    [
        FeatureColumn::numeric("tj"),
        FeatureColumn {
            name: "k".to_string(),
            kind: FeatureKind::Categorical {
                levels: (1..=n_causes).map(|k| k.to_string()).collect(),
            },
        },
    ]
}

/// Transform survival data into PED rows under the given cut-points.
///
/// Emits rows in canonical `(k, subject, j)` order. Returns the augmented
/// dataset together with any last-value-carried-forward aggregation warnings.
pub fn transform(
    ds: &SurvivalDataset,
    cutpoints: &CutPoints,
) -> Result<(PedDataset, Vec<LvcfWarning>)> {
    for col in &ds.schema.columns {
        if RESERVED_PED_COLUMNS.contains(&col.name.as_str()) {
            return Err(Error::Schema(format!(
                "feature name '{}' collides with a reserved PED column",
                col.name
            )));
        }
    }
    let trajs = ds.trajectories();
    for t in &trajs {
        if t.exit > cutpoints.max() {
            return Err(Error::Coverage {
                subject: t.subject_id.clone(),
                time: t.exit,
                max: cutpoints.max(),
            });
        }
    }

    let subject_ids: Vec<String> = trajs.iter().map(|t| t.subject_id.clone()).collect();
    let mut rows = Vec::new();
    let mut warnings = Vec::new();

    for k in 1..=ds.n_causes {
        for (si, t) in trajs.iter().enumerate() {
            let Some(first) = cutpoints.entry_interval(t.entry) else {
                // entry at or beyond the last cut-point: never at risk
                continue;
            };
            let last = cutpoints
                .interval_of(t.exit)
                .expect("coverage checked above");
            let event_cause = t.cause.unwrap_or(1);
            for j in first..=last {
                let a = cutpoints.left(j).max(t.entry);
                let b = cutpoints.right(j).min(t.exit);
                let exposure = b - a;
                if !(exposure > 0.0) {
                    continue;
                }
                let label = u8::from(j == last && t.status == 1 && event_cause == k);

                // Feature values active at the start of the at-risk stretch in
                // this interval; a feature change strictly inside it falls back
                // to last-value-carried-forward.
                let mut active = t.span_indices[0];
                let mut boundary_inside = false;
                for &si2 in &t.span_indices {
                    let s = &ds.spans[si2];
                    if s.t_start <= a && a < s.t_end {
                        active = si2;
                    }
                    if s.t_start > a && s.t_start < b {
                        boundary_inside = true;
                    }
                }
                if boundary_inside && k == 1 {
                    warnings.push(LvcfWarning {
                        subject_id: t.subject_id.clone(),
                        interval: j,
                    });
                }

                let mut features = ds.spans[active].features.clone();
                features.push(cutpoints.right(j));
                features.push(k as f64);
                rows.push(PedRow {
                    subject: si,
                    interval: j,
                    t_right: cutpoints.right(j),
                    exposure,
                    label,
                    transition: k,
                    features,
                });
            }
        }
    }

    let mut columns = ds.schema.columns.clone();
    columns.extend(appended_columns(ds.n_causes));
    Ok((
        PedDataset {
            rows,
            cutpoints: cutpoints.clone(),
            schema: FeatureSchema::new(columns),
            n_causes: ds.n_causes,
            subject_ids,
        },
        warnings,
    ))
}

/// Poisson/PEM log-likelihood `Σ (δ ln λ − λ t_off)` for per-row hazards.
///
/// Equals the survival log-likelihood `Σ_i ln(λ(t_i)^δ_i S(t_i))` exactly,
/// and the full Poisson log-likelihood up to the additive constant
/// `Σ δ ln(t_off)`.
pub fn ped_loglik(ped: &PedDataset, hazards: &[f64]) -> Result<f64> {
    if hazards.len() != ped.rows.len() {
        return Err(Error::Parameter(format!(
            "{} hazards for {} rows",
            hazards.len(),
            ped.rows.len()
        )));
    }
    let mut ll = 0.0;
    for (i, (row, &lam)) in ped.rows.iter().zip(hazards).enumerate() {
        if !(lam > 0.0) {
            return Err(Error::NonPositiveHazard { row: i, value: lam });
        }
        ll += f64::from(row.label) * lam.ln() - lam * row.exposure;
    }
    Ok(ll)
}

// ---------------------------------------------------------------------------
// PED CSV interchange
// ---------------------------------------------------------------------------

/// Sidecar metadata written next to a PED CSV so that cut-points and
/// categorical encodings survive the round trip.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PedMeta {
    pub cutpoints: Vec<f64>,
    pub schema: FeatureSchema,
    pub n_causes: usize,
}

impl PedMeta {
    pub fn of(ped: &PedDataset) -> Self {
        PedMeta {
            cutpoints: ped.cutpoints.as_slice().to_vec(),
            schema: ped.schema.clone(),
            n_causes: ped.n_causes,
        }
    }
}

/// Write PED rows as CSV: `id, j, tj, toff, label, k`, then base features.
pub fn write_ped_csv<P: AsRef<Path>>(ped: &PedDataset, path: P) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_ped_csv_to(ped, file)
}

pub fn write_ped_csv_to<W: Write>(ped: &PedDataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = RESERVED_PED_COLUMNS.iter().map(|s| s.to_string()).collect();
    let n_base = ped.n_base_features();
    header.extend(
        ped.schema.columns[..n_base]
            .iter()
            .map(|c| c.name.clone()),
    );
    wtr.write_record(&header)?;
    for r in &ped.rows {
        let mut rec = vec![
            ped.subject_ids[r.subject].clone(),
            r.interval.to_string(),
            format!("{}", r.t_right),
            format!("{}", r.exposure),
            r.label.to_string(),
            r.transition.to_string(),
        ];
        rec.extend(r.features[..n_base].iter().map(|v| format!("{v}")));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Read a PED CSV. When `meta` is absent, cut-points are reconstructed from
/// the distinct `tj` values and all base features are treated as numeric.
pub fn read_ped_csv<P: AsRef<Path>>(path: P, meta: Option<&PedMeta>) -> Result<PedDataset> {
    let file = std::fs::File::open(path)?;
    read_ped_csv_from(file, meta)
}

pub fn read_ped_csv_from<R: Read>(reader: R, meta: Option<&PedMeta>) -> Result<PedDataset> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    for (i, name) in RESERVED_PED_COLUMNS.iter().enumerate() {
        if header.get(i) != Some(name) {
            return Err(Error::Schema(format!(
                "PED column {} must be '{}', got '{}'",
                i,
                name,
                header.get(i).unwrap_or("")
            )));
        }
    }
    let base_names: Vec<String> = header.iter().skip(6).map(|s| s.to_string()).collect();

    let mut subject_ids: Vec<String> = Vec::new();
    let mut rows = Vec::new();
    let mut tj_values: Vec<f64> = Vec::new();
    let mut max_k = 1usize;
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        let id = rec.get(0).unwrap_or("").to_string();
        let subject = match subject_ids.iter().position(|s| *s == id) {
            Some(p) => p,
            None => {
                subject_ids.push(id);
                subject_ids.len() - 1
            }
        };
        let interval: usize = rec
            .get(1)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| row_parse_err(row, "j"))?;
        let t_right = parse_field(&rec, 2, row, "tj")?;
        let exposure = parse_field(&rec, 3, row, "toff")?;
        let label_raw = parse_field(&rec, 4, row, "label")?;
        let label = if label_raw == 0.0 {
            0u8
        } else if label_raw == 1.0 {
            1u8
        } else {
            return Err(Error::Row {
                row,
                message: format!("label {label_raw} outside {{0, 1}}"),
            });
        };
        let transition: usize = rec
            .get(5)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| row_parse_err(row, "k"))?;
        max_k = max_k.max(transition);
        let mut features = Vec::with_capacity(base_names.len() + 2);
        for (fi, _) in base_names.iter().enumerate() {
            features.push(parse_field(&rec, 6 + fi, row, &base_names[fi])?);
        }
        features.push(t_right);
        features.push(transition as f64);
        tj_values.push(t_right);
        rows.push(PedRow {
            subject,
            interval,
            t_right,
            exposure,
            label,
            transition,
            features,
        });
    }

    let (cutpoints, schema, n_causes) = match meta {
        Some(m) => (
            CutPoints::new(m.cutpoints.clone())?,
            m.schema.clone(),
            m.n_causes,
        ),
        None => {
            tj_values.sort_by(f64::total_cmp);
            tj_values.dedup();
            let cutpoints = CutPoints::from_positive(tj_values)?;
            let mut columns: Vec<FeatureColumn> = base_names
                .iter()
                .map(|n| FeatureColumn::numeric(n))
                .collect();
            columns.extend(appended_columns(max_k));
            (cutpoints, FeatureSchema::new(columns), max_k)
        }
    };
    Ok(PedDataset {
        rows,
        cutpoints,
        schema,
        n_causes,
        subject_ids,
    })
}

fn parse_field(rec: &csv::StringRecord, idx: usize, row: usize, name: &str) -> Result<f64> {
    rec.get(idx)
        .unwrap_or("")
        .trim()
        .parse()
        .map_err(|_| row_parse_err(row, name))
}

fn row_parse_err(row: usize, col: &str) -> Error {
    Error::Row {
        row,
        message: format!("non-numeric value in column '{col}'"),
    }
}
