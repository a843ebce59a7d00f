//! Tabular data model: schemas with a sensitive/nonsensitive partition,
//! validated datasets, CSV ingestion, splits and feature encoding.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::Seed;

/// Name of the label column in CSV files.
pub const LABEL_COLUMN: &str = "label";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FeatureKind {
    Categorical { cardinality: usize },
    Continuous { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    #[serde(flatten)]
    pub kind: FeatureKind,
}

impl Feature {
    pub fn categorical(name: impl Into<String>, cardinality: usize) -> Self {
        Feature {
            name: name.into(),
            kind: FeatureKind::Categorical { cardinality },
        }
    }

    pub fn continuous(name: impl Into<String>, lo: f64, hi: f64) -> Self {
        Feature {
            name: name.into(),
            kind: FeatureKind::Continuous { lo, hi },
        }
    }

    pub fn cardinality(&self) -> Option<usize> {
        match self.kind {
            FeatureKind::Categorical { cardinality } => Some(cardinality),
            FeatureKind::Continuous { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LabelKind {
    Regression,
    Classification { num_classes: usize },
}

/// Ordered features, exactly one of which is the sensitive attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub features: Vec<Feature>,
    pub sensitive_index: usize,
    pub label: LabelKind,
}

impl FeatureSchema {
    pub fn new(features: Vec<Feature>, sensitive_index: usize, label: LabelKind) -> Result<Self> {
        let schema = FeatureSchema {
            features,
            sensitive_index,
            label,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::Schema("schema has no features".into()));
        }
        if self.sensitive_index >= self.features.len() {
            return Err(Error::Schema(format!(
                "sensitive_index {} out of range for {} features",
                self.sensitive_index,
                self.features.len()
            )));
        }
        let mut seen = HashMap::new();
        for (j, f) in self.features.iter().enumerate() {
            if f.name == LABEL_COLUMN {
                return Err(Error::Schema(format!("feature name '{LABEL_COLUMN}' is reserved")));
            }
            if let Some(prev) = seen.insert(f.name.as_str(), j) {
                return Err(Error::Schema(format!(
                    "duplicate feature name '{}' at {prev} and {j}",
                    f.name
                )));
            }
            match f.kind {
                FeatureKind::Categorical { cardinality } if cardinality < 2 => {
                    return Err(Error::Schema(format!(
                        "feature '{}' has cardinality {cardinality} < 2",
                        f.name
                    )))
                }
                FeatureKind::Continuous { lo, hi } if !(lo < hi) || !lo.is_finite() || !hi.is_finite() => {
                    return Err(Error::Schema(format!(
                        "feature '{}' needs finite lo < hi, got [{lo}, {hi}]",
                        f.name
                    )))
                }
                _ => {}
            }
        }
        if let LabelKind::Classification { num_classes } = self.label {
            if num_classes < 2 {
                return Err(Error::Schema(format!("num_classes {num_classes} < 2")));
            }
        }
        Ok(())
    }

    pub fn num_features(&self) -> usize {
        self.features.len()
    }

    pub fn sensitive(&self) -> &Feature {
        &self.features[self.sensitive_index]
    }

    /// Cardinality of the sensitive attribute; `None` if it is continuous.
    pub fn sensitive_cardinality(&self) -> Option<usize> {
        self.sensitive().cardinality()
    }

    pub fn num_classes(&self) -> Option<usize> {
        match self.label {
            LabelKind::Classification { num_classes } => Some(num_classes),
            LabelKind::Regression => None,
        }
    }

    pub fn is_regression(&self) -> bool {
        matches!(self.label, LabelKind::Regression)
    }

    pub fn all_categorical(&self) -> bool {
        self.features.iter().all(|f| f.cardinality().is_some())
    }

    /// Check a single row against the schema.
    pub fn check_row(&self, row: &[f64]) -> Result<()> {
        if row.len() != self.features.len() {
            return Err(Error::DimensionMismatch(format!(
                "row has {} values, schema has {} features",
                row.len(),
                self.features.len()
            )));
        }
        for (f, &v) in self.features.iter().zip(row) {
            check_value(f, v).map_err(Error::Dataset)?;
        }
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let schema: FeatureSchema = serde_json::from_str(&text)?;
        schema.validate()?;
        Ok(schema)
    }
}

fn check_value(f: &Feature, v: f64) -> std::result::Result<(), String> {
    if !v.is_finite() {
        return Err(format!("feature '{}' has non-finite value {v}", f.name));
    }
    if let FeatureKind::Categorical { cardinality } = f.kind {
        if v < 0.0 || v.fract() != 0.0 || v >= cardinality as f64 {
            return Err(format!(
                "feature '{}' code {v} is not an integer in [0, {cardinality})",
                f.name
            ));
        }
    }
    Ok(())
}

fn check_label(label: LabelKind, y: f64) -> std::result::Result<(), String> {
    if !y.is_finite() {
        return Err(format!("non-finite label {y}"));
    }
    if let LabelKind::Classification { num_classes } = label {
        if y < 0.0 || y.fract() != 0.0 || y >= num_classes as f64 {
            return Err(format!("class label {y} is not an integer in [0, {num_classes})"));
        }
    }
    Ok(())
}

/// Immutable, validated table of rows and labels.
///
/// Categorical values are stored as integer-valued `f64` codes; classification
/// labels likewise hold the class index.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: FeatureSchema,
    rows: Vec<Vec<f64>>,
    labels: Vec<f64>,
}

impl Dataset {
    pub fn new(schema: FeatureSchema, rows: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self> {
        schema.validate()?;
        if rows.is_empty() {
            return Err(Error::Dataset("dataset needs at least one row".into()));
        }
        if rows.len() != labels.len() {
            return Err(Error::Dataset(format!(
                "{} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        for (i, (row, &y)) in rows.iter().zip(&labels).enumerate() {
            schema
                .check_row(row)
                .map_err(|e| Error::Dataset(format!("row {i}: {e}")))?;
            check_label(schema.label, y).map_err(|e| Error::Dataset(format!("row {i}: {e}")))?;
        }
        Ok(Dataset {
            schema,
            rows,
            labels,
        })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    /// Class index of row `i` (classification datasets).
    pub fn class(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn classes(&self) -> Vec<usize> {
        self.labels.iter().map(|&y| y as usize).collect()
    }

    /// Integer code of categorical feature `j` in row `i`.
    pub fn code(&self, i: usize, j: usize) -> usize {
        self.rows[i][j] as usize
    }

    pub fn sensitive_codes(&self) -> Vec<usize> {
        let s = self.schema.sensitive_index;
        self.rows.iter().map(|r| r[s] as usize).collect()
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if indices.is_empty() {
            return Err(Error::Dataset("subset is empty".into()));
        }
        Ok(Dataset {
            schema: self.schema.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        })
    }

    pub fn require_regression(&self) -> Result<()> {
        if self.schema.is_regression() {
            Ok(())
        } else {
            Err(Error::InvalidArgument("operation needs a regression schema".into()))
        }
    }

    pub fn require_classification(&self) -> Result<usize> {
        self.schema
            .num_classes()
            .ok_or_else(|| Error::InvalidArgument("operation needs a classification schema".into()))
    }
}

/// Parse a CSV file whose header lists the schema's feature names plus `label`.
pub fn load_csv(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file, schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &FeatureSchema) -> Result<Dataset> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| csv_err(0, "<header>", e.to_string()))?
        .clone();

    // Map every schema column (features then label) to its header position.
    let mut positions = Vec::with_capacity(schema.features.len() + 1);
    let names: Vec<&str> = schema
        .features
        .iter()
        .map(|f| f.name.as_str())
        .chain(std::iter::once(LABEL_COLUMN))
        .collect();
    for name in &names {
        let pos = header
            .iter()
            .position(|h| h.trim() == *name)
            .ok_or_else(|| csv_err(0, name, "missing column".into()))?;
        positions.push(pos);
    }
    for h in header.iter() {
        if !names.contains(&h.trim()) {
            return Err(csv_err(0, h, "unexpected column".into()));
        }
    }
    if header.len() != names.len() {
        return Err(csv_err(0, "<header>", "duplicate columns".into()));
    }

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let line = i + 1;
        let record = record.map_err(|e| csv_err(line, "<record>", e.to_string()))?;
        let mut row = Vec::with_capacity(schema.features.len());
        for (j, f) in schema.features.iter().enumerate() {
            let cell = record.get(positions[j]).unwrap_or("");
            let v = parse_cell(cell, &f.kind).map_err(|m| csv_err(line, &f.name, m))?;
            check_value(f, v).map_err(|m| csv_err(line, &f.name, m))?;
            row.push(v);
        }
        let cell = record.get(positions[schema.features.len()]).unwrap_or("");
        let y = match schema.label {
            LabelKind::Regression => parse_real(cell),
            LabelKind::Classification { .. } => parse_code(cell),
        }
        .map_err(|m| csv_err(line, LABEL_COLUMN, m))?;
        check_label(schema.label, y).map_err(|m| csv_err(line, LABEL_COLUMN, m))?;
        rows.push(row);
        labels.push(y);
    }
    Dataset::new(schema.clone(), rows, labels)
}

fn csv_err(row: usize, column: &str, message: String) -> Error {
    Error::Csv {
        row,
        column: column.to_string(),
        message,
    }
}

fn parse_cell(cell: &str, kind: &FeatureKind) -> std::result::Result<f64, String> {
    match kind {
        FeatureKind::Categorical { .. } => parse_code(cell),
        FeatureKind::Continuous { .. } => parse_real(cell),
    }
}

fn parse_code(cell: &str) -> std::result::Result<f64, String> {
    cell.trim()
        .parse::<u64>()
        .map(|c| c as f64)
        .map_err(|_| format!("cannot parse '{cell}' as an integer code"))
}

fn parse_real(cell: &str) -> std::result::Result<f64, String> {
    let v = cell
        .trim()
        .parse::<f64>()
        .map_err(|_| format!("cannot parse '{cell}' as a real"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("non-finite value '{cell}'"))
    }
}

/// Format a real with 17 significant digits, which round-trips exactly.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_csv<W: Write>(writer: W, data: &Dataset) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().from_writer(writer);
    let schema = data.schema();
    let mut header: Vec<&str> = schema.features.iter().map(|f| f.name.as_str()).collect();
    header.push(LABEL_COLUMN);
    wtr.write_record(&header).map_err(|e| Error::Io(e.into()))?;
    for (row, &y) in data.rows().iter().zip(data.labels()) {
        let mut rec: Vec<String> = schema
            .features
            .iter()
            .zip(row)
            .map(|(f, &v)| match f.kind {
                FeatureKind::Categorical { .. } => format!("{}", v as u64),
                FeatureKind::Continuous { .. } => format_real(v),
            })
            .collect();
        rec.push(match schema.label {
            LabelKind::Regression => format_real(y),
            LabelKind::Classification { .. } => format!("{}", y as u64),
        });
        wtr.write_record(&rec).map_err(|e| Error::Io(e.into()))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_csv(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(std::io::BufWriter::new(file), data)
}

/// Seeded shuffle split; the test part has `round(test_fraction * N)` rows.
pub fn train_test_split(data: &Dataset, test_fraction: f64, seed: Seed) -> Result<(Dataset, Dataset)> {
    let (train_idx, test_idx) = split_indices(data.len(), test_fraction, seed)?;
    Ok((data.subset(&train_idx)?, data.subset(&test_idx)?))
}

/// Index form of [`train_test_split`]: `(train, test)` index lists.
pub fn split_indices(n: usize, test_fraction: f64, seed: Seed) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test_fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    if n < 2 {
        return Err(Error::InvalidArgument(format!("split needs N >= 2, got {n}")));
    }
    let n_test = ((test_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed.rng());
    let test = idx.split_off(n - n_test);
    Ok((idx, test))
}

/// Shannon entropy (nats) of the empirical distribution of `values`.
pub fn empirical_entropy(values: &[usize]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("entropy of an empty list".into()));
    }
    let max = *values.iter().max().unwrap_or(&0);
    let mut counts = vec![0.0; max + 1];
    for &v in values {
        counts[v] += 1.0;
    }
    Ok(entropy_of_counts(&counts))
}

/// Shannon entropy (nats) of a histogram; zero-count bins are ignored.
pub fn entropy_of_counts(counts: &[f64]) -> f64 {
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let h: f64 = counts
        .iter()
        .copied()
        .filter(|&c| c > 0.0)
        .map(|c| {
            let q = c / total;
            -q * q.ln()
        })
        .sum();
    h.max(0.0)
}

/// Expansion of integer-coded categoricals into indicator columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    /// One indicator per code.
    OneHot,
    /// Code 0 is the reference level and gets no column (full-rank with an intercept).
    Dummy,
}

impl Encoding {
    pub fn width(self, schema: &FeatureSchema) -> usize {
        schema.features.iter().map(|f| self.feature_width(f)).sum()
    }

    fn feature_width(self, f: &Feature) -> usize {
        match (f.kind.clone(), self) {
            (FeatureKind::Continuous { .. }, _) => 1,
            (FeatureKind::Categorical { cardinality }, Encoding::OneHot) => cardinality,
            (FeatureKind::Categorical { cardinality }, Encoding::Dummy) => cardinality - 1,
        }
    }

    /// Column range occupied by feature `j`.
    pub fn block(self, schema: &FeatureSchema, j: usize) -> std::ops::Range<usize> {
        let start: usize = schema.features[..j].iter().map(|f| self.feature_width(f)).sum();
        start..start + self.feature_width(&schema.features[j])
    }

    pub fn encode_into(self, schema: &FeatureSchema, row: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (f, &v) in schema.features.iter().zip(row) {
            match f.kind {
                FeatureKind::Continuous { .. } => out.push(v),
                FeatureKind::Categorical { cardinality } => {
                    let code = v as usize;
                    let first = match self {
                        Encoding::OneHot => 0,
                        Encoding::Dummy => 1,
                    };
                    for c in first..cardinality {
                        out.push(if c == code { 1.0 } else { 0.0 });
                    }
                }
            }
        }
    }

    pub fn encode(self, schema: &FeatureSchema, row: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.width(schema));
        self.encode_into(schema, row, &mut out);
        out
    }

    pub fn encode_all(self, data: &Dataset) -> Vec<Vec<f64>> {
        data.rows().iter().map(|r| self.encode(data.schema(), r)).collect()
    }
}

/// Copy of `row` with the sensitive attribute replaced by `code`.
pub fn with_sensitive(schema: &FeatureSchema, row: &[f64], code: usize) -> Vec<f64> {
    let mut r = row.to_vec();
    r[schema.sensitive_index] = code as f64;
    r
}
