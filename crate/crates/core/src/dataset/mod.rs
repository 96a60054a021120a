//! Tabular datasets with declared categorical/numerical schemas.
//!
//! Categorical cells are stored as their zero-based index into the feature's
//! declared category list; numerical cells are stored unchanged. Labels are
//! binary. A [`Dataset`] is immutable once built.

mod bias;
mod load;
mod mask;
mod sensitive;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bias::{
    bias_summary, feature_bias, Bucket, FeatureBias, FeatureBiasSummary, HISTOGRAM_BINS,
};
pub use load::load_dataset;
pub use mask::{apply_mask, MaskEntry, MaskPlan, MaskSpec, MASKED_CATEGORY};
pub use sensitive::{assign_groups, Group, GroupRule, SensitiveBinding, SensitiveSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("unexpected column `{0}`")]
    UnexpectedColumn(String),
    #[error("unknown category `{value}` for feature `{feature}` (row {row})")]
    UnknownCategory {
        feature: String,
        value: String,
        row: usize,
    },
    #[error("non-numeric cell `{value}` for feature `{feature}` (row {row})")]
    NonNumericCell {
        feature: String,
        value: String,
        row: usize,
    },
    #[error("missing value for `{feature}` (row {row})")]
    MissingValue { feature: String, row: usize },
    #[error("label `{value}` is not one of 0, 1, or the declared meanings (row {row})")]
    InvalidLabel { value: String, row: usize },
    #[error("dataset has no rows")]
    EmptyDataset,
    #[error("csv: {0}")]
    Csv(String),
    #[error("no rows fall in sensitive group {0}")]
    NoMembers(u8),
    #[error("invalid sensitive spec: {0}")]
    InvalidSensitive(String),
    #[error("invalid mask for `{feature}`: {reason}")]
    InvalidMask { feature: String, reason: String },
    #[error("row has {found} values, dataset has {expected} features")]
    RowWidth { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numerical,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub name: String,
    pub kind: FeatureKind,
    /// Category names; a cell's code is its index here.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub display_unit: Option<String>,
}

impl FeatureSchema {
    pub fn numerical(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Numerical,
            categories: Vec::new(),
            display_unit: None,
        }
    }

    pub fn categorical<S: Into<String>>(
        name: impl Into<String>,
        categories: impl IntoIterator<Item = S>,
    ) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Categorical,
            categories: categories.into_iter().map(Into::into).collect(),
            display_unit: None,
        }
    }

    pub fn is_categorical(&self) -> bool {
        self.kind == FeatureKind::Categorical
    }

    pub fn category_code(&self, name: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == name)
    }

    /// Human-readable form of a stored cell value.
    pub fn decode(&self, value: f64) -> String {
        match self.kind {
            FeatureKind::Categorical => self
                .categories
                .get(value as usize)
                .cloned()
                .unwrap_or_else(|| format!("{value}")),
            FeatureKind::Numerical => format_number(value),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSchema {
    pub name: String,
    pub positive_meaning: String,
    pub negative_meaning: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub dataset_id: String,
    pub features: Vec<FeatureSchema>,
    pub label: LabelSchema,
}

impl DatasetSchema {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: String| Err(DatasetError::InvalidSchema(m));
        if self.dataset_id.trim().is_empty() {
            return bad("dataset_id is empty".into());
        }
        if self.features.is_empty() {
            return bad("no features declared".into());
        }
        let mut seen = std::collections::HashSet::new();
        for f in &self.features {
            if !seen.insert(f.name.as_str()) {
                return bad(format!("duplicate feature `{}`", f.name));
            }
            if f.name == self.label.name {
                return bad(format!("feature `{}` shadows the label column", f.name));
            }
            match f.kind {
                FeatureKind::Categorical => {
                    if f.categories.is_empty() {
                        return bad(format!(
                            "categorical feature `{}` has no categories",
                            f.name
                        ));
                    }
                    let mut cats = std::collections::HashSet::new();
                    for c in &f.categories {
                        if !cats.insert(c.as_str()) {
                            return bad(format!("duplicate category `{c}` in `{}`", f.name));
                        }
                    }
                }
                FeatureKind::Numerical => {
                    if !f.categories.is_empty() {
                        return bad(format!(
                            "numerical feature `{}` declares categories",
                            f.name
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }
}

/// Encoded rows plus binary labels. Row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: DatasetSchema,
    values: Vec<f64>,
    labels: Vec<u8>,
}

impl Dataset {
    /// Builds a dataset from already-encoded rows, checking every invariant.
    pub fn new(
        schema: DatasetSchema,
        rows: Vec<Vec<f64>>,
        labels: Vec<u8>,
    ) -> Result<Self, DatasetError> {
        schema.validate()?;
        if rows.is_empty() {
            return Err(DatasetError::EmptyDataset);
        }
        if rows.len() != labels.len() {
            return Err(DatasetError::Csv(format!(
                "{} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        let width = schema.n_features();
        let mut values = Vec::with_capacity(rows.len() * width);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != width {
                return Err(DatasetError::RowWidth {
                    expected: width,
                    found: row.len(),
                });
            }
            for (f, &v) in schema.features.iter().zip(&row) {
                check_cell(f, v, i)?;
            }
            values.extend(row);
        }
        for (i, &y) in labels.iter().enumerate() {
            if y > 1 {
                return Err(DatasetError::InvalidLabel {
                    value: y.to_string(),
                    row: i,
                });
            }
        }
        Ok(Self {
            schema,
            values,
            labels,
        })
    }

    pub(crate) fn from_parts_unchecked(
        schema: DatasetSchema,
        values: Vec<f64>,
        labels: Vec<u8>,
    ) -> Self {
        debug_assert_eq!(values.len(), labels.len() * schema.n_features());
        Self {
            schema,
            values,
            labels,
        }
    }

    pub fn schema(&self) -> &DatasetSchema {
        &self.schema
    }

    pub fn id(&self) -> &str {
        &self.schema.dataset_id
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.schema.n_features()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.n_features();
        &self.values[i * w..(i + 1) * w]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.n_features())
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn value(&self, row: usize, feature: usize) -> f64 {
        self.values[row * self.n_features() + feature]
    }

    pub fn column(&self, feature: usize) -> impl Iterator<Item = f64> + '_ {
        self.rows().map(move |r| r[feature])
    }

    pub(crate) fn values(&self) -> &[f64] {
        &self.values
    }

    /// Observed `[min, max]` of a column.
    pub fn column_range(&self, feature: usize) -> (f64, f64) {
        self.column(feature)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Observed `[min, max]` for every numerical feature, `None` for categorical ones.
    pub fn numeric_bounds(&self) -> Vec<Option<(f64, f64)>> {
        self.schema
            .features
            .iter()
            .enumerate()
            .map(|(j, f)| (!f.is_categorical()).then(|| self.column_range(j)))
            .collect()
    }

    /// Category names / formatted numbers for row `i`, in schema order.
    pub fn decode_row(&self, i: usize) -> Vec<String> {
        self.schema
            .features
            .iter()
            .zip(self.row(i))
            .map(|(f, &v)| f.decode(v))
            .collect()
    }

    pub fn decode_label(&self, i: usize) -> &str {
        if self.labels[i] == 1 {
            &self.schema.label.positive_meaning
        } else {
            &self.schema.label.negative_meaning
        }
    }

    /// Writes the dataset back out as CSV with category names and label
    /// meanings. Numbers are written exactly, so `load_dataset` restores the
    /// same matrix.
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let mut header = self.schema.feature_names();
        header.push(self.schema.label.name.clone());
        w.write_record(&header).expect("in-memory csv write");
        for i in 0..self.n_rows() {
            // shortest round-trip form so that reloading is lossless
            let mut rec: Vec<String> = self
                .schema
                .features
                .iter()
                .zip(self.row(i))
                .map(|(f, &v)| match f.kind {
                    FeatureKind::Categorical => f.decode(v),
                    FeatureKind::Numerical => v.to_string(),
                })
                .collect();
            rec.push(self.decode_label(i).to_string());
            w.write_record(&rec).expect("in-memory csv write");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv flush"))
            .expect("csv output is utf-8")
    }

    /// Keeps rows where `keep(i)` holds, preserving order.
    pub fn filter_rows(&self, keep: impl Fn(usize) -> bool) -> Result<Self, DatasetError> {
        let w = self.n_features();
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for i in (0..self.n_rows()).filter(|&i| keep(i)) {
            values.extend_from_slice(&self.values[i * w..(i + 1) * w]);
            labels.push(self.labels[i]);
        }
        if labels.is_empty() {
            return Err(DatasetError::EmptyDataset);
        }
        Ok(Self::from_parts_unchecked(
            self.schema.clone(),
            values,
            labels,
        ))
    }

    /// Checks that `row` has this dataset's width and valid cells.
    pub fn check_row(&self, row: &[f64]) -> Result<(), DatasetError> {
        if row.len() != self.n_features() {
            return Err(DatasetError::RowWidth {
                expected: self.n_features(),
                found: row.len(),
            });
        }
        for (f, &v) in self.schema.features.iter().zip(row) {
            check_cell(f, v, 0)?;
        }
        Ok(())
    }
}

fn check_cell(f: &FeatureSchema, v: f64, row: usize) -> Result<(), DatasetError> {
    if !v.is_finite() {
        return Err(DatasetError::NonNumericCell {
            feature: f.name.clone(),
            value: v.to_string(),
            row,
        });
    }
    if f.is_categorical() && (v.fract() != 0.0 || v < 0.0 || v as usize >= f.categories.len()) {
        return Err(DatasetError::UnknownCategory {
            feature: f.name.clone(),
            value: v.to_string(),
            row,
        });
    }
    Ok(())
}

/// Short decimal rendering used in condition texts and bin labels.
pub fn format_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        let s = format!("{v:.2}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}
