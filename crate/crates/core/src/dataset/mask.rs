use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetError, DatasetSchema, FeatureKind};

/// Name of the category appended to a categorical feature to hold masked cells.
pub const MASKED_CATEGORY: &str = "__masked__";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskEntry {
    /// Every cell of the feature.
    All,
    /// Cells whose category is one of these names.
    Categories(Vec<String>),
    /// Numerical cells in `[lo, hi)`; `null` is unbounded.
    Range([Option<f64>; 2]),
}

/// Which cells to collapse, keyed by feature name. Serializes as a plain map,
/// e.g. `{"age": "all", "relationship": {"categories": ["Husband", "Wife"]}}`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MaskSpec {
    pub entries: BTreeMap<String, MaskEntry>,
}

impl MaskSpec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, feature: impl Into<String>, entry: MaskEntry) -> Self {
        self.entries.insert(feature.into(), entry);
        self
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Rule {
    Categorical { masked: Vec<bool>, sentinel: f64 },
    Numerical { lo: f64, hi: f64, replacement: f64 },
}

/// A [`MaskSpec`] compiled against a dataset: per-feature replacement rules
/// that can be applied to whole datasets or to single rows at prediction time.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlan {
    rules: Vec<(usize, Rule)>,
    schema: DatasetSchema,
}

impl MaskPlan {
    /// Validates `mask` against `ds` and computes sentinel values. Numerical
    /// replacements are the mean of the unmasked cells (all cells if every
    /// cell is masked).
    pub fn compile(mask: &MaskSpec, ds: &Dataset) -> Result<Self, DatasetError> {
        let mut schema = ds.schema().clone();
        let mut rules = Vec::new();
        for (name, entry) in &mask.entries {
            let invalid = |reason: String| DatasetError::InvalidMask {
                feature: name.clone(),
                reason,
            };
            let j = ds
                .schema()
                .feature_index(name)
                .ok_or_else(|| invalid("unknown feature".into()))?;
            let fs = &mut schema.features[j];
            let rule = match (fs.kind, entry) {
                (FeatureKind::Categorical, MaskEntry::All)
                | (FeatureKind::Categorical, MaskEntry::Categories(_)) => {
                    let sentinel = match fs.category_code(MASKED_CATEGORY) {
                        Some(code) => code,
                        None => {
                            fs.categories.push(MASKED_CATEGORY.to_string());
                            fs.categories.len() - 1
                        }
                    };
                    let mut masked = vec![false; fs.categories.len()];
                    match entry {
                        MaskEntry::All => masked.iter_mut().for_each(|m| *m = true),
                        MaskEntry::Categories(names) => {
                            if names.is_empty() {
                                return Err(invalid("empty category list".into()));
                            }
                            for n in names {
                                let code = fs
                                    .category_code(n)
                                    .ok_or_else(|| invalid(format!("unknown category `{n}`")))?;
                                masked[code] = true;
                            }
                        }
                        MaskEntry::Range(_) => unreachable!(),
                    }
                    masked[sentinel] = true;
                    Rule::Categorical {
                        masked,
                        sentinel: sentinel as f64,
                    }
                }
                (FeatureKind::Categorical, MaskEntry::Range(_)) => {
                    return Err(invalid("ranges only apply to numerical features".into()))
                }
                (FeatureKind::Numerical, MaskEntry::Categories(_)) => {
                    return Err(invalid(
                        "categories only apply to categorical features".into(),
                    ))
                }
                (FeatureKind::Numerical, MaskEntry::All) => Rule::Numerical {
                    lo: f64::NEG_INFINITY,
                    hi: f64::INFINITY,
                    replacement: mean_of(ds.column(j)),
                },
                (FeatureKind::Numerical, MaskEntry::Range([lo, hi])) => {
                    let lo = lo.unwrap_or(f64::NEG_INFINITY);
                    let hi = hi.unwrap_or(f64::INFINITY);
                    if lo >= hi || lo.is_nan() || hi.is_nan() {
                        return Err(invalid("empty range".into()));
                    }
                    let outside = ds.column(j).filter(|v| !(lo <= *v && *v < hi));
                    let replacement = if ds.column(j).any(|v| !(lo <= v && v < hi)) {
                        mean_of(outside)
                    } else {
                        mean_of(ds.column(j))
                    };
                    Rule::Numerical {
                        lo,
                        hi,
                        replacement,
                    }
                }
            };
            rules.push((j, rule));
        }
        Ok(Self { rules, schema })
    }

    /// Schema of masked data (categorical masks append [`MASKED_CATEGORY`]).
    pub fn schema(&self) -> &DatasetSchema {
        &self.schema
    }

    pub fn is_identity(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn apply_row(&self, row: &mut [f64]) {
        for (j, rule) in &self.rules {
            let v = &mut row[*j];
            match rule {
                Rule::Categorical { masked, sentinel } => {
                    if masked.get(*v as usize).copied().unwrap_or(false) {
                        *v = *sentinel;
                    }
                }
                Rule::Numerical {
                    lo,
                    hi,
                    replacement,
                } => {
                    if *lo <= *v && *v < *hi {
                        *v = *replacement;
                    }
                }
            }
        }
    }

    pub fn apply(&self, ds: &Dataset) -> Dataset {
        if self.is_identity() {
            return ds.clone();
        }
        let mut values = ds.values().to_vec();
        for row in values.chunks_exact_mut(ds.n_features()) {
            self.apply_row(row);
        }
        Dataset::from_parts_unchecked(self.schema.clone(), values, ds.labels().to_vec())
    }
}

fn mean_of(values: impl Iterator<Item = f64>) -> f64 {
    let mut first = None;
    let mut constant = true;
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        match first {
            None => first = Some(v),
            Some(f) if f != v => constant = false,
            _ => {}
        }
        sum += v;
        n += 1;
    }
    match first {
        // mean of a constant column is that constant, bit for bit
        Some(f) if constant => f,
        _ => sum / n as f64,
    }
}

/// Collapses the cells selected by `mask` to one sentinel value per feature.
/// Row count, column count, labels and row order are unchanged.
pub fn apply_mask(ds: &Dataset, mask: &MaskSpec) -> Result<Dataset, DatasetError> {
    Ok(MaskPlan::compile(mask, ds)?.apply(ds))
}
