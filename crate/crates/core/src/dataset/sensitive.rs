use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetError, DatasetSchema, FeatureKind};

/// Membership rule for one sensitive group: a set of category names for a
/// categorical feature, or a half-open range `[lo, hi)` for a numerical one
/// (`null` bounds are unbounded, `lo_open` makes the lower bound exclusive).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct GroupRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<[Option<f64>; 2]>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub lo_open: bool,
}

impl GroupRule {
    pub fn categories<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Self {
        Self {
            categories: Some(names.into_iter().map(Into::into).collect()),
            ..Self::default()
        }
    }

    pub fn range(lo: Option<f64>, hi: Option<f64>) -> Self {
        Self {
            range: Some([lo, hi]),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitiveSpec {
    pub feature: String,
    pub group0: GroupRule,
    pub group1: GroupRule,
    pub labels: [String; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Group0,
    Group1,
    Excluded,
}

impl Group {
    pub fn index(self) -> Option<usize> {
        match self {
            Group::Group0 => Some(0),
            Group::Group1 => Some(1),
            Group::Excluded => None,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Group::Group0
        } else {
            Group::Group1
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum BoundRule {
    Codes(Vec<bool>),
    Range {
        lo: Option<f64>,
        hi: Option<f64>,
        lo_open: bool,
    },
}

impl BoundRule {
    fn contains(&self, v: f64) -> bool {
        match self {
            BoundRule::Codes(member) => {
                v >= 0.0 && member.get(v as usize).copied().unwrap_or(false)
            }
            BoundRule::Range { lo, hi, lo_open } => {
                let above = match lo {
                    Some(lo) if *lo_open => v > *lo,
                    Some(lo) => v >= *lo,
                    None => true,
                };
                above && hi.map_or(true, |hi| v < hi)
            }
        }
    }
}

/// A [`SensitiveSpec`] resolved against a schema: group membership tests on
/// stored cell values plus the canonical value each group flips to.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitiveBinding {
    pub feature: usize,
    rules: [BoundRule; 2],
    canonical: [f64; 2],
    pub labels: [String; 2],
}

impl SensitiveBinding {
    /// Binds `spec` to `schema`. Numerical features need `bounds` (the range
    /// values are sampled or observed in) to pick a canonical flip value.
    pub fn bind(
        spec: &SensitiveSpec,
        schema: &DatasetSchema,
        bounds: Option<(f64, f64)>,
    ) -> Result<Self, DatasetError> {
        let invalid = |m: String| DatasetError::InvalidSensitive(m);
        let feature = schema
            .feature_index(&spec.feature)
            .ok_or_else(|| invalid(format!("unknown feature `{}`", spec.feature)))?;
        let fs = &schema.features[feature];
        let specs = [&spec.group0, &spec.group1];
        match fs.kind {
            FeatureKind::Categorical => {
                let mut rules = Vec::with_capacity(2);
                let mut canonical = [0.0; 2];
                for (g, rule) in specs.iter().enumerate() {
                    if rule.range.is_some() {
                        return Err(invalid(format!(
                            "group{g}: categorical feature needs `categories`"
                        )));
                    }
                    let names = rule
                        .categories
                        .as_ref()
                        .filter(|c| !c.is_empty())
                        .ok_or_else(|| invalid(format!("group{g}: no categories")))?;
                    let mut member = vec![false; fs.categories.len()];
                    for (k, name) in names.iter().enumerate() {
                        let code = fs.category_code(name).ok_or_else(|| {
                            invalid(format!("group{g}: unknown category `{name}`"))
                        })?;
                        if k == 0 {
                            canonical[g] = code as f64;
                        }
                        member[code] = true;
                    }
                    rules.push(member);
                }
                if rules[0].iter().zip(&rules[1]).any(|(a, b)| *a && *b) {
                    return Err(invalid("group rules overlap".into()));
                }
                let r1 = rules.pop().expect("two rules");
                let r0 = rules.pop().expect("two rules");
                Ok(Self {
                    feature,
                    rules: [BoundRule::Codes(r0), BoundRule::Codes(r1)],
                    canonical,
                    labels: spec.labels.clone(),
                })
            }
            FeatureKind::Numerical => {
                let (bmin, bmax) = bounds
                    .ok_or_else(|| invalid("numerical sensitive feature needs bounds".into()))?;
                let mut rules = Vec::with_capacity(2);
                for (g, rule) in specs.iter().enumerate() {
                    if rule.categories.is_some() {
                        return Err(invalid(format!(
                            "group{g}: numerical feature needs `range`"
                        )));
                    }
                    let [lo, hi] = rule
                        .range
                        .ok_or_else(|| invalid(format!("group{g}: no range")))?;
                    if let (Some(lo), Some(hi)) = (lo, hi) {
                        if lo >= hi {
                            return Err(invalid(format!("group{g}: empty range")));
                        }
                    }
                    rules.push(BoundRule::Range {
                        lo,
                        hi,
                        lo_open: rule.lo_open,
                    });
                }
                let overlap = {
                    let (l0, h0) = range_of(&rules[0]);
                    let (l1, h1) = range_of(&rules[1]);
                    l0.max(l1) < h0.min(h1)
                };
                if overlap {
                    return Err(invalid("group ranges overlap".into()));
                }
                let mut canonical = [0.0; 2];
                for g in 0..2 {
                    let (lo, hi) = range_of(&rules[g]);
                    let (lo, hi) = (lo.max(bmin), hi.min(bmax));
                    let mid = 0.5 * (lo + hi);
                    canonical[g] = if rules[g].contains(mid) {
                        mid
                    } else if rules[g].contains(lo) {
                        lo
                    } else {
                        // the rule misses the bounds entirely; use its nearest edge
                        let (rlo, rhi) = range_of(&rules[g]);
                        if rlo.is_finite() {
                            if rules[g].contains(rlo) {
                                rlo
                            } else {
                                rlo.next_up()
                            }
                        } else {
                            rhi.next_down()
                        }
                    };
                }
                let r1 = rules.pop().expect("two rules");
                let r0 = rules.pop().expect("two rules");
                Ok(Self {
                    feature,
                    rules: [r0, r1],
                    canonical,
                    labels: spec.labels.clone(),
                })
            }
        }
    }

    /// Binds against a dataset, using observed values as numerical bounds.
    pub fn for_dataset(spec: &SensitiveSpec, ds: &Dataset) -> Result<Self, DatasetError> {
        let bounds = ds
            .schema()
            .feature_index(&spec.feature)
            .map(|j| ds.column_range(j));
        Self::bind(spec, ds.schema(), bounds)
    }

    pub fn group_of_value(&self, v: f64) -> Group {
        if self.rules[0].contains(v) {
            Group::Group0
        } else if self.rules[1].contains(v) {
            Group::Group1
        } else {
            Group::Excluded
        }
    }

    pub fn group_of(&self, row: &[f64]) -> Group {
        self.group_of_value(row[self.feature])
    }

    /// Value the sensitive cell takes for a member of `group`.
    pub fn canonical(&self, group: usize) -> f64 {
        self.canonical[group]
    }

    /// Sensitive value after flipping to the opposite group; `None` when the
    /// value is in neither group.
    pub fn flip_value(&self, v: f64) -> Option<f64> {
        match self.group_of_value(v) {
            Group::Group0 => Some(self.canonical[1]),
            Group::Group1 => Some(self.canonical[0]),
            Group::Excluded => None,
        }
    }

    /// Copy of `row` with the sensitive cell flipped.
    pub fn flipped(&self, row: &[f64]) -> Option<Vec<f64>> {
        let v = self.flip_value(row[self.feature])?;
        let mut out = row.to_vec();
        out[self.feature] = v;
        Some(out)
    }
}

fn range_of(rule: &BoundRule) -> (f64, f64) {
    match rule {
        BoundRule::Range { lo, hi, .. } => {
            (lo.unwrap_or(f64::NEG_INFINITY), hi.unwrap_or(f64::INFINITY))
        }
        BoundRule::Codes(_) => unreachable!("numerical rules only"),
    }
}

/// Sensitive group of every row. Fails with `NoMembers` if either group is empty.
pub fn assign_groups(ds: &Dataset, spec: &SensitiveSpec) -> Result<Vec<Group>, DatasetError> {
    let binding = SensitiveBinding::for_dataset(spec, ds)?;
    let groups: Vec<Group> = ds.rows().map(|r| binding.group_of(r)).collect();
    for (g, which) in [(0u8, Group::Group0), (1u8, Group::Group1)] {
        if !groups.contains(&which) {
            return Err(DatasetError::NoMembers(g));
        }
    }
    Ok(groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{FeatureSchema, LabelSchema};

    fn ds(features: Vec<FeatureSchema>, rows: Vec<Vec<f64>>) -> Dataset {
        let n = rows.len();
        let schema = DatasetSchema {
            dataset_id: "s".into(),
            features,
            label: LabelSchema {
                name: "y".into(),
                positive_meaning: "1".into(),
                negative_meaning: "0".into(),
            },
        };
        Dataset::new(schema, rows, vec![0; n]).unwrap()
    }

    fn gender_spec() -> SensitiveSpec {
        SensitiveSpec {
            feature: "gender".into(),
            group0: GroupRule::categories(["female"]),
            group1: GroupRule::categories(["male"]),
            labels: ["female".into(), "male".into()],
        }
    }

    fn age_spec() -> SensitiveSpec {
        SensitiveSpec {
            feature: "age".into(),
            group0: GroupRule::range(Some(0.0), Some(25.0)),
            group1: GroupRule {
                lo_open: true,
                ..GroupRule::range(Some(45.0), None)
            },
            labels: ["young".into(), "old".into()],
        }
    }

    #[test]
    fn categorical_groups() {
        let d = ds(
            vec![FeatureSchema::categorical("gender", ["male", "female"])],
            vec![vec![0.0], vec![1.0], vec![0.0]],
        );
        let g = assign_groups(&d, &gender_spec()).unwrap();
        assert_eq!(g, vec![Group::Group1, Group::Group0, Group::Group1]);
    }

    #[test]
    fn age_ranges_exclude_mid_band() {
        let d = ds(
            vec![FeatureSchema::numerical("age")],
            vec![vec![20.0], vec![30.0], vec![50.0]],
        );
        let g = assign_groups(&d, &age_spec()).unwrap();
        assert_eq!(g, vec![Group::Group0, Group::Excluded, Group::Group1]);
        let b = SensitiveBinding::for_dataset(&age_spec(), &d).unwrap();
        assert_eq!(b.group_of_value(45.0), Group::Excluded);
        assert_eq!(b.group_of_value(25.0), Group::Excluded);
        // midpoints of [20, 25) and (45, 50]
        assert_eq!(b.flip_value(20.0), Some(47.5));
        assert_eq!(b.flip_value(50.0), Some(22.5));
        assert_eq!(b.flip_value(30.0), None);
    }

    #[test]
    fn no_members_is_an_error() {
        let d = ds(
            vec![FeatureSchema::numerical("age")],
            vec![vec![30.0], vec![30.0]],
        );
        assert!(matches!(
            assign_groups(&d, &age_spec()),
            Err(DatasetError::NoMembers(_))
        ));
    }

    #[test]
    fn overlapping_rules_rejected() {
        let d = ds(
            vec![FeatureSchema::categorical("gender", ["male", "female"])],
            vec![vec![0.0], vec![1.0]],
        );
        let mut spec = gender_spec();
        spec.group1 = GroupRule::categories(["male", "female"]);
        assert!(matches!(
            assign_groups(&d, &spec),
            Err(DatasetError::InvalidSensitive(_))
        ));
        let mut spec = gender_spec();
        spec.feature = "nope".into();
        assert!(matches!(
            assign_groups(&d, &spec),
            Err(DatasetError::InvalidSensitive(_))
        ));
    }

    #[test]
    fn canonical_code_is_first_listed() {
        let d = ds(
            vec![FeatureSchema::categorical("race", ["a", "b", "c"])],
            vec![vec![0.0], vec![1.0], vec![2.0]],
        );
        let spec = SensitiveSpec {
            feature: "race".into(),
            group0: GroupRule::categories(["c", "b"]),
            group1: GroupRule::categories(["a"]),
            labels: ["other".into(), "a".into()],
        };
        let b = SensitiveBinding::for_dataset(&spec, &d).unwrap();
        assert_eq!(b.flip_value(0.0), Some(2.0));
        assert_eq!(b.flip_value(1.0), Some(0.0));
        assert_eq!(b.flipped(&[2.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn spec_json_shape() {
        let json = r#"{"feature":"age","group0":{"range":[null,25]},"group1":{"range":[45,null],"lo_open":true},"labels":["young","old"]}"#;
        let spec: SensitiveSpec = serde_json::from_str(json).unwrap();
        assert_eq!(spec.group0.range, Some([None, Some(25.0)]));
        assert!(spec.group1.lo_open);
    }
}
