use crate::dataset::{format_number, Dataset, FeatureKind};

use super::ExplainError;

#[derive(Debug, Clone, PartialEq)]
enum Rule {
    Category(f64),
    Quartile { edges: [f64; 3], bin: usize },
}

/// Binary representation anchored at one instance: indicator `j` is 1 when
/// a row agrees with the instance on feature `j` (same category, or same
/// training-quartile bin).
#[derive(Debug, Clone, PartialEq)]
pub struct InterpretableSpace {
    pub feature_names: Vec<String>,
    /// Human-readable meaning of each indicator, e.g. `age ≤ 28`.
    pub conditions: Vec<String>,
    rules: Vec<Rule>,
}

impl InterpretableSpace {
    pub fn encode(&self, row: &[f64]) -> Vec<u8> {
        self.rules
            .iter()
            .zip(row)
            .map(|(rule, &v)| {
                u8::from(match rule {
                    Rule::Category(c) => v == *c,
                    Rule::Quartile { edges, bin } => bin_of(edges, v) == *bin,
                })
            })
            .collect()
    }
}

/// 25th, 50th and 75th percentiles with linear interpolation between order
/// statistics.
pub fn quartiles(values: impl Iterator<Item = f64>) -> [f64; 3] {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    };
    [q(0.25), q(0.5), q(0.75)]
}

fn bin_of(edges: &[f64; 3], v: f64) -> usize {
    edges.iter().take_while(|&&e| v > e).count()
}

pub fn make_interpretable(
    instance: &[f64],
    ds: &Dataset,
) -> Result<InterpretableSpace, ExplainError> {
    if instance.len() != ds.n_features() {
        return Err(ExplainError::DimensionMismatch {
            expected: ds.n_features(),
            found: instance.len(),
        });
    }
    let mut rules = Vec::new();
    let mut conditions = Vec::new();
    for (j, f) in ds.schema().features.iter().enumerate() {
        let v = instance[j];
        match f.kind {
            FeatureKind::Categorical => {
                rules.push(Rule::Category(v));
                conditions.push(format!("{} = {}", f.name, f.decode(v)));
            }
            FeatureKind::Numerical => {
                let edges = quartiles(ds.column(j));
                let bin = bin_of(&edges, v);
                let e = edges.map(format_number);
                let n = &f.name;
                conditions.push(match bin {
                    0 => format!("{n} ≤ {}", e[0]),
                    3 => format!("{n} > {}", e[2]),
                    b => format!("{} < {n} ≤ {}", e[b - 1], e[b]),
                });
                rules.push(Rule::Quartile { edges, bin });
            }
        }
    }
    Ok(InterpretableSpace {
        feature_names: ds.schema().feature_names(),
        conditions,
        rules,
    })
}
