use serde::{Deserialize, Serialize};

use super::{
    assign_groups, format_number, Dataset, DatasetError, FeatureKind, Group, SensitiveSpec,
};

/// Number of equal-width bins used for numerical features.
pub const HISTOGRAM_BINS: usize = 10;

/// Group counts for one category (or one numerical bin).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub label: String,
    /// Category code for categorical features.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<usize>,
    /// `[lo, hi)` for numerical bins (the last bin is closed).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<[f64; 2]>,
    pub count_group0: u64,
    pub count_group1: u64,
    /// `count_group1 / (count_group0 + count_group1)`; absent for empty buckets.
    pub share_group1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBias {
    pub feature: String,
    pub kind: FeatureKind,
    /// Product-moment correlation with the group-1 indicator; 0 when `degenerate`.
    pub correlation: f64,
    pub degenerate: bool,
    pub buckets: Vec<Bucket>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBiasSummary {
    pub dataset_id: String,
    pub sensitive: String,
    pub group_labels: [String; 2],
    pub n_group0: u64,
    pub n_group1: u64,
    pub n_excluded: u64,
    /// Overall fraction of non-excluded rows in group 1.
    pub mean_share_group1: f64,
    pub features: Vec<FeatureBias>,
}

/// Correlation and per-category group composition of every feature against
/// the sensitive grouping. Excluded rows are dropped from every statistic.
pub fn bias_summary(
    ds: &Dataset,
    spec: &SensitiveSpec,
) -> Result<FeatureBiasSummary, DatasetError> {
    let groups = assign_groups(ds, spec)?;
    let n0 = groups.iter().filter(|g| **g == Group::Group0).count() as u64;
    let n1 = groups.iter().filter(|g| **g == Group::Group1).count() as u64;
    let features = (0..ds.n_features())
        .map(|j| bias_for(ds, &groups, j))
        .collect();
    Ok(FeatureBiasSummary {
        dataset_id: ds.id().to_string(),
        sensitive: spec.feature.clone(),
        group_labels: spec.labels.clone(),
        n_group0: n0,
        n_group1: n1,
        n_excluded: ds.n_rows() as u64 - n0 - n1,
        mean_share_group1: n1 as f64 / (n0 + n1) as f64,
        features,
    })
}

/// Bias statistics for a single feature (the histogram drill-down).
pub fn feature_bias(
    ds: &Dataset,
    spec: &SensitiveSpec,
    feature: &str,
) -> Result<FeatureBias, DatasetError> {
    let j = ds
        .schema()
        .feature_index(feature)
        .ok_or_else(|| DatasetError::MissingColumn(feature.to_string()))?;
    let groups = assign_groups(ds, spec)?;
    Ok(bias_for(ds, &groups, j))
}

fn bias_for(ds: &Dataset, groups: &[Group], j: usize) -> FeatureBias {
    let fs = &ds.schema().features[j];
    let pairs: Vec<(f64, usize)> = ds
        .column(j)
        .zip(groups)
        .filter_map(|(v, g)| g.index().map(|gi| (v, gi)))
        .collect();
    let (correlation, degenerate) = match pearson(&pairs) {
        Some(r) => (r, false),
        None => (0.0, true),
    };

    let buckets = match fs.kind {
        FeatureKind::Categorical => {
            let mut counts = vec![[0u64; 2]; fs.categories.len()];
            for &(v, g) in &pairs {
                counts[v as usize][g] += 1;
            }
            counts
                .into_iter()
                .enumerate()
                .map(|(code, [c0, c1])| {
                    bucket(fs.categories[code].clone(), Some(code), None, c0, c1)
                })
                .collect()
        }
        FeatureKind::Numerical => {
            let (lo, hi) = pairs
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &(v, _)| {
                    (l.min(v), h.max(v))
                });
            if lo == hi {
                let c0 = pairs.iter().filter(|p| p.1 == 0).count() as u64;
                let c1 = pairs.len() as u64 - c0;
                vec![bucket(format_number(lo), None, Some([lo, hi]), c0, c1)]
            } else {
                let width = (hi - lo) / HISTOGRAM_BINS as f64;
                let mut counts = [[0u64; 2]; HISTOGRAM_BINS];
                for &(v, g) in &pairs {
                    let b = (((v - lo) / width) as usize).min(HISTOGRAM_BINS - 1);
                    counts[b][g] += 1;
                }
                counts
                    .iter()
                    .enumerate()
                    .map(|(b, &[c0, c1])| {
                        let a = lo + width * b as f64;
                        let z = if b + 1 == HISTOGRAM_BINS {
                            hi
                        } else {
                            lo + width * (b + 1) as f64
                        };
                        let label = format!(
                            "[{}, {}{}",
                            format_number(a),
                            format_number(z),
                            if b + 1 == HISTOGRAM_BINS { "]" } else { ")" }
                        );
                        bucket(label, None, Some([a, z]), c0, c1)
                    })
                    .collect()
            }
        }
    };

    FeatureBias {
        feature: fs.name.clone(),
        kind: fs.kind,
        correlation,
        degenerate,
        buckets,
    }
}

fn bucket(label: String, code: Option<usize>, range: Option<[f64; 2]>, c0: u64, c1: u64) -> Bucket {
    let share = (c0 + c1 > 0).then(|| c1 as f64 / (c0 + c1) as f64);
    Bucket {
        label,
        code,
        range,
        count_group0: c0,
        count_group1: c1,
        share_group1: share,
    }
}

/// Pearson correlation between values and a 0/1 group index. `None` if either
/// side has zero variance.
fn pearson(pairs: &[(f64, usize)]) -> Option<f64> {
    let n = pairs.len() as f64;
    if pairs.len() < 2 {
        return None;
    }
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1 as f64).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        let dx = x - mx;
        let dy = y as f64 - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 || pairs.iter().all(|p| p.0 == pairs[0].0) {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}
