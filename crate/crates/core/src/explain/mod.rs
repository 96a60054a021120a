//! Local surrogate explanations.
//!
//! A point is explained by perturbing it, mapping every perturbed row to
//! binary "same as the instance" indicators (same category, or same training
//! quartile for numerical features), and fitting a kernel-weighted ridge
//! regression of the model's confidence on those indicators. Weights are in
//! probability units of the positive class.

mod interpretable;
mod ridge;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::index;
use rand_distr::Normal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, DatasetError, FeatureKind, SensitiveSpec};
use crate::metrics::{counterfactual_set, MetricError};
use crate::predictor::Predictor;
use crate::seed;

pub use interpretable::{make_interpretable, quartiles, InterpretableSpace};

/// Ridge penalty of the surrogate fit.
pub const RIDGE_LAMBDA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExplainError {
    #[error("instance has {found} features, dataset has {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid explanation config: {0}")]
    InvalidConfig(String),
    #[error("row index {0} out of range")]
    RowIndex(usize),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationConfig {
    pub n_samples: usize,
    /// Kernel width; `None` means `0.75 * sqrt(d)`.
    pub kernel_width: Option<f64>,
    pub top_k: usize,
    pub seed: u64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            n_samples: 5000,
            kernel_width: None,
            top_k: 10,
            seed: 0,
        }
    }
}

impl PerturbationConfig {
    pub fn validate(&self) -> Result<(), ExplainError> {
        let bad = |m: &str| Err(ExplainError::InvalidConfig(m.into()));
        if self.n_samples < 10 {
            return bad("n_samples must be >= 10");
        }
        if self.top_k < 1 {
            return bad("top_k must be >= 1");
        }
        if let Some(w) = self.kernel_width {
            if !(w.is_finite() && w > 0.0) {
                return bad("kernel_width must be > 0");
            }
        }
        Ok(())
    }

    pub fn width(&self, d: usize) -> f64 {
        self.kernel_width.unwrap_or(0.75 * (d as f64).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationEntry {
    pub feature: String,
    pub condition: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    /// Sorted by decreasing `|weight|`.
    pub entries: Vec<ExplanationEntry>,
    pub intercept: f64,
    /// Surrogate value at the instance, clamped to `[0, 1]`.
    pub local_prediction: f64,
    /// The model's own confidence at the instance.
    pub model_prediction: f64,
    /// Kernel-weighted R^2 of the surrogate on the perturbations.
    pub fidelity_r2: f64,
    /// Set when every perturbation got the same confidence; weights are then 0.
    pub degenerate: bool,
}

/// Perturbed neighbourhood of an instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub raw: Vec<Vec<f64>>,
    pub binary: Vec<Vec<u8>>,
    pub distances: Vec<f64>,
}

/// Draws `n_samples` rows around `instance`: the instance itself first, then
/// rows whose categorical cells follow the training marginals and whose
/// numerical cells follow a normal with the training mean and std.
pub fn perturb(
    instance: &[f64],
    ds: &Dataset,
    n_samples: usize,
    seed: u64,
) -> Result<Perturbation, ExplainError> {
    check_instance(instance, ds)?;
    let space = make_interpretable(instance, ds)?;
    let d = ds.n_features();

    enum Sampler {
        Cat(WeightedIndex<u64>),
        Num(Normal<f64>),
        Fixed(f64),
    }
    let samplers: Vec<Sampler> = (0..d)
        .map(|j| {
            let f = &ds.schema().features[j];
            match f.kind {
                FeatureKind::Categorical => {
                    let mut counts = vec![0u64; f.categories.len()];
                    ds.column(j).for_each(|v| counts[v as usize] += 1);
                    Sampler::Cat(WeightedIndex::new(counts).expect("dataset is non-empty"))
                }
                FeatureKind::Numerical => {
                    let n = ds.n_rows() as f64;
                    let mean = ds.column(j).sum::<f64>() / n;
                    let std =
                        (ds.column(j).map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
                    let (lo, hi) = ds.column_range(j);
                    if lo == hi || std == 0.0 {
                        Sampler::Fixed(lo)
                    } else {
                        Sampler::Num(Normal::new(mean, std).expect("finite positive std"))
                    }
                }
            }
        })
        .collect();

    let mut rng = seed::rng(seed);
    let mut raw = Vec::with_capacity(n_samples);
    if n_samples > 0 {
        raw.push(instance.to_vec());
    }
    for _ in 1..n_samples {
        raw.push(
            samplers
                .iter()
                .map(|s| match s {
                    Sampler::Cat(w) => w.sample(&mut rng) as f64,
                    Sampler::Num(n) => n.sample(&mut rng),
                    Sampler::Fixed(v) => *v,
                })
                .collect(),
        );
    }
    let binary: Vec<Vec<u8>> = raw.iter().map(|r| space.encode(r)).collect();
    let distances = binary
        .iter()
        .map(|b| 1.0 - b.iter().map(|&v| f64::from(v)).sum::<f64>() / d as f64)
        .collect();
    Ok(Perturbation {
        raw,
        binary,
        distances,
    })
}

fn check_instance(instance: &[f64], ds: &Dataset) -> Result<(), ExplainError> {
    if instance.len() != ds.n_features() {
        return Err(ExplainError::DimensionMismatch {
            expected: ds.n_features(),
            found: instance.len(),
        });
    }
    ds.check_row(instance)?;
    Ok(())
}

/// Explains `m` at `instance` with a sparse local linear surrogate.
pub fn explain_point<P: Predictor + ?Sized>(
    m: &P,
    instance: &[f64],
    ds: &Dataset,
    cfg: &PerturbationConfig,
) -> Result<Explanation, ExplainError> {
    cfg.validate()?;
    let space = make_interpretable(instance, ds)?;
    let p = perturb(instance, ds, cfg.n_samples, cfg.seed)?;
    let d = ds.n_features();
    let width = cfg.width(d);
    let targets: Vec<f64> = p.raw.iter().map(|r| m.score(r)).collect();
    let weights: Vec<f64> = p
        .distances
        .iter()
        .map(|dist| (-(dist * dist) / (width * width)).exp())
        .collect();
    let x: Vec<Vec<f64>> = p
        .binary
        .iter()
        .map(|b| b.iter().map(|&v| f64::from(v)).collect())
        .collect();
    let model_prediction = targets[0];

    let top_k = cfg.top_k.min(d);
    let stats = ridge::WeightedStats::new(&x, &targets, &weights);
    if stats.target_ss() <= 1e-24 || targets.iter().all(|t| *t == targets[0]) {
        let entries = (0..top_k)
            .map(|j| ExplanationEntry {
                feature: space.feature_names[j].clone(),
                condition: space.conditions[j].clone(),
                weight: 0.0,
            })
            .collect();
        return Ok(Explanation {
            entries,
            intercept: model_prediction,
            local_prediction: model_prediction.clamp(0.0, 1.0),
            model_prediction,
            fidelity_r2: 0.0,
            degenerate: true,
        });
    }

    let selected = stats.forward_select(top_k, RIDGE_LAMBDA);
    let fit = stats.fit(&selected, RIDGE_LAMBDA);
    let mut entries: Vec<(usize, ExplanationEntry)> = selected
        .iter()
        .zip(&fit.coef)
        .map(|(&j, &w)| {
            (
                j,
                ExplanationEntry {
                    feature: space.feature_names[j].clone(),
                    condition: space.conditions[j].clone(),
                    weight: w,
                },
            )
        })
        .collect();
    entries.sort_by(|a, b| {
        b.1.weight
            .abs()
            .total_cmp(&a.1.weight.abs())
            .then(a.0.cmp(&b.0))
    });
    // every indicator is 1 at the instance
    let local = fit.intercept + fit.coef.iter().sum::<f64>();
    Ok(Explanation {
        entries: entries.into_iter().map(|(_, e)| e).collect(),
        intercept: fit.intercept,
        local_prediction: local.clamp(0.0, 1.0),
        model_prediction,
        fidelity_r2: fit.r2,
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualSample {
    /// Sorted dataset row indices.
    pub indices: Vec<usize>,
    /// Size of the full counterfactual set.
    pub available: usize,
    /// True when fewer than the requested number exist.
    pub shortfall: bool,
}

/// Uniform sample without replacement of `k` counterfactual rows.
pub fn sample_counterfactual_points<P: Predictor + ?Sized>(
    m: &P,
    ds: &Dataset,
    spec: &SensitiveSpec,
    k: usize,
    seed: u64,
) -> Result<CounterfactualSample, ExplainError> {
    let all = counterfactual_set(m, ds, spec)?;
    let available = all.len();
    if available <= k {
        return Ok(CounterfactualSample {
            indices: all,
            available,
            shortfall: available < k,
        });
    }
    let mut rng = seed::rng(seed);
    let mut indices: Vec<usize> = index::sample(&mut rng, available, k)
        .into_iter()
        .map(|i| all[i])
        .collect();
    indices.sort_unstable();
    Ok(CounterfactualSample {
        indices,
        available,
        shortfall: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    /// Mean `|weight|` over the explained rows (rows where the feature was
    /// not selected count as 0).
    pub importance: f64,
}

/// Per-category share of a categorical feature's importance: the sum of
/// `|weight|` over explained rows whose instance had this category, divided
/// by the number of explained rows. These sum to the feature's importance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryImportance {
    pub feature: String,
    pub code: usize,
    pub category: String,
    pub importance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateImportance {
    /// Sorted by decreasing importance.
    pub features: Vec<FeatureImportance>,
    pub categories: Vec<CategoryImportance>,
    pub n_rows: usize,
}

/// Explains every row (row `i` with seed `derive(cfg.seed, i)`) and averages
/// absolute weights per feature.
pub fn aggregate_importance<P, R>(
    m: &P,
    rows: &[R],
    ds: &Dataset,
    cfg: &PerturbationConfig,
) -> Result<AggregateImportance, ExplainError>
where
    P: Predictor + ?Sized,
    R: AsRef<[f64]> + Sync,
{
    cfg.validate()?;
    let explanations = rows
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let c = PerturbationConfig {
                seed: seed::derive(cfg.seed, i as u64),
                ..cfg.clone()
            };
            explain_point(m, r.as_ref(), ds, &c)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let instances: Vec<&[f64]> = rows.iter().map(|r| r.as_ref()).collect();
    Ok(mean_abs_importance(&explanations, &instances, ds))
}

/// Averages `|weight|` per feature over a set of explanations of `instances`.
pub fn mean_abs_importance(
    explanations: &[Explanation],
    instances: &[&[f64]],
    ds: &Dataset,
) -> AggregateImportance {
    let schema = ds.schema();
    let n = explanations.len().max(1) as f64;
    let mut feat = vec![0.0; schema.n_features()];
    let mut cats: Vec<Vec<f64>> = schema
        .features
        .iter()
        .map(|f| vec![0.0; f.categories.len()])
        .collect();
    for (e, inst) in explanations.iter().zip(instances) {
        for entry in &e.entries {
            let Some(j) = schema.feature_index(&entry.feature) else {
                continue;
            };
            feat[j] += entry.weight.abs();
            if schema.features[j].is_categorical() {
                cats[j][inst[j] as usize] += entry.weight.abs();
            }
        }
    }
    let mut features: Vec<(usize, FeatureImportance)> = feat
        .into_iter()
        .enumerate()
        .map(|(j, s)| {
            (
                j,
                FeatureImportance {
                    feature: schema.features[j].name.clone(),
                    importance: s / n,
                },
            )
        })
        .collect();
    features.sort_by(|a, b| {
        b.1.importance
            .total_cmp(&a.1.importance)
            .then(a.0.cmp(&b.0))
    });
    let categories = cats
        .into_iter()
        .enumerate()
        .flat_map(|(j, v)| {
            let f = &schema.features[j];
            v.into_iter()
                .enumerate()
                .map(move |(c, s)| CategoryImportance {
                    feature: f.name.clone(),
                    code: c,
                    category: f.categories[c].clone(),
                    importance: s / n,
                })
        })
        .collect();
    AggregateImportance {
        features: features.into_iter().map(|(_, f)| f).collect(),
        categories,
        n_rows: explanations.len(),
    }
}
