//! Monte Carlo fairness testing on uniformly random inputs.
//!
//! Samples are drawn in fixed-size chunks, chunk `c` from substream `c` of
//! the seed, and only integer counts are merged. Scores are therefore
//! bit-identical for any number of worker threads.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::{DatasetError, DatasetSchema, FeatureKind, SensitiveBinding, SensitiveSpec};
use crate::predictor::Predictor;
use crate::seed;

/// Default sample count per test.
pub const DEFAULT_SAMPLES: usize = 50_000;
const CHUNK: usize = 2048;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SamplerError {
    #[error("invalid bounds for `{feature}`: {reason}")]
    InvalidBounds { feature: String, reason: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// `[lo, hi]` for every numerical feature, `None` for categorical ones
/// (same layout as [`crate::dataset::Dataset::numeric_bounds`]).
pub type Bounds = [Option<(f64, f64)>];

/// Merges per-feature overrides into observed bounds and validates the result.
pub fn resolve_bounds(
    schema: &DatasetSchema,
    observed: &Bounds,
    overrides: &BTreeMap<String, [f64; 2]>,
) -> Result<Vec<Option<(f64, f64)>>, SamplerError> {
    let mut out = observed.to_vec();
    for (name, [lo, hi]) in overrides {
        let invalid = |reason: &str| SamplerError::InvalidBounds {
            feature: name.clone(),
            reason: reason.into(),
        };
        let j = schema
            .feature_index(name)
            .ok_or_else(|| invalid("unknown feature"))?;
        if schema.features[j].kind != FeatureKind::Numerical {
            return Err(invalid("bounds only apply to numerical features"));
        }
        out[j] = Some((*lo, *hi));
    }
    check_bounds(schema, &out)?;
    Ok(out)
}

fn check_bounds(schema: &DatasetSchema, bounds: &Bounds) -> Result<(), SamplerError> {
    if bounds.len() != schema.n_features() {
        return Err(SamplerError::InvalidBounds {
            feature: "*".into(),
            reason: format!(
                "{} entries for {} features",
                bounds.len(),
                schema.n_features()
            ),
        });
    }
    for (f, b) in schema.features.iter().zip(bounds) {
        let invalid = |reason: &str| SamplerError::InvalidBounds {
            feature: f.name.clone(),
            reason: reason.into(),
        };
        match (f.kind, b) {
            (FeatureKind::Numerical, Some((lo, hi))) => {
                if !lo.is_finite() || !hi.is_finite() {
                    return Err(invalid("bounds must be finite"));
                }
                if lo > hi {
                    return Err(invalid("lower bound exceeds upper bound"));
                }
            }
            (FeatureKind::Numerical, None) => return Err(invalid("missing bounds")),
            (FeatureKind::Categorical, _) => {}
        }
    }
    Ok(())
}

fn draw_row(schema: &DatasetSchema, bounds: &Bounds, rng: &mut ChaCha8Rng, out: &mut [f64]) {
    for ((v, f), b) in out.iter_mut().zip(&schema.features).zip(bounds) {
        *v = match f.kind {
            FeatureKind::Categorical => rng.gen_range(0..f.categories.len()) as f64,
            FeatureKind::Numerical => {
                let (lo, hi) = b.expect("checked bounds");
                if lo == hi {
                    lo
                } else {
                    lo + (hi - lo) * rng.gen::<f64>()
                }
            }
        };
    }
}

/// Runs `f` over `n` sampled rows chunk by chunk (in parallel) and sums the
/// returned counts.
fn fold_samples<F>(schema: &DatasetSchema, bounds: &Bounds, n: usize, seed: u64, f: F) -> [u64; 2]
where
    F: Fn(&mut [f64]) -> [u64; 2] + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = seed::stream_rng(seed, c as u64);
            let mut row = vec![0.0; schema.n_features()];
            let len = CHUNK.min(n - c * CHUNK);
            let mut acc = [0u64; 2];
            for _ in 0..len {
                draw_row(schema, bounds, &mut rng, &mut row);
                let [a, b] = f(&mut row);
                acc[0] += a;
                acc[1] += b;
            }
            acc
        })
        .reduce(|| [0, 0], |a, b| [a[0] + b[0], a[1] + b[1]])
}

/// `n` rows drawn uniformly: categorical codes uniformly over the
/// categories, numerical values uniformly over their bounds.
pub fn uniform_sample(
    schema: &DatasetSchema,
    bounds: &Bounds,
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>, SamplerError> {
    check_bounds(schema, bounds)?;
    let chunks = n.div_ceil(CHUNK);
    let rows = (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = seed::stream_rng(seed, c as u64);
            let len = CHUNK.min(n - c * CHUNK);
            (0..len)
                .map(|_| {
                    let mut row = vec![0.0; schema.n_features()];
                    draw_row(schema, bounds, &mut rng, &mut row);
                    row
                })
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(rows)
}

/// Binds the sensitive spec using the sampling bounds of its feature.
pub fn bind_for_sampling(
    spec: &SensitiveSpec,
    schema: &DatasetSchema,
    bounds: &Bounds,
) -> Result<SensitiveBinding, SamplerError> {
    let j = schema.feature_index(&spec.feature);
    let b = j.and_then(|j| bounds.get(j).copied().flatten());
    Ok(SensitiveBinding::bind(spec, schema, b)?)
}

/// Positive-prediction counts when the same `n_per_group` random points are
/// evaluated with the sensitive cell forced to each group's canonical value.
pub fn themis_group_counts<P: Predictor + ?Sized>(
    m: &P,
    schema: &DatasetSchema,
    bounds: &Bounds,
    binding: &SensitiveBinding,
    n_per_group: usize,
    seed: u64,
) -> Result<[u64; 2], SamplerError> {
    check_bounds(schema, bounds)?;
    let j = binding.feature;
    Ok(fold_samples(schema, bounds, n_per_group, seed, |row| {
        let mut out = [0; 2];
        for (g, o) in out.iter_mut().enumerate() {
            row[j] = binding.canonical(g);
            *o = u64::from(m.classify(row));
        }
        out
    }))
}

/// `|posfrac0 - posfrac1| / 2` over sampled points.
pub fn themis_group_score<P: Predictor + ?Sized>(
    m: &P,
    schema: &DatasetSchema,
    bounds: &Bounds,
    binding: &SensitiveBinding,
    n_per_group: usize,
    seed: u64,
) -> Result<f64, SamplerError> {
    if n_per_group == 0 {
        return Ok(0.0);
    }
    let [p0, p1] = themis_group_counts(m, schema, bounds, binding, n_per_group, seed)?;
    let n = n_per_group as f64;
    Ok((p0 as f64 / n - p1 as f64 / n).abs() / 2.0)
}

/// `(flips, evaluated)` over `n` sampled points; points whose sensitive value
/// is in neither group are not evaluated.
pub fn themis_causal_counts<P: Predictor + ?Sized>(
    m: &P,
    schema: &DatasetSchema,
    bounds: &Bounds,
    binding: &SensitiveBinding,
    n: usize,
    seed: u64,
) -> Result<(u64, u64), SamplerError> {
    check_bounds(schema, bounds)?;
    let j = binding.feature;
    let [flips, evaluated] = fold_samples(schema, bounds, n, seed, |row| {
        let before = m.classify(row);
        match binding.flip_value(row[j]) {
            Some(v) => {
                row[j] = v;
                [u64::from(m.classify(row) != before), 1]
            }
            None => [0, 0],
        }
    });
    Ok((flips, evaluated))
}

/// Fraction of evaluated sampled points whose class changes under the
/// sensitive flip.
pub fn themis_causal_score<P: Predictor + ?Sized>(
    m: &P,
    schema: &DatasetSchema,
    bounds: &Bounds,
    binding: &SensitiveBinding,
    n: usize,
    seed: u64,
) -> Result<f64, SamplerError> {
    let (flips, evaluated) = themis_causal_counts(m, schema, bounds, binding, n, seed)?;
    Ok(if evaluated == 0 {
        0.0
    } else {
        flips as f64 / evaluated as f64
    })
}
