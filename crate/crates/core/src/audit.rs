//! Audits of a single stored model: per-row predictions with counterfactual
//! flags, and seeded Themis runs on uniformly sampled inputs.
//!
//! Every function takes the record alongside the model so that remedied
//! models are always evaluated through their mask.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, SensitiveBinding, SensitiveSpec};
use crate::metrics::counterfactual_set;
use crate::models::TrainedModel;
use crate::remedy::MaskedModel;
use crate::sampler::{
    bind_for_sampling, resolve_bounds, themis_causal_counts, themis_group_counts,
    DEFAULT_SAMPLES,
};
use crate::sweep::ModelRecord;
use crate::{store, Predictor, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThemisConfig {
    /// Points per group for the group test, and in total for the causal test.
    pub n: usize,
    pub seed: u64,
    /// Per-feature `[lo, hi]` overrides of the observed numerical ranges.
    pub bounds: BTreeMap<String, [f64; 2]>,
}

impl Default for ThemisConfig {
    fn default() -> Self {
        Self {
            n: DEFAULT_SAMPLES,
            seed: 0,
            bounds: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThemisRun {
    pub themis_id: String,
    pub record_id: String,
    pub config: ThemisConfig,
    /// Positive predictions with the sensitive cell forced to each group.
    pub group_positive: [u64; 2],
    pub group_score: f64,
    pub causal_flips: u64,
    pub causal_evaluated: u64,
    pub causal_score: f64,
}

/// Deterministic id of a Themis run request.
pub fn themis_id(record_id: &str, cfg: &ThemisConfig) -> String {
    let body = serde_json::json!({ "record": record_id, "config": cfg });
    let h = store::sha256_hex(store::canonical_json(&body).as_bytes());
    format!("themis-{}", &h[..store::HASH_PREFIX_LEN])
}

/// Runs both Themis tests on `record`'s model with the shared seed in `cfg`.
pub fn run_themis(
    record: &ModelRecord,
    model: &TrainedModel,
    ds: &Dataset,
    spec: &SensitiveSpec,
    cfg: &ThemisConfig,
) -> Result<ThemisRun> {
    let p = MaskedModel::for_record(record, model, ds)?;
    let bounds = resolve_bounds(ds.schema(), &ds.numeric_bounds(), &cfg.bounds)?;
    let binding = bind_for_sampling(spec, ds.schema(), &bounds)?;
    let group_positive = themis_group_counts(&p, ds.schema(), &bounds, &binding, cfg.n, cfg.seed)?;
    let (flips, evaluated) =
        themis_causal_counts(&p, ds.schema(), &bounds, &binding, cfg.n, cfg.seed)?;
    let n = cfg.n as f64;
    let group_score = if cfg.n == 0 {
        0.0
    } else {
        (group_positive[0] as f64 / n - group_positive[1] as f64 / n).abs() / 2.0
    };
    Ok(ThemisRun {
        themis_id: themis_id(&record.record_id, cfg),
        record_id: record.record_id.clone(),
        config: cfg.clone(),
        group_positive,
        group_score,
        causal_flips: flips,
        causal_evaluated: evaluated,
        causal_score: if evaluated == 0 {
            0.0
        } else {
            flips as f64 / evaluated as f64
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub index: usize,
    pub probability: f64,
    pub prediction: u8,
    pub label: u8,
    /// 0 or 1; absent for rows in neither group.
    pub group: Option<usize>,
    pub counterfactual: bool,
}

/// The model's probability for every row of `ds`, with row `i` flagged as a
/// counterfactual exactly when it is in the dataset's counterfactual set.
pub fn predictions(
    record: &ModelRecord,
    model: &TrainedModel,
    ds: &Dataset,
    spec: &SensitiveSpec,
) -> Result<Vec<PredictionRow>> {
    let p = MaskedModel::for_record(record, model, ds)?;
    let binding = SensitiveBinding::for_dataset(spec, ds)?;
    let cf = counterfactual_set(&p, ds, spec)?;
    let mut cf = cf.into_iter().peekable();
    Ok(ds
        .rows()
        .enumerate()
        .map(|(i, row)| {
            let probability = p.score(row);
            let counterfactual = cf.next_if_eq(&i).is_some();
            PredictionRow {
                index: i,
                probability,
                prediction: u8::from(probability >= 0.5),
                label: ds.labels()[i],
                group: binding.group_of(row).index(),
                counterfactual,
            }
        })
        .collect())
}
