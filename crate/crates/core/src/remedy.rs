//! Masking remedies: collapse proxy categories, retrain the same model on the
//! masked data, and compare scores before and after.
//!
//! A remedied model is always paired with its mask. Rows are masked before
//! they reach the model, both for dataset metrics and for sampled Themis
//! points, so the model never observes a category it was trained without.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::dataset::{bias_summary, Dataset, MaskPlan, MaskSpec, SensitiveSpec};
use crate::explain::{aggregate_importance, PerturbationConfig};
use crate::metrics::{fairness_report, FairnessReport};
use crate::models::{train, TrainedModel};
use crate::sampler::{bind_for_sampling, themis_causal_score, themis_group_score};
use crate::sweep::ModelRecord;
use crate::{seed, store, Predictor, Result};

/// A model seen through a mask: every row is masked before scoring.
#[derive(Debug, Clone)]
pub struct MaskedModel<'a> {
    pub model: &'a TrainedModel,
    pub plan: Option<MaskPlan>,
}

impl<'a> MaskedModel<'a> {
    pub fn new(model: &'a TrainedModel, plan: MaskPlan) -> Self {
        Self {
            model,
            plan: (!plan.is_identity()).then_some(plan),
        }
    }

    pub fn unmasked(model: &'a TrainedModel) -> Self {
        Self { model, plan: None }
    }

    /// The predictor a stored record stands for on its (unmasked) dataset.
    pub fn for_record(record: &ModelRecord, model: &'a TrainedModel, ds: &Dataset) -> Result<Self> {
        match &record.mask {
            Some(mask) => Ok(Self::new(model, MaskPlan::compile(mask, ds)?)),
            None => Ok(Self::unmasked(model)),
        }
    }
}

impl Predictor for MaskedModel<'_> {
    fn score(&self, row: &[f64]) -> f64 {
        match &self.plan {
            None => self.model.score(row),
            Some(plan) => {
                let mut r = row.to_vec();
                plan.apply_row(&mut r);
                self.model.score(&r)
            }
        }
    }
}

/// Scores compared by a remedy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemedyMetrics {
    pub accuracy: f64,
    pub aod: f64,
    pub aod_signed: f64,
    /// Dataset group discrimination (absolute).
    pub group_score: f64,
    /// Dataset causal discrimination.
    pub causal_score: f64,
    /// Themis group score on uniform samples, when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub themis_group_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub themis_causal_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemedyConfig {
    /// Seed shared by the before and after Themis runs.
    pub seed: u64,
    /// Samples per Themis test; 0 skips them.
    pub themis_samples: usize,
}

impl Default for RemedyConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            themis_samples: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemedyResult {
    pub remedy_id: String,
    pub base_record_id: String,
    pub dataset_id: String,
    pub sensitive: String,
    /// Mask as requested.
    pub mask: MaskSpec,
    /// Mask actually applied (the base record's own mask merged with `mask`).
    pub effective_mask: MaskSpec,
    pub config: RemedyConfig,
    pub before: RemedyMetrics,
    pub after: RemedyMetrics,
    pub remedied_record_id: String,
}

/// A remedy together with the new record and model it produced.
#[derive(Debug, Clone)]
pub struct RemedyOutcome {
    pub result: RemedyResult,
    pub record: ModelRecord,
    pub model: TrainedModel,
}

fn metrics(
    m: &dyn Predictor,
    report: &FairnessReport,
    ds: &Dataset,
    spec: &SensitiveSpec,
    cfg: &RemedyConfig,
) -> Result<RemedyMetrics> {
    let (mut tg, mut tc) = (None, None);
    if cfg.themis_samples > 0 {
        let bounds = ds.numeric_bounds();
        let binding = bind_for_sampling(spec, ds.schema(), &bounds)?;
        let n = cfg.themis_samples;
        tg = Some(themis_group_score(m, ds.schema(), &bounds, &binding, n, cfg.seed)?);
        tc = Some(themis_causal_score(m, ds.schema(), &bounds, &binding, n, cfg.seed)?);
    }
    Ok(RemedyMetrics {
        accuracy: report.score,
        aod: report.aod,
        aod_signed: report.aod_signed,
        group_score: report.group_score,
        causal_score: report.causal_score,
        themis_group_score: tg,
        themis_causal_score: tc,
    })
}

/// Builds a record for `model` scored through `predictor`, with lineage.
pub fn scored_record(
    model: &TrainedModel,
    predictor: &dyn Predictor,
    ds: &Dataset,
    spec: &SensitiveSpec,
    parent: Option<String>,
    mask: Option<MaskSpec>,
) -> Result<(ModelRecord, FairnessReport)> {
    let report = fairness_report(predictor, ds, spec)?;
    let mut record = ModelRecord {
        record_id: String::new(),
        kind: model.kind(),
        hyperparams: model.hyperparams.clone(),
        dataset_id: ds.id().to_string(),
        sensitive: spec.feature.clone(),
        accuracy: report.score,
        aod_signed: report.aod_signed,
        aod: report.aod,
        group_score: Some(report.group_score),
        causal_score: Some(report.causal_score),
        train_seed: model.train_seed,
        parent,
        mask,
    };
    record.record_id = store::id_for(&record, model);
    Ok((record, report))
}

/// Recomputes a stored record's metadata from its model and dataset.
pub fn rescore(
    record: &ModelRecord,
    model: &TrainedModel,
    ds: &Dataset,
    spec: &SensitiveSpec,
) -> Result<ModelRecord> {
    let p = MaskedModel::for_record(record, model, ds)?;
    Ok(scored_record(model, &p, ds, spec, record.parent.clone(), record.mask.clone())?.0)
}

fn merged(base: Option<&MaskSpec>, extra: &MaskSpec) -> MaskSpec {
    let mut m = base.cloned().unwrap_or_default();
    for (k, v) in &extra.entries {
        m.entries.insert(k.clone(), v.clone());
    }
    m
}

/// Deterministic id of a remedy request.
pub fn remedy_id(base_record_id: &str, mask: &MaskSpec, cfg: &RemedyConfig) -> String {
    let body = serde_json::json!({ "base": base_record_id, "mask": mask, "config": cfg });
    let h = store::sha256_hex(store::canonical_json(&body).as_bytes());
    format!("remedy-{}", &h[..store::HASH_PREFIX_LEN])
}

/// Masks `ds`, retrains the record's model kind with its hyperparameters and
/// training seed on the masked data, and scores both models on `ds` (the
/// remedied model through its mask).
///
/// When the base record is itself remedied, its mask is kept and `mask` is
/// layered on top, per feature.
pub fn apply_remedy(
    record: &ModelRecord,
    model: &TrainedModel,
    mask: &MaskSpec,
    ds: &Dataset,
    spec: &SensitiveSpec,
    cfg: &RemedyConfig,
) -> Result<RemedyOutcome> {
    let effective = merged(record.mask.as_ref(), mask);
    let plan = MaskPlan::compile(&effective, ds)?;
    let masked_ds = plan.apply(ds);
    let retrained = train(&record.hyperparams, &masked_ds, record.train_seed)?;

    let base = MaskedModel::for_record(record, model, ds)?;
    let before_report = fairness_report(&base, ds, spec)?;
    let before = metrics(&base, &before_report, ds, spec, cfg)?;

    let lineage_mask = (!effective.is_empty()).then(|| effective.clone());
    let after_model = MaskedModel::new(&retrained, plan);
    let (new_record, after_report) = scored_record(
        &retrained,
        &after_model,
        ds,
        spec,
        Some(record.record_id.clone()),
        lineage_mask,
    )?;
    let after = metrics(&after_model, &after_report, ds, spec, cfg)?;

    let result = RemedyResult {
        remedy_id: remedy_id(&record.record_id, mask, cfg),
        base_record_id: record.record_id.clone(),
        dataset_id: ds.id().to_string(),
        sensitive: spec.feature.clone(),
        mask: mask.clone(),
        effective_mask: effective,
        config: cfg.clone(),
        before,
        after,
        remedied_record_id: new_record.record_id.clone(),
    };
    Ok(RemedyOutcome {
        result,
        record: new_record,
        model: retrained,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuggestConfig {
    /// Dataset rows explained to estimate importance.
    pub n_rows: usize,
    /// Maximum number of suggestions returned.
    pub top: usize,
    pub explain: PerturbationConfig,
}

impl Default for SuggestConfig {
    fn default() -> Self {
        Self {
            n_rows: 50,
            top: 10,
            explain: PerturbationConfig {
                n_samples: 1000,
                ..PerturbationConfig::default()
            },
        }
    }
}

/// One candidate category to mask, with both factors of its score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSuggestion {
    pub feature: String,
    pub category: String,
    pub code: usize,
    /// Mean `|weight|` the model's explanations give this category.
    pub importance: f64,
    pub share_group1: f64,
    /// `|share_group1 - overall share of group 1|`.
    pub share_deviation: f64,
    /// `importance * share_deviation`.
    pub score: f64,
    pub mask: MaskSpec,
}

/// Ranks categories of non-sensitive categorical features by how much the
/// model relies on them times how unevenly the two groups populate them.
/// Purely advisory; nothing is applied.
pub fn suggest_masks(
    record: &ModelRecord,
    model: &TrainedModel,
    ds: &Dataset,
    spec: &SensitiveSpec,
    cfg: &SuggestConfig,
) -> Result<Vec<MaskSuggestion>> {
    let p = MaskedModel::for_record(record, model, ds)?;
    let k = cfg.n_rows.min(ds.n_rows());
    let mut idx = index::sample(&mut seed::rng(cfg.explain.seed), ds.n_rows(), k).into_vec();
    idx.sort_unstable();
    let rows: Vec<&[f64]> = idx.iter().map(|&i| ds.row(i)).collect();
    let importance = aggregate_importance(&p, &rows, ds, &cfg.explain)?;
    let bias = bias_summary(ds, spec)?;

    let mut out = Vec::new();
    for ci in importance.categories {
        if ci.feature == spec.feature || ci.importance <= 0.0 {
            continue;
        }
        let Some(fb) = bias.features.iter().find(|f| f.feature == ci.feature) else {
            continue;
        };
        let Some(share) = fb
            .buckets
            .iter()
            .find(|b| b.code == Some(ci.code))
            .and_then(|b| b.share_group1)
        else {
            continue;
        };
        let deviation = (share - bias.mean_share_group1).abs();
        let score = ci.importance * deviation;
        if score > 0.0 {
            out.push(MaskSuggestion {
                mask: MaskSpec::new().with(
                    ci.feature.clone(),
                    crate::dataset::MaskEntry::Categories(vec![ci.category.clone()]),
                ),
                feature: ci.feature,
                category: ci.category,
                code: ci.code,
                importance: ci.importance,
                share_group1: share,
                share_deviation: deviation,
                score,
            });
        }
    }
    let position = |name: &str| ds.schema().feature_index(name).unwrap_or(usize::MAX);
    out.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(position(&a.feature).cmp(&position(&b.feature)))
            .then(a.code.cmp(&b.code))
    });
    out.truncate(cfg.top);
    Ok(out)
}
