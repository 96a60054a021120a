//! Transport-independent operations behind both the HTTP routes and the CLI.
//!
//! Everything here is synchronous and may be CPU heavy; the HTTP layer runs
//! it on the blocking pool.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use fairlens_core::audit::{self, PredictionRow, ThemisConfig, ThemisRun};
use fairlens_core::dataset::{
    bias_summary, feature_bias, Dataset, DatasetSchema, FeatureBias, FeatureBiasSummary,
    FeatureKind, FeatureSchema, LabelSchema, MaskSpec, SensitiveSpec,
};
use fairlens_core::explain::{
    explain_point, sample_counterfactual_points, CounterfactualSample, Explanation,
    PerturbationConfig,
};
use fairlens_core::models::{export_logic, ModelKind, ModelLogic, TrainedModel};
use fairlens_core::remedy::{
    apply_remedy, remedy_id, suggest_masks, MaskSuggestion, MaskedModel, RemedyConfig,
    RemedyResult, SuggestConfig,
};
use fairlens_core::store::{RecordFilter, Store, StoreError};
use fairlens_core::sweep::{run_sweep, select, ModelRecord, SweepConfig, SweepManifest};
use serde::{Deserialize, Serialize};

use crate::error::ApiError;

pub type ApiResult<T> = Result<T, ApiError>;

/// Display depth used for tree logic when the caller does not pick one.
pub const DEFAULT_TREE_DEPTH: usize = 4;

/// Largest population a single sweep request may ask for.
pub const MAX_SWEEP_SIZE: usize = 1000;

/// Shared state of the service: the store plus a cache of parsed datasets.
///
/// Datasets are immutable once ingested, so caching them changes no
/// response; it only avoids re-parsing CSV on every request.
#[derive(Debug, Clone)]
pub struct Workbench {
    store: Store,
    datasets: Arc<Mutex<HashMap<String, Arc<Dataset>>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub dataset_id: String,
    pub n_rows: usize,
    pub features: Vec<FeatureSchema>,
    pub label: LabelSchema,
    /// Tags of the stored sensitive specs.
    pub sensitive: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRequest {
    pub kind: ModelKind,
    pub dataset: String,
    pub sensitive: String,
    pub n: usize,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDetail {
    pub record: ModelRecord,
    pub logic: ModelLogic,
    pub converged: bool,
    pub iterations: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub record_id: String,
    pub dataset_id: String,
    pub rows: Vec<PredictionRow>,
}

/// One cell of a user-supplied row: a number, or a category name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Number(f64),
    Text(String),
}

/// A row given either positionally or keyed by feature name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RowInput {
    Values(Vec<Cell>),
    Named(BTreeMap<String, Cell>),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplainRequest {
    #[serde(default)]
    pub row: Option<RowInput>,
    #[serde(default)]
    pub row_index: Option<usize>,
    #[serde(default)]
    pub config: Option<PerturbationConfig>,
    /// Overrides `config.seed` when present.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainResponse {
    pub record_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row_index: Option<usize>,
    /// The explained row, decoded to category names.
    pub row: Vec<String>,
    pub config: PerturbationConfig,
    pub explanation: Explanation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterfactuals {
    pub record_id: String,
    pub k: usize,
    pub seed: u64,
    #[serde(flatten)]
    pub sample: CounterfactualSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThemisRequest {
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub bounds: BTreeMap<String, [f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemedyRequest {
    pub model_id: String,
    pub mask: MaskSpec,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Samples per Themis test in the comparison; 0 (the default) skips them.
    #[serde(default)]
    pub themis_samples: usize,
}

/// One line of the comparison report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub score: f64,
    #[serde(rename = "AOD")]
    pub aod: f64,
    pub group_score: f64,
    pub causal_score: f64,
    pub dataset: String,
    pub model: String,
    pub optimal: String,
    pub record_id: String,
}

#[derive(Debug, Clone, Default)]
pub struct ReportOptions {
    pub filter: RecordFilter,
    /// Restrict to the members of one sweep.
    pub sweep: Option<String>,
    /// Only emit the selected representatives, one row per role.
    pub selected_only: bool,
    /// Replace the dataset group and causal scores with Themis scores.
    pub themis: Option<ThemisConfig>,
}

impl Workbench {
    pub fn new(store: Store) -> Self {
        Self {
            store,
            datasets: Arc::default(),
        }
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    // datasets

    pub fn dataset(&self, id: &str) -> ApiResult<Arc<Dataset>> {
        if let Some(ds) = self.cache().get(id) {
            return Ok(Arc::clone(ds));
        }
        let ds = Arc::new(self.store.load_dataset(id)?);
        self.cache().insert(id.to_string(), Arc::clone(&ds));
        Ok(ds)
    }

    fn cache(&self) -> std::sync::MutexGuard<'_, HashMap<String, Arc<Dataset>>> {
        self.datasets.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn sensitive(&self, dataset_id: &str, tag: &str) -> ApiResult<SensitiveSpec> {
        self.dataset(dataset_id)?;
        Ok(self.store.load_sensitive(dataset_id, tag)?)
    }

    pub fn ingest(&self, ds: &Dataset, specs: &[SensitiveSpec]) -> ApiResult<DatasetInfo> {
        for spec in specs {
            fairlens_core::dataset::assign_groups(ds, spec)?;
        }
        self.store.save_dataset(ds)?;
        for spec in specs {
            self.store.save_sensitive(ds.id(), &spec.feature, spec)?;
        }
        self.cache().remove(ds.id());
        self.dataset_info(ds.id())
    }

    pub fn dataset_info(&self, id: &str) -> ApiResult<DatasetInfo> {
        let ds = self.dataset(id)?;
        Ok(DatasetInfo {
            dataset_id: id.to_string(),
            n_rows: ds.n_rows(),
            features: ds.schema().features.clone(),
            label: ds.schema().label.clone(),
            sensitive: self.store.list_sensitive(id)?,
        })
    }

    pub fn list_datasets(&self) -> ApiResult<Vec<DatasetInfo>> {
        self.store
            .list_datasets()?
            .iter()
            .map(|id| self.dataset_info(id))
            .collect()
    }

    pub fn bias(&self, dataset_id: &str, sensitive: &str) -> ApiResult<FeatureBiasSummary> {
        let ds = self.dataset(dataset_id)?;
        let spec = self.sensitive(dataset_id, sensitive)?;
        Ok(bias_summary(&ds, &spec)?)
    }

    pub fn histogram(
        &self,
        dataset_id: &str,
        feature: &str,
        sensitive: &str,
    ) -> ApiResult<FeatureBias> {
        let ds = self.dataset(dataset_id)?;
        if ds.schema().feature_index(feature).is_none() {
            return Err(ApiError::not_found("feature", feature));
        }
        let spec = self.sensitive(dataset_id, sensitive)?;
        Ok(feature_bias(&ds, &spec, feature)?)
    }

    // sweeps

    pub fn sweep_config(&self, req: &SweepRequest, default_seed: u64) -> ApiResult<SweepConfig> {
        if req.n == 0 || req.n > MAX_SWEEP_SIZE {
            return Err(ApiError::invalid(
                "n",
                format!("must be between 1 and {MAX_SWEEP_SIZE}"),
            ));
        }
        self.sensitive(&req.dataset, &req.sensitive)?;
        Ok(SweepConfig {
            kind: req.kind,
            dataset: req.dataset.clone(),
            sensitive: req.sensitive.clone(),
            n_models: req.n,
            seed: req.seed.unwrap_or(default_seed),
        })
    }

    /// Runs the sweep and stores its members and manifest. A sweep already
    /// in the store is returned as is.
    pub fn run_sweep(&self, config: &SweepConfig) -> ApiResult<SweepManifest> {
        match self.store.load_sweep(&config.sweep_id()) {
            Ok(m) => return Ok(m),
            Err(StoreError::NotFound { .. }) => {}
            Err(e) => return Err(e.into()),
        }
        let ds = self.dataset(&config.dataset)?;
        let spec = self.sensitive(&config.dataset, &config.sensitive)?;
        let outcome = run_sweep(config.kind, &ds, &spec, config.n_models, config.seed);
        for m in &outcome.members {
            self.store.save_record(&m.record, &m.model)?;
        }
        let manifest = SweepManifest::new(config.clone(), &outcome);
        self.store.save_sweep(&manifest)?;
        Ok(manifest)
    }

    pub fn sweep(&self, id: &str) -> ApiResult<SweepManifest> {
        Ok(self.store.load_sweep(id)?)
    }

    // models

    pub fn list_models(&self, filter: &RecordFilter) -> ApiResult<Vec<ModelRecord>> {
        Ok(self.store.list_records(filter)?)
    }

    fn record(&self, id: &str) -> ApiResult<(ModelRecord, TrainedModel)> {
        Ok(self.store.load_record(id)?)
    }

    /// Dataset and sensitive spec a record was scored on.
    fn context(&self, record: &ModelRecord) -> ApiResult<(Arc<Dataset>, SensitiveSpec)> {
        let ds = self.dataset(&record.dataset_id)?;
        let spec = self.sensitive(&record.dataset_id, &record.sensitive)?;
        Ok((ds, spec))
    }

    pub fn model(&self, id: &str, depth: Option<usize>) -> ApiResult<ModelDetail> {
        let (record, model) = self.record(id)?;
        Ok(ModelDetail {
            logic: export_logic(&model, Some(depth.unwrap_or(DEFAULT_TREE_DEPTH))),
            converged: model.converged,
            iterations: model.iterations,
            record,
        })
    }

    pub fn predictions(&self, id: &str, dataset: Option<&str>) -> ApiResult<Predictions> {
        let (record, model) = self.record(id)?;
        let dataset_id = dataset.unwrap_or(&record.dataset_id);
        let ds = self.dataset(dataset_id)?;
        if dataset_id != record.dataset_id {
            let trained_on = self.store.load_schema(&record.dataset_id)?;
            if !same_features(&trained_on, ds.schema()) {
                return Err(ApiError::invalid(
                    "dataset",
                    format!("`{dataset_id}` does not share the features of `{}`", record.dataset_id),
                ));
            }
        }
        let spec = self.sensitive(dataset_id, &record.sensitive)?;
        Ok(Predictions {
            rows: audit::predictions(&record, &model, &ds, &spec)?,
            record_id: record.record_id,
            dataset_id: dataset_id.to_string(),
        })
    }

    pub fn explain(
        &self,
        id: &str,
        req: &ExplainRequest,
        default_seed: u64,
    ) -> ApiResult<ExplainResponse> {
        let (record, model) = self.record(id)?;
        let ds = self.dataset(&record.dataset_id)?;
        let mut config = req.config.clone().unwrap_or_else(|| PerturbationConfig {
            seed: default_seed,
            ..PerturbationConfig::default()
        });
        if let Some(seed) = req.seed {
            config.seed = seed;
        }
        let row = match (&req.row, req.row_index) {
            (Some(_), Some(_)) => {
                return Err(ApiError::invalid("row_index", "give either `row` or `row_index`"))
            }
            (None, None) => return Err(ApiError::invalid("row", "`row` or `row_index` is required")),
            (None, Some(i)) => {
                if i >= ds.n_rows() {
                    return Err(ApiError::invalid(
                        "row_index",
                        format!("out of range for {} rows", ds.n_rows()),
                    ));
                }
                ds.row(i).to_vec()
            }
            (Some(input), None) => encode_row(ds.schema(), input)?,
        };
        if let Err(e) = config.validate() {
            return Err(ApiError::invalid("config", e.to_string()));
        }
        let predictor = MaskedModel::for_record(&record, &model, &ds)?;
        let explanation = explain_point(&predictor, &row, &ds, &config)?;
        Ok(ExplainResponse {
            record_id: record.record_id,
            row_index: req.row_index,
            row: decode_row(ds.schema(), &row),
            config,
            explanation,
        })
    }

    pub fn counterfactuals(&self, id: &str, k: usize, seed: u64) -> ApiResult<Counterfactuals> {
        let (record, model) = self.record(id)?;
        let (ds, spec) = self.context(&record)?;
        let predictor = MaskedModel::for_record(&record, &model, &ds)?;
        Ok(Counterfactuals {
            sample: sample_counterfactual_points(&predictor, &ds, &spec, k, seed)?,
            record_id: record.record_id,
            k,
            seed,
        })
    }

    pub fn themis_config(&self, req: &ThemisRequest, default_seed: u64) -> ThemisConfig {
        ThemisConfig {
            n: req.n.unwrap_or(fairlens_core::sampler::DEFAULT_SAMPLES),
            seed: req.seed.unwrap_or(default_seed),
            bounds: req.bounds.clone(),
        }
    }

    /// Checks that a Themis run can start, so request errors surface before
    /// a job is queued.
    pub fn check_themis(&self, id: &str, cfg: &ThemisConfig) -> ApiResult<()> {
        let record = self.store.load_meta(id)?;
        let (ds, _) = self.context(&record)?;
        fairlens_core::sampler::resolve_bounds(ds.schema(), &ds.numeric_bounds(), &cfg.bounds)
            .map_err(|e| ApiError::invalid("bounds", e.to_string()))?;
        Ok(())
    }

    /// Runs (or reloads) a Themis test of a record.
    pub fn themis(&self, id: &str, cfg: &ThemisConfig) -> ApiResult<ThemisRun> {
        let tid = audit::themis_id(id, cfg);
        match self.store.load_themis(&tid) {
            Ok(run) => return Ok(run),
            Err(StoreError::NotFound { .. }) => {}
            Err(e) => return Err(e.into()),
        }
        let (record, model) = self.record(id)?;
        let (ds, spec) = self.context(&record)?;
        let run = audit::run_themis(&record, &model, &ds, &spec, cfg)?;
        self.store.save_themis(&run)?;
        Ok(run)
    }

    pub fn themis_run(&self, themis_id: &str) -> ApiResult<ThemisRun> {
        Ok(self.store.load_themis(themis_id)?)
    }

    // remedies

    pub fn remedy(&self, req: &RemedyRequest, default_seed: u64) -> ApiResult<RemedyResult> {
        let cfg = RemedyConfig {
            seed: req.seed.unwrap_or(default_seed),
            themis_samples: req.themis_samples,
        };
        let rid = remedy_id(&req.model_id, &req.mask, &cfg);
        match self.store.load_remedy(&rid) {
            Ok(r) => return Ok(r),
            Err(StoreError::NotFound { .. }) => {}
            Err(e) => return Err(e.into()),
        }
        let (record, model) = self.record(&req.model_id)?;
        let (ds, spec) = self.context(&record)?;
        let _guard = self.store.begin_remedy(&record.record_id)?;
        let outcome = apply_remedy(&record, &model, &req.mask, &ds, &spec, &cfg)
            .map_err(|e| match e {
                fairlens_core::Error::Dataset(d) => ApiError::invalid("mask", d.to_string()),
                other => other.into(),
            })?;
        self.store.save_record(&outcome.record, &outcome.model)?;
        self.store.save_remedy(&outcome.result)?;
        Ok(outcome.result)
    }

    pub fn get_remedy(&self, id: &str) -> ApiResult<RemedyResult> {
        Ok(self.store.load_remedy(id)?)
    }

    pub fn suggest_masks(&self, id: &str, cfg: &SuggestConfig) -> ApiResult<Vec<MaskSuggestion>> {
        let (record, model) = self.record(id)?;
        let (ds, spec) = self.context(&record)?;
        if let Err(e) = cfg.explain.validate() {
            return Err(ApiError::invalid("explain", e.to_string()));
        }
        Ok(suggest_masks(&record, &model, &ds, &spec, cfg)?)
    }

    // report

    /// Rows of the accuracy and fairness comparison table.
    ///
    /// Sweep members (records without a parent) are grouped into populations
    /// by dataset, sensitive feature and kind; the `optimal` column names the
    /// roles a record holds in its population (`Worst` = least fair, `Score`
    /// = most accurate, `Fairness` = most fair).
    pub fn report(&self, opts: &ReportOptions) -> ApiResult<Vec<ReportRow>> {
        let mut records = self.store.list_records(&opts.filter)?;
        if let Some(sid) = &opts.sweep {
            let manifest = self.store.load_sweep(sid)?;
            let order: HashMap<&str, usize> = manifest
                .record_ids
                .iter()
                .enumerate()
                .map(|(i, id)| (id.as_str(), i))
                .collect();
            records.retain(|r| order.contains_key(r.record_id.as_str()));
            records.sort_by_key(|r| order[r.record_id.as_str()]);
        }

        let mut populations: BTreeMap<(String, String, ModelKind), Vec<ModelRecord>> =
            BTreeMap::new();
        for r in records.iter().filter(|r| r.parent.is_none()) {
            populations
                .entry((r.dataset_id.clone(), r.sensitive.clone(), r.kind))
                .or_default()
                .push(r.clone());
        }
        let mut roles: HashMap<String, Vec<&'static str>> = HashMap::new();
        let mut picks: Vec<(String, &'static str)> = Vec::new();
        for pop in populations.values() {
            if let Some(sel) = select(pop) {
                for (id, role) in [
                    (sel.most_unfair, "Worst"),
                    (sel.most_accurate, "Score"),
                    (sel.most_fair, "Fairness"),
                ] {
                    roles.entry(id.clone()).or_default().push(role);
                    picks.push((id, role));
                }
            }
        }

        let by_id: HashMap<&str, &ModelRecord> =
            records.iter().map(|r| (r.record_id.as_str(), r)).collect();
        let lines: Vec<(&ModelRecord, String)> = if opts.selected_only {
            picks
                .iter()
                .map(|(id, role)| (by_id[id.as_str()], role.to_string()))
                .collect()
        } else {
            records
                .iter()
                .map(|r| {
                    let role = roles.get(&r.record_id).map(|v| v.join(";"));
                    (r, role.unwrap_or_default())
                })
                .collect()
        };

        lines
            .into_iter()
            .map(|(r, optimal)| {
                let (group_score, causal_score) = match &opts.themis {
                    Some(cfg) => {
                        let run = self.themis(&r.record_id, cfg)?;
                        (run.group_score, run.causal_score)
                    }
                    None => (
                        r.group_score.unwrap_or(f64::NAN),
                        r.causal_score.unwrap_or(f64::NAN),
                    ),
                };
                Ok(ReportRow {
                    score: r.accuracy,
                    aod: r.aod,
                    group_score,
                    causal_score,
                    dataset: format!("{}, {}", r.dataset_id, r.sensitive),
                    model: r.kind.short().to_ascii_uppercase(),
                    optimal,
                    record_id: r.record_id.clone(),
                })
            })
            .collect()
    }
}

fn same_features(a: &DatasetSchema, b: &DatasetSchema) -> bool {
    a.features == b.features
}

/// Turns a user-supplied row into feature values, reporting the offending
/// cell by path (`row[3]` or `row.age`).
pub fn encode_row(schema: &DatasetSchema, input: &RowInput) -> ApiResult<Vec<f64>> {
    let cells: Vec<(String, &Cell)> = match input {
        RowInput::Values(v) => {
            if v.len() != schema.n_features() {
                return Err(ApiError::invalid(
                    "row",
                    format!("expected {} values, got {}", schema.n_features(), v.len()),
                ));
            }
            v.iter()
                .enumerate()
                .map(|(i, c)| (format!("row[{i}]"), c))
                .collect()
        }
        RowInput::Named(m) => {
            if let Some(unknown) = m.keys().find(|k| schema.feature_index(k).is_none()) {
                return Err(ApiError::invalid(format!("row.{unknown}"), "unknown feature"));
            }
            let mut out = Vec::with_capacity(schema.n_features());
            for f in &schema.features {
                match m.get(&f.name) {
                    Some(c) => out.push((format!("row.{}", f.name), c)),
                    None => {
                        return Err(ApiError::invalid(format!("row.{}", f.name), "missing value"))
                    }
                }
            }
            out
        }
    };
    cells
        .into_iter()
        .zip(&schema.features)
        .map(|((path, cell), f)| encode_cell(f, cell).map_err(|m| ApiError::invalid(path, m)))
        .collect()
}

fn encode_cell(f: &FeatureSchema, cell: &Cell) -> Result<f64, String> {
    match (f.kind, cell) {
        (FeatureKind::Categorical, Cell::Text(s)) => f
            .category_code(s)
            .map(|c| c as f64)
            .ok_or_else(|| format!("unknown category `{s}`")),
        (FeatureKind::Categorical, Cell::Number(v)) => {
            if v.fract() == 0.0 && *v >= 0.0 && (*v as usize) < f.categories.len() {
                Ok(*v)
            } else {
                Err(format!("category code {v} out of range"))
            }
        }
        (FeatureKind::Numerical, Cell::Number(v)) if v.is_finite() => Ok(*v),
        (FeatureKind::Numerical, Cell::Number(_)) => Err("value must be finite".into()),
        (FeatureKind::Numerical, Cell::Text(s)) => s
            .trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| format!("`{s}` is not a number")),
    }
}

fn decode_row(schema: &DatasetSchema, row: &[f64]) -> Vec<String> {
    schema
        .features
        .iter()
        .zip(row)
        .map(|(f, &v)| f.decode(v))
        .collect()
}
