//! Model populations from random hyperparameter mutation, and selection of
//! representative models from them.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, MaskSpec, SensitiveSpec};
use crate::models::{
    train, Criterion, ForestParams, Hyperparams, LogisticParams, MaxFeatures, ModelKind, Penalty,
    SvmParams, TrainedModel, TreeParams,
};
use crate::remedy::scored_record;
use crate::store::{self, Lineage};
use crate::seed;

/// Metadata kept next to every stored model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub record_id: String,
    pub kind: ModelKind,
    pub hyperparams: Hyperparams,
    pub dataset_id: String,
    /// Tag of the sensitive spec the scores refer to (its feature name).
    pub sensitive: String,
    pub accuracy: f64,
    pub aod_signed: f64,
    pub aod: f64,
    #[serde(default)]
    pub group_score: Option<f64>,
    #[serde(default)]
    pub causal_score: Option<f64>,
    pub train_seed: u64,
    /// Record this one was remedied from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    /// Mask applied before training and before every prediction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<MaskSpec>,
}

impl ModelRecord {
    pub fn lineage(&self) -> Lineage<'_> {
        Lineage {
            parent: self.parent.as_deref(),
            mask: self.mask.as_ref(),
        }
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo.ln()..hi.ln())).exp()
}

fn tree_params(rng: &mut ChaCha8Rng, max_features: MaxFeatures) -> TreeParams {
    let criterion = if rng.gen_bool(0.5) {
        Criterion::Gini
    } else {
        Criterion::Entropy
    };
    let max_depth = if rng.gen_bool(1.0 / 20.0) {
        None
    } else {
        Some(rng.gen_range(2..=20))
    };
    // half the draws are unpruned; the rest spread over [1e-4, 1) on a log
    // scale so that moderate pruning is as likely as collapsing to a stump
    let ccp_alpha = if rng.gen_bool(0.5) {
        0.0
    } else {
        log_uniform(rng, 1e-4, 1.0)
    };
    TreeParams {
        criterion,
        max_depth,
        min_samples_split: rng.gen_range(2..=9),
        min_samples_leaf: rng.gen_range(1..=5),
        ccp_alpha,
        max_features,
        seed: rng.gen(),
    }
}

/// Draws one hyperparameter setting of `kind`, every field independently.
pub fn mutate_hyperparams(kind: ModelKind, rng: &mut ChaCha8Rng) -> Hyperparams {
    match kind {
        ModelKind::LogisticRegression => Hyperparams::LogisticRegression(LogisticParams {
            penalty: if rng.gen_bool(0.5) {
                Penalty::L1
            } else {
                Penalty::L2
            },
            c: log_uniform(rng, 1e-2, 1e2),
            tol: log_uniform(rng, 1e-4, 0.9),
            max_iter: rng.gen_range(100..=1000),
            fit_intercept: rng.gen_bool(0.5),
            standard_scale: rng.gen_bool(0.5),
        }),
        ModelKind::DecisionTree => {
            let mf = [MaxFeatures::All, MaxFeatures::Sqrt, MaxFeatures::Log2][rng.gen_range(0..3)];
            Hyperparams::DecisionTree(tree_params(rng, mf))
        }
        ModelKind::RandomForest => {
            let mf = [MaxFeatures::All, MaxFeatures::Sqrt, MaxFeatures::Log2][rng.gen_range(0..3)];
            let tree = tree_params(rng, mf);
            Hyperparams::RandomForest(ForestParams {
                tree,
                n_estimators: rng.gen_range(50..=100),
                bootstrap: rng.gen_bool(0.5),
            })
        }
        ModelKind::LinearSvm => Hyperparams::LinearSvm(SvmParams {
            c: log_uniform(rng, 1e-3, 5.0),
            tol: log_uniform(rng, 1e-5, 1e-2),
            max_iter: rng.gen_range(20..=100),
            standard_scale: rng.gen_bool(0.5),
            seed: rng.gen(),
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub kind: ModelKind,
    pub dataset: String,
    pub sensitive: String,
    pub n_models: usize,
    pub seed: u64,
}

impl SweepConfig {
    /// Deterministic id derived from the configuration.
    pub fn sweep_id(&self) -> String {
        let h = store::canonical_json(self);
        let digest = store::sha256_hex(h.as_bytes());
        format!("sweep-{}", &digest[..store::HASH_PREFIX_LEN])
    }
}

/// A model that could not be trained or scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub index: usize,
    pub reason: String,
}

/// One trained and scored member of a population.
#[derive(Debug, Clone)]
pub struct Member {
    pub record: ModelRecord,
    pub model: TrainedModel,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub members: Vec<Member>,
    pub skipped: Vec<Skipped>,
}

impl SweepOutcome {
    pub fn records(&self) -> Vec<ModelRecord> {
        self.members.iter().map(|m| m.record.clone()).collect()
    }
}

/// Seed of population member `index`.
pub fn member_seed(master_seed: u64, index: usize) -> u64 {
    seed::derive(master_seed, index as u64)
}

/// Trains and scores `n_models` models of `kind`. Member `i` draws its
/// hyperparameters and trains from `member_seed(master_seed, i)`, and results
/// are assembled in index order, so the outcome does not depend on the
/// number of worker threads.
pub fn run_sweep(
    kind: ModelKind,
    ds: &Dataset,
    spec: &SensitiveSpec,
    n_models: usize,
    master_seed: u64,
) -> SweepOutcome {
    let results: Vec<std::result::Result<Member, String>> = (0..n_models)
        .into_par_iter()
        .map(|i| {
            let s = member_seed(master_seed, i);
            let hp = mutate_hyperparams(kind, &mut seed::rng(seed::derive(s, 0)));
            let model = train(&hp, ds, s).map_err(|e| e.to_string())?;
            let (record, _) =
                scored_record(&model, &model, ds, spec, None, None).map_err(|e| e.to_string())?;
            Ok(Member { record, model })
        })
        .collect();
    let mut members = Vec::new();
    let mut skipped = Vec::new();
    for (index, r) in results.into_iter().enumerate() {
        match r {
            Ok(m) => members.push(m),
            Err(reason) => {
                tracing::warn!(index, %reason, "sweep member skipped");
                skipped.push(Skipped { index, reason });
            }
        }
    }
    SweepOutcome { members, skipped }
}

/// Persisted description of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepManifest {
    pub sweep_id: String,
    pub config: SweepConfig,
    pub record_ids: Vec<String>,
    pub skipped: Vec<Skipped>,
    pub selection: Option<Selection>,
    pub pareto_front: Vec<String>,
}

impl SweepManifest {
    pub fn new(config: SweepConfig, outcome: &SweepOutcome) -> Self {
        let records = outcome.records();
        Self {
            sweep_id: config.sweep_id(),
            config,
            record_ids: records.iter().map(|r| r.record_id.clone()).collect(),
            skipped: outcome.skipped.clone(),
            selection: select(&records),
            pareto_front: pareto_front(&records)
                .into_iter()
                .map(|r| r.record_id.clone())
                .collect(),
        }
    }
}

/// Record ids of the representative models of a population.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub most_unfair: String,
    pub most_accurate: String,
    pub most_fair: String,
}

/// Picks the least fair (largest `aod`), most accurate and fairest (smallest
/// `aod`) records. Ties on the primary score go to the better value of the
/// other score, then to the lower record id. `None` for an empty population.
pub fn select(population: &[ModelRecord]) -> Option<Selection> {
    use std::cmp::Ordering;
    let by_id = |a: &ModelRecord, b: &ModelRecord| b.record_id.cmp(&a.record_id);
    let best = |cmp: &dyn Fn(&ModelRecord, &ModelRecord) -> Ordering| {
        population
            .iter()
            .max_by(|a, b| cmp(a, b).then_with(|| by_id(a, b)))
            .map(|r| r.record_id.clone())
    };
    Some(Selection {
        most_unfair: best(&|a, b| a.aod.total_cmp(&b.aod).then(a.accuracy.total_cmp(&b.accuracy)))?,
        most_accurate: best(&|a, b| a.accuracy.total_cmp(&b.accuracy).then(b.aod.total_cmp(&a.aod)))?,
        most_fair: best(&|a, b| b.aod.total_cmp(&a.aod).then(a.accuracy.total_cmp(&b.accuracy)))?,
    })
}

/// Records not dominated in (higher accuracy, lower aod), in population order.
pub fn pareto_front(population: &[ModelRecord]) -> Vec<&ModelRecord> {
    let mut order: Vec<usize> = (0..population.len()).collect();
    // accuracy descending, then aod ascending: a record is on the front iff
    // its aod is strictly below every aod seen before it, or it duplicates
    // the last front point exactly
    order.sort_by(|&a, &b| {
        let (a, b) = (&population[a], &population[b]);
        b.accuracy
            .total_cmp(&a.accuracy)
            .then(a.aod.total_cmp(&b.aod))
    });
    let mut keep = vec![false; population.len()];
    let mut last: Option<&ModelRecord> = None;
    for i in order {
        let r = &population[i];
        let on_front = last.is_none_or(|l| {
            r.aod < l.aod || (r.aod == l.aod && r.accuracy == l.accuracy)
        });
        if on_front {
            keep[i] = true;
            last = Some(r);
        }
    }
    population
        .iter()
        .zip(keep)
        .filter_map(|(r, k)| k.then_some(r))
        .collect()
}
