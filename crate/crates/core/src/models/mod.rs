//! The four classical model kinds: logistic regression, CART decision
//! trees, random forests and linear SVMs, all trained from scratch and
//! deterministic for a fixed `(hyperparams, dataset, seed)`.

mod logic;
pub mod logistic;
mod params;
mod scaling;
pub mod svm;
pub mod tree;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, DatasetSchema};
use crate::predictor::Predictor;
use crate::seed;

pub use logic::{export_logic, LinearLogic, ModelLogic, TreeView, WeightEntry};
pub use params::{
    Criterion, ForestParams, Hyperparams, LogisticParams, MaxFeatures, ModelKind, Penalty,
    SvmParams, TreeParams,
};
pub use scaling::Standardizer;
pub use svm::Calibration;
pub use tree::{Forest, Node, Split, Tree};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("training data contains a single class")]
    SingleClassData,
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("row has {found} features, model expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid tree: {0}")]
    InvalidTree(String),
}

pub(crate) struct LinearFit {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub scaler: Option<Standardizer>,
    pub iterations: u32,
    pub converged: bool,
}

/// Weights and bias of a linear model. When `scaler` is present the weights
/// apply to standardized inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearState {
    pub weights: Vec<f64>,
    pub bias: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaler: Option<Standardizer>,
    /// Population standard deviation of each training column, used for the
    /// std-adjusted weights in the exported logic.
    pub train_std: Vec<f64>,
    /// Platt parameters (SVM only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<Calibration>,
}

impl LinearState {
    pub fn margin(&self, row: &[f64]) -> f64 {
        match &self.scaler {
            Some(s) => {
                let mut m = self.bias;
                for (((v, w), mu), sc) in row.iter().zip(&self.weights).zip(&s.mean).zip(&s.scale) {
                    m += w * ((v - mu) / sc);
                }
                m
            }
            None => {
                self.bias
                    + row
                        .iter()
                        .zip(&self.weights)
                        .map(|(v, w)| v * w)
                        .sum::<f64>()
            }
        }
    }

    /// Weights and bias in the units of the raw input columns.
    pub fn raw_weights(&self) -> (Vec<f64>, f64) {
        match &self.scaler {
            Some(s) => {
                let w: Vec<f64> = self
                    .weights
                    .iter()
                    .zip(&s.scale)
                    .map(|(w, sc)| w / sc)
                    .collect();
                let b = self.bias - w.iter().zip(&s.mean).map(|(w, m)| w * m).sum::<f64>();
                (w, b)
            }
            None => (self.weights.clone(), self.bias),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelState {
    Linear(LinearState),
    Tree(Tree),
    Forest(Forest),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub hyperparams: Hyperparams,
    /// Schema of the data the model was trained on (masked schema for
    /// remedied models).
    pub schema: DatasetSchema,
    pub state: ModelState,
    pub train_seed: u64,
    /// False when an iterative trainer stopped at `max_iter`.
    pub converged: bool,
    pub iterations: u32,
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        self.hyperparams.kind()
    }

    pub fn n_features(&self) -> usize {
        self.schema.n_features()
    }

    /// Wraps a hand-built tree as a decision-tree model.
    pub fn from_tree(schema: DatasetSchema, tree: Tree) -> Self {
        Self {
            hyperparams: Hyperparams::DecisionTree(TreeParams::default()),
            schema,
            state: ModelState::Tree(tree),
            train_seed: 0,
            converged: true,
            iterations: 0,
        }
    }

    /// Wraps explicit linear weights (on raw inputs) as a logistic model.
    pub fn from_linear(schema: DatasetSchema, weights: Vec<f64>, bias: f64) -> Self {
        let d = weights.len();
        Self {
            hyperparams: Hyperparams::LogisticRegression(LogisticParams {
                standard_scale: false,
                ..Default::default()
            }),
            schema,
            state: ModelState::Linear(LinearState {
                weights,
                bias,
                scaler: None,
                train_std: vec![1.0; d],
                calibration: None,
            }),
            train_seed: 0,
            converged: true,
            iterations: 0,
        }
    }

    fn proba_unchecked(&self, row: &[f64]) -> f64 {
        match &self.state {
            ModelState::Linear(s) => {
                let m = s.margin(row);
                match &s.calibration {
                    Some(c) => c.apply(m),
                    None => logistic::sigmoid(m),
                }
            }
            ModelState::Tree(t) => t.confidence(row),
            ModelState::Forest(f) => f.confidence(row),
        }
    }

    pub fn predict_proba(&self, row: &[f64]) -> Result<f64, ModelError> {
        self.check(row)?;
        Ok(self.proba_unchecked(row))
    }

    pub fn predict(&self, row: &[f64], threshold: f64) -> Result<u8, ModelError> {
        Ok(u8::from(self.predict_proba(row)? >= threshold))
    }

    fn check(&self, row: &[f64]) -> Result<(), ModelError> {
        if row.len() != self.n_features() {
            return Err(ModelError::DimensionMismatch {
                expected: self.n_features(),
                found: row.len(),
            });
        }
        Ok(())
    }
}

impl Predictor for TrainedModel {
    fn score(&self, row: &[f64]) -> f64 {
        self.proba_unchecked(row)
    }
}

/// Fraction of rows of `ds` classified correctly at threshold 0.5.
pub fn accuracy<P: Predictor + ?Sized>(model: &P, ds: &Dataset) -> f64 {
    let correct = ds
        .rows()
        .zip(ds.labels())
        .filter(|(r, &y)| model.classify(r) == y)
        .count();
    correct as f64 / ds.n_rows() as f64
}

/// Like [`accuracy`] but checks the model's width against the dataset.
pub fn model_accuracy(model: &TrainedModel, ds: &Dataset) -> Result<f64, ModelError> {
    if ds.n_features() != model.n_features() {
        return Err(ModelError::DimensionMismatch {
            expected: model.n_features(),
            found: ds.n_features(),
        });
    }
    Ok(accuracy(model, ds))
}

/// Trains a model. The kind is taken from `hp`. Tree-based models seed their
/// generator from both `hp.seed` and `seed`.
pub fn train(hp: &Hyperparams, ds: &Dataset, seed: u64) -> Result<TrainedModel, ModelError> {
    hp.validate()?;
    let x = ds.values();
    let d = ds.n_features();
    let y = ds.labels();
    let single_class = y.iter().all(|&v| v == y[0]);
    let (_, train_std) = scaling::column_moments(x, d);

    let linear = |fit: LinearFit, calibration: Option<Calibration>| {
        let iterations = fit.iterations;
        let converged = fit.converged;
        let state = LinearState {
            weights: fit.weights,
            bias: fit.bias,
            scaler: fit.scaler,
            train_std: train_std.clone(),
            calibration,
        };
        (ModelState::Linear(state), converged, iterations)
    };

    let (state, converged, iterations) = match hp {
        Hyperparams::LogisticRegression(p) => {
            if single_class {
                return Err(ModelError::SingleClassData);
            }
            linear(logistic::fit(x, d, y, p), None)
        }
        Hyperparams::LinearSvm(p) => {
            if single_class {
                return Err(ModelError::SingleClassData);
            }
            let mut rng = seed::rng(seed::derive(seed, p.seed));
            let (fit, cal) = svm::fit(x, d, y, p, &mut rng);
            linear(fit, Some(cal))
        }
        Hyperparams::DecisionTree(p) => {
            let mut rng = seed::rng(seed::derive(seed::derive(seed, p.seed), 0));
            let tree = Tree::fit(x, d, y, (0..y.len()).collect(), p, &mut rng);
            (ModelState::Tree(tree), true, 0)
        }
        Hyperparams::RandomForest(p) => {
            let master = seed::derive(seed, p.tree.seed);
            let trees = (0..p.n_estimators)
                .map(|i| {
                    let mut rng = seed::rng(seed::derive(master, u64::from(i)));
                    let rows = if p.bootstrap {
                        tree::bootstrap(y.len(), &mut rng)
                    } else {
                        (0..y.len()).collect()
                    };
                    Tree::fit(x, d, y, rows, &p.tree, &mut rng)
                })
                .collect();
            (ModelState::Forest(Forest { trees }), true, 0)
        }
    };
    Ok(TrainedModel {
        hyperparams: hp.clone(),
        schema: ds.schema().clone(),
        state,
        train_seed: seed,
        converged,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{FeatureSchema, LabelSchema};
    use rand::Rng;

    pub(crate) fn schema(d: usize) -> DatasetSchema {
        DatasetSchema {
            dataset_id: "t".into(),
            features: (0..d)
                .map(|j| FeatureSchema::numerical(format!("x{j}")))
                .collect(),
            label: LabelSchema {
                name: "y".into(),
                positive_meaning: "1".into(),
                negative_meaning: "0".into(),
            },
        }
    }

    fn noisy(n: usize, seed_: u64) -> Dataset {
        let mut rng = seed::rng(seed_);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let a: f64 = rng.gen_range(-2.0..2.0);
            let b: f64 = rng.gen_range(0.0..50.0);
            rows.push(vec![a, b]);
            y.push(u8::from(
                a + 0.02 * (b - 25.0) + rng.gen_range(-0.5..0.5) > 0.0,
            ));
        }
        Dataset::new(schema(2), rows, y).unwrap()
    }

    #[test]
    fn hand_probabilities() {
        let m = TrainedModel::from_linear(schema(1), vec![0.0], 0.0);
        assert_eq!(m.predict_proba(&[123.0]).unwrap(), 0.5);
        assert_eq!(m.predict(&[1.0], 0.5).unwrap(), 1);
        let m = TrainedModel::from_linear(schema(1), vec![3f64.ln()], 0.0);
        assert!((m.predict_proba(&[1.0]).unwrap() - 0.75).abs() < 1e-15);
        assert!(matches!(
            m.predict_proba(&[1.0, 2.0]),
            Err(ModelError::DimensionMismatch {
                expected: 1,
                found: 2
            })
        ));

        let m = TrainedModel::from_linear(schema(1), vec![1.0], 0.0);
        let p = 0.49f64;
        let x = (p / (1.0 - p)).ln();
        assert_eq!(m.predict(&[x], 0.5).unwrap(), 0);
    }

    #[test]
    fn forest_averages_tree_confidences() {
        let t1 = Tree::from_nodes(vec![Node::leaf(5, 1)]).unwrap();
        let t2 = Tree::from_nodes(vec![Node::leaf(5, 3)]).unwrap();
        let f = Forest {
            trees: vec![t1, t2],
        };
        assert!((f.confidence(&[0.0]) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn accuracy_of_constant_model() {
        let rows = (0..10).map(|i| vec![f64::from(i)]).collect();
        let y = vec![1, 1, 1, 0, 0, 0, 0, 0, 0, 0];
        let ds = Dataset::new(schema(1), rows, y).unwrap();
        assert!((accuracy(&|_: &[f64]| 0.0, &ds) - 0.7).abs() < 1e-15);
        assert_eq!(
            accuracy(&|r: &[f64]| if r[0] < 3.0 { 1.0 } else { 0.0 }, &ds),
            1.0
        );
    }

    #[test]
    fn all_kinds_train_and_are_deterministic() {
        let ds = noisy(300, 1);
        for kind in ModelKind::ALL {
            let mut hp = Hyperparams::default_for(kind);
            if let Hyperparams::RandomForest(p) = &mut hp {
                p.n_estimators = 10;
            }
            let a = train(&hp, &ds, 42).unwrap();
            let b = train(&hp, &ds, 42).unwrap();
            assert_eq!(a, b, "{kind}");
            let acc = model_accuracy(&a, &ds).unwrap();
            assert!(acc > 0.8, "{kind}: {acc}");
            for r in ds.rows() {
                let p = a.predict_proba(r).unwrap();
                assert!((0.0..=1.0).contains(&p));
            }
        }
    }

    #[test]
    fn single_class_rules() {
        let ds = Dataset::new(schema(1), vec![vec![1.0], vec![2.0]], vec![1, 1]).unwrap();
        for kind in [ModelKind::LogisticRegression, ModelKind::LinearSvm] {
            assert_eq!(
                train(&Hyperparams::default_for(kind), &ds, 0).unwrap_err(),
                ModelError::SingleClassData
            );
        }
        let m = train(&Hyperparams::default_for(ModelKind::DecisionTree), &ds, 0).unwrap();
        assert_eq!(m.predict_proba(&[5.0]).unwrap(), 1.0);
    }

    #[test]
    fn strong_l2_shrinks_to_half() {
        // symmetric balanced data
        let rows: Vec<Vec<f64>> = (0..100).map(|i| vec![f64::from(i % 10) - 4.5]).collect();
        let y: Vec<u8> = (0..100).map(|i| u8::from(i % 10 >= 5)).collect();
        let ds = Dataset::new(schema(1), rows, y).unwrap();
        let hp = Hyperparams::LogisticRegression(LogisticParams {
            c: 1e-5,
            tol: 1e-10,
            ..Default::default()
        });
        let m = train(&hp, &ds, 0).unwrap();
        let ModelState::Linear(s) = &m.state else {
            unreachable!()
        };
        assert!(s.weights[0].abs() < 1e-3);
        for r in ds.rows() {
            assert!((m.predict_proba(r).unwrap() - 0.5).abs() < 1e-3);
        }
    }

    #[test]
    fn single_tree_forest_matches_tree() {
        let ds = noisy(200, 5);
        let tree = TreeParams {
            max_features: MaxFeatures::Sqrt,
            seed: 9,
            ..TreeParams::default()
        };
        let dt = train(&Hyperparams::DecisionTree(tree.clone()), &ds, 3).unwrap();
        let rf = train(
            &Hyperparams::RandomForest(ForestParams {
                tree,
                n_estimators: 1,
                bootstrap: false,
            }),
            &ds,
            3,
        )
        .unwrap();
        for r in ds.rows() {
            assert_eq!(dt.predict_proba(r).unwrap(), rf.predict_proba(r).unwrap());
        }
    }

    #[test]
    fn forest_has_n_estimators_trees() {
        let ds = noisy(100, 2);
        let hp = Hyperparams::RandomForest(ForestParams {
            n_estimators: 7,
            ..Default::default()
        });
        let ModelState::Forest(f) = train(&hp, &ds, 1).unwrap().state else {
            unreachable!()
        };
        assert_eq!(f.trees.len(), 7);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let ds = noisy(150, 7);
        for kind in ModelKind::ALL {
            let mut hp = Hyperparams::default_for(kind);
            if let Hyperparams::RandomForest(p) = &mut hp {
                p.n_estimators = 3;
            }
            let m = train(&hp, &ds, 11).unwrap();
            let back: TrainedModel =
                serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
            assert_eq!(back, m, "{kind}");
        }
    }
}
