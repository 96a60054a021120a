use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[serde(alias = "lr")]
    LogisticRegression,
    #[serde(alias = "dt")]
    DecisionTree,
    #[serde(alias = "rf")]
    RandomForest,
    #[serde(alias = "svm")]
    LinearSvm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::LogisticRegression,
        ModelKind::DecisionTree,
        ModelKind::RandomForest,
        ModelKind::LinearSvm,
    ];

    /// Two or three letter tag used in record ids and CLI flags.
    pub fn short(self) -> &'static str {
        match self {
            ModelKind::LogisticRegression => "lr",
            ModelKind::DecisionTree => "dt",
            ModelKind::RandomForest => "rf",
            ModelKind::LinearSvm => "svm",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let s = s.to_ascii_lowercase();
        Self::ALL.into_iter().find(|k| {
            k.short() == s
                || serde_json::to_value(k)
                    .ok()
                    .and_then(|v| v.as_str().map(|n| n == s))
                    == Some(true)
        })
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.short())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Penalty {
    L1,
    L2,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Gini,
    Entropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxFeatures {
    All,
    Sqrt,
    Log2,
}

impl MaxFeatures {
    pub fn count(self, n_features: usize) -> usize {
        let k = match self {
            MaxFeatures::All => n_features,
            MaxFeatures::Sqrt => (n_features as f64).sqrt().floor() as usize,
            MaxFeatures::Log2 => (n_features as f64).log2().floor() as usize,
        };
        k.clamp(1, n_features.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogisticParams {
    pub penalty: Penalty,
    #[serde(rename = "C")]
    pub c: f64,
    pub tol: f64,
    pub max_iter: u32,
    pub fit_intercept: bool,
    pub standard_scale: bool,
}

impl Default for LogisticParams {
    fn default() -> Self {
        Self {
            penalty: Penalty::L2,
            c: 1.0,
            tol: 1e-4,
            max_iter: 1000,
            fit_intercept: true,
            standard_scale: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub criterion: Criterion,
    pub max_depth: Option<u32>,
    pub min_samples_split: u32,
    pub min_samples_leaf: u32,
    pub ccp_alpha: f64,
    pub max_features: MaxFeatures,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            criterion: Criterion::Gini,
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            ccp_alpha: 0.0,
            max_features: MaxFeatures::All,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    #[serde(flatten)]
    pub tree: TreeParams,
    pub n_estimators: u32,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            tree: TreeParams {
                max_features: MaxFeatures::Sqrt,
                ..TreeParams::default()
            },
            n_estimators: 100,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvmParams {
    #[serde(rename = "C")]
    pub c: f64,
    pub tol: f64,
    /// Maximum number of passes over the training data.
    pub max_iter: u32,
    pub standard_scale: bool,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            tol: 1e-4,
            max_iter: 100,
            standard_scale: true,
            seed: 0,
        }
    }
}

/// Hyperparameters tagged by model kind, e.g.
/// `{"kind": "decision_tree", "criterion": "gini", "max_depth": 4, ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Hyperparams {
    LogisticRegression(LogisticParams),
    DecisionTree(TreeParams),
    RandomForest(ForestParams),
    LinearSvm(SvmParams),
}

impl Hyperparams {
    pub fn default_for(kind: ModelKind) -> Self {
        match kind {
            ModelKind::LogisticRegression => {
                Hyperparams::LogisticRegression(LogisticParams::default())
            }
            ModelKind::DecisionTree => Hyperparams::DecisionTree(TreeParams::default()),
            ModelKind::RandomForest => Hyperparams::RandomForest(ForestParams::default()),
            ModelKind::LinearSvm => Hyperparams::LinearSvm(SvmParams::default()),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Hyperparams::LogisticRegression(_) => ModelKind::LogisticRegression,
            Hyperparams::DecisionTree(_) => ModelKind::DecisionTree,
            Hyperparams::RandomForest(_) => ModelKind::RandomForest,
            Hyperparams::LinearSvm(_) => ModelKind::LinearSvm,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        fn check(ok: bool, what: &str) -> Result<(), ModelError> {
            if ok {
                Ok(())
            } else {
                Err(ModelError::InvalidHyperparams(what.to_string()))
            }
        }
        fn positive(v: f64) -> bool {
            v.is_finite() && v > 0.0
        }
        match self {
            Hyperparams::LogisticRegression(p) => {
                check(positive(p.c), "C must be > 0")?;
                check(positive(p.tol), "tol must be > 0")?;
                check(p.max_iter >= 1, "max_iter must be >= 1")
            }
            Hyperparams::DecisionTree(p) => validate_tree(p),
            Hyperparams::RandomForest(p) => {
                validate_tree(&p.tree)?;
                check(p.n_estimators >= 1, "n_estimators must be >= 1")
            }
            Hyperparams::LinearSvm(p) => {
                check(positive(p.c), "C must be > 0")?;
                check(positive(p.tol), "tol must be > 0")?;
                check(p.max_iter >= 1, "max_iter must be >= 1")
            }
        }
    }
}

fn validate_tree(p: &TreeParams) -> Result<(), ModelError> {
    let err = |m: &str| Err(ModelError::InvalidHyperparams(m.to_string()));
    if p.max_depth == Some(0) {
        return err("max_depth must be >= 1");
    }
    if p.min_samples_split < 2 {
        return err("min_samples_split must be >= 2");
    }
    if p.min_samples_leaf < 1 {
        return err("min_samples_leaf must be >= 1");
    }
    if !(p.ccp_alpha.is_finite() && p.ccp_alpha >= 0.0) {
        return err("ccp_alpha must be >= 0");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_shapes() {
        let hp = Hyperparams::RandomForest(ForestParams::default());
        let v = serde_json::to_value(&hp).unwrap();
        assert_eq!(v["kind"], "random_forest");
        assert_eq!(v["criterion"], "gini");
        assert_eq!(v["n_estimators"], 100);
        let back: Hyperparams = serde_json::from_value(v).unwrap();
        assert_eq!(back, hp);

        let lr: Hyperparams =
            serde_json::from_str(r#"{"kind":"logistic_regression","penalty":"l1","C":0.5,"tol":0.001,"max_iter":50,"fit_intercept":true,"standard_scale":false}"#)
                .unwrap();
        assert_eq!(lr.kind(), ModelKind::LogisticRegression);
    }

    #[test]
    fn kind_names() {
        for k in ModelKind::ALL {
            assert_eq!(ModelKind::parse(k.short()), Some(k));
            let long = serde_json::to_value(k).unwrap();
            assert_eq!(ModelKind::parse(long.as_str().unwrap()), Some(k));
            assert_eq!(
                serde_json::from_value::<ModelKind>(serde_json::json!(k.short())).unwrap(),
                k
            );
        }
        assert_eq!(ModelKind::parse("knn"), None);
    }

    #[test]
    fn validation() {
        let bad = [
            Hyperparams::LogisticRegression(LogisticParams {
                c: 0.0,
                ..Default::default()
            }),
            Hyperparams::LinearSvm(SvmParams {
                max_iter: 0,
                ..Default::default()
            }),
            Hyperparams::DecisionTree(TreeParams {
                min_samples_split: 1,
                ..Default::default()
            }),
            Hyperparams::DecisionTree(TreeParams {
                max_depth: Some(0),
                ..Default::default()
            }),
            Hyperparams::RandomForest(ForestParams {
                n_estimators: 0,
                ..Default::default()
            }),
        ];
        for hp in bad {
            assert!(hp.validate().is_err(), "{hp:?}");
        }
        for k in ModelKind::ALL {
            Hyperparams::default_for(k).validate().unwrap();
        }
    }

    #[test]
    fn max_features_counts() {
        assert_eq!(MaxFeatures::Sqrt.count(14), 3);
        assert_eq!(MaxFeatures::Log2.count(14), 3);
        assert_eq!(MaxFeatures::All.count(14), 14);
        assert_eq!(MaxFeatures::Log2.count(1), 1);
    }
}
