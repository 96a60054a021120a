use serde::{Deserialize, Serialize};

use super::{Calibration, LinearState, ModelKind, ModelState, TrainedModel, Tree};
use crate::dataset::{format_number, DatasetSchema};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightEntry {
    pub feature: String,
    /// Weight on the raw (unscaled) column.
    pub raw: f64,
    /// `raw * train_std`: the change in margin per standard deviation.
    pub adjusted: f64,
    pub train_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearLogic {
    pub weights: Vec<WeightEntry>,
    pub bias: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<Calibration>,
}

impl LinearLogic {
    /// Entries ordered by decreasing `|raw|` or `|adjusted|`.
    pub fn ranked(&self, adjusted: bool) -> Vec<&WeightEntry> {
        let mut v: Vec<&WeightEntry> = self.weights.iter().collect();
        let key = |e: &WeightEntry| {
            if adjusted {
                e.adjusted.abs()
            } else {
                e.raw.abs()
            }
        };
        v.sort_by(|a, b| key(b).total_cmp(&key(a)));
        v
    }
}

/// Display form of a decision tree. Subtrees below the display depth are
/// replaced by a `truncated` summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeView {
    Split {
        feature: String,
        threshold: f64,
        /// Condition under which rows take the left branch.
        condition: String,
        n_samples: u64,
        confidence: f64,
        left: Box<TreeView>,
        right: Box<TreeView>,
    },
    Leaf {
        class: u8,
        confidence: f64,
        n_samples: u64,
    },
    Truncated {
        n_samples: u64,
        confidence: f64,
        n_leaves: usize,
        depth: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelLogic {
    Linear {
        kind: ModelKind,
        #[serde(flatten)]
        logic: LinearLogic,
    },
    Tree {
        depth: usize,
        n_leaves: usize,
        tree: TreeView,
    },
    Forest {
        n_estimators: usize,
        trees: Vec<TreeView>,
    },
}

/// Human-readable model structure. Trees are cut at `display_depth` levels
/// below the root (`None` shows everything).
pub fn export_logic(m: &TrainedModel, display_depth: Option<usize>) -> ModelLogic {
    match &m.state {
        ModelState::Linear(s) => ModelLogic::Linear {
            kind: m.kind(),
            logic: linear_logic(&m.schema, s),
        },
        ModelState::Tree(t) => ModelLogic::Tree {
            depth: t.depth(),
            n_leaves: t.n_leaves(),
            tree: view(&m.schema, t, 0, 0, display_depth),
        },
        ModelState::Forest(f) => ModelLogic::Forest {
            n_estimators: f.trees.len(),
            trees: f
                .trees
                .iter()
                .map(|t| view(&m.schema, t, 0, 0, display_depth))
                .collect(),
        },
    }
}

fn linear_logic(schema: &DatasetSchema, s: &LinearState) -> LinearLogic {
    let (raw, bias) = s.raw_weights();
    let weights = schema
        .features
        .iter()
        .zip(raw)
        .zip(&s.train_std)
        .map(|((f, raw), &std)| WeightEntry {
            feature: f.name.clone(),
            raw,
            adjusted: raw * std,
            train_std: std,
        })
        .collect();
    LinearLogic {
        weights,
        bias,
        calibration: s.calibration.clone(),
    }
}

fn view(
    schema: &DatasetSchema,
    t: &Tree,
    i: usize,
    depth: usize,
    limit: Option<usize>,
) -> TreeView {
    let node = &t.nodes[i];
    match &node.split {
        None => TreeView::Leaf {
            class: u8::from(node.confidence() >= 0.5),
            confidence: node.confidence(),
            n_samples: node.n_samples,
        },
        Some(_) if limit.is_some_and(|l| depth >= l) => {
            let (n_leaves, sub_depth) = subtree_shape(t, i);
            TreeView::Truncated {
                n_samples: node.n_samples,
                confidence: node.confidence(),
                n_leaves,
                depth: sub_depth,
            }
        }
        Some(s) => {
            let f = &schema.features[s.feature];
            let condition = if f.is_categorical() {
                let names: Vec<&str> = f
                    .categories
                    .iter()
                    .enumerate()
                    .filter(|(c, _)| *c as f64 <= s.threshold)
                    .map(|(_, n)| n.as_str())
                    .collect();
                format!("{} ∈ {{{}}}", f.name, names.join(", "))
            } else {
                format!("{} ≤ {}", f.name, format_number(s.threshold))
            };
            TreeView::Split {
                feature: f.name.clone(),
                threshold: s.threshold,
                condition,
                n_samples: node.n_samples,
                confidence: node.confidence(),
                left: Box::new(view(schema, t, s.left, depth + 1, limit)),
                right: Box::new(view(schema, t, s.right, depth + 1, limit)),
            }
        }
    }
}

fn subtree_shape(t: &Tree, root: usize) -> (usize, usize) {
    let mut leaves = 0;
    let mut deepest = 0;
    let mut stack = vec![(root, 0usize)];
    while let Some((i, d)) = stack.pop() {
        deepest = deepest.max(d);
        match &t.nodes[i].split {
            Some(s) => {
                stack.push((s.left, d + 1));
                stack.push((s.right, d + 1));
            }
            None => leaves += 1,
        }
    }
    (leaves, deepest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{FeatureSchema, LabelSchema};
    use crate::models::{ForestParams, Hyperparams, Node};

    fn schema() -> DatasetSchema {
        DatasetSchema {
            dataset_id: "l".into(),
            features: vec![
                FeatureSchema::numerical("a"),
                FeatureSchema::categorical("c", ["x", "y", "z"]),
            ],
            label: LabelSchema {
                name: "y".into(),
                positive_meaning: "1".into(),
                negative_meaning: "0".into(),
            },
        }
    }

    #[test]
    fn adjusted_weights_reorder_features() {
        let mut m = TrainedModel::from_linear(schema(), vec![2.0, 0.1], 0.0);
        if let ModelState::Linear(s) = &mut m.state {
            s.train_std = vec![0.1, 5.0];
        }
        let ModelLogic::Linear { logic, .. } = export_logic(&m, None) else {
            panic!()
        };
        assert_eq!(logic.weights[0].adjusted, 2.0 * 0.1);
        assert_eq!(logic.weights[1].adjusted, 0.1 * 5.0);
        assert!(
            (logic.weights[0].adjusted - 0.2).abs() < 1e-15
                && (logic.weights[1].adjusted - 0.5).abs() < 1e-15
        );
        assert_eq!(logic.ranked(false)[0].feature, "a");
        assert_eq!(logic.ranked(true)[0].feature, "c");
    }

    #[test]
    fn tree_views() {
        let single =
            TrainedModel::from_tree(schema(), Tree::from_nodes(vec![Node::leaf(4, 1)]).unwrap());
        let ModelLogic::Tree { tree, .. } = export_logic(&single, None) else {
            panic!()
        };
        assert_eq!(
            tree,
            TreeView::Leaf {
                class: 0,
                confidence: 0.25,
                n_samples: 4
            }
        );

        let nodes = vec![
            Node::internal(10, 5, 1, 0.5, 1, 2),
            Node::leaf(4, 0),
            Node::internal(6, 5, 0, 3.0, 3, 4),
            Node::leaf(3, 3),
            Node::leaf(3, 2),
        ];
        let m = TrainedModel::from_tree(schema(), Tree::from_nodes(nodes).unwrap());
        let ModelLogic::Tree {
            tree,
            depth,
            n_leaves,
        } = export_logic(&m, Some(1))
        else {
            panic!()
        };
        assert_eq!((depth, n_leaves), (2, 3));
        let TreeView::Split {
            condition, right, ..
        } = tree
        else {
            panic!()
        };
        assert_eq!(condition, "c ∈ {x}");
        assert!(matches!(
            *right,
            TreeView::Truncated {
                n_leaves: 2,
                depth: 1,
                ..
            }
        ));
    }

    #[test]
    fn forest_lists_every_tree() {
        let rows = (0..40)
            .map(|i| vec![f64::from(i), f64::from(i % 3)])
            .collect();
        let y = (0..40).map(|i| u8::from(i > 20)).collect();
        let ds = crate::dataset::Dataset::new(schema(), rows, y).unwrap();
        let hp = Hyperparams::RandomForest(ForestParams {
            n_estimators: 5,
            ..Default::default()
        });
        let m = crate::models::train(&hp, &ds, 0).unwrap();
        let ModelLogic::Forest {
            trees,
            n_estimators,
        } = export_logic(&m, Some(2))
        else {
            panic!()
        };
        assert_eq!((trees.len(), n_estimators), (5, 5));
    }
}
