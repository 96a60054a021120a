//! CART classification trees and bagged forests.
//!
//! Nodes live in a flat arena (root at index 0) so that serialized trees
//! stay shallow regardless of depth. A row goes left when
//! `row[feature] <= threshold`.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Criterion, ModelError, TreeParams};
use crate::predictor::Predictor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub n_samples: u64,
    pub n_positive: u64,
    pub impurity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

impl Node {
    pub fn leaf(n_samples: u64, n_positive: u64) -> Self {
        Self {
            n_samples,
            n_positive,
            impurity: gini(n_samples as f64, n_positive as f64),
            split: None,
        }
    }

    pub fn internal(
        n_samples: u64,
        n_positive: u64,
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    ) -> Self {
        Self {
            split: Some(Split {
                feature,
                threshold,
                left,
                right,
            }),
            ..Self::leaf(n_samples, n_positive)
        }
    }

    /// Fraction of this node's training points that are positive.
    pub fn confidence(&self) -> f64 {
        if self.n_samples == 0 {
            0.0
        } else {
            self.n_positive as f64 / self.n_samples as f64
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.split.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

fn gini(n: f64, pos: f64) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    let p = pos / n;
    2.0 * p * (1.0 - p)
}

fn entropy(n: f64, pos: f64) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    let p = pos / n;
    let h = |q: f64| if q > 0.0 { -q * q.log2() } else { 0.0 };
    h(p) + h(1.0 - p)
}

fn impurity(criterion: Criterion, n: f64, pos: f64) -> f64 {
    match criterion {
        Criterion::Gini => gini(n, pos),
        Criterion::Entropy => entropy(n, pos),
    }
}

struct Pending {
    node: usize,
    rows: Vec<usize>,
    depth: u32,
}

impl Tree {
    /// Builds a tree from explicit nodes, checking that child links form a
    /// tree rooted at 0.
    pub fn from_nodes(nodes: Vec<Node>) -> Result<Self, ModelError> {
        if nodes.is_empty() {
            return Err(ModelError::InvalidTree("no nodes".into()));
        }
        let mut seen = vec![false; nodes.len()];
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            if std::mem::replace(&mut seen[i], true) {
                return Err(ModelError::InvalidTree(format!("node {i} reached twice")));
            }
            if let Some(s) = &nodes[i].split {
                for c in [s.left, s.right] {
                    if c >= nodes.len() {
                        return Err(ModelError::InvalidTree(format!("child {c} out of range")));
                    }
                    stack.push(c);
                }
            }
            if nodes[i].n_positive > nodes[i].n_samples {
                return Err(ModelError::InvalidTree(format!(
                    "node {i} has more positives than samples"
                )));
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(ModelError::InvalidTree(format!("node {i} unreachable")));
        }
        Ok(Self { nodes })
    }

    /// Grows a tree on `rows` (indices into the row-major `x`, duplicates
    /// allowed for bootstrap samples).
    pub(crate) fn fit(
        x: &[f64],
        d: usize,
        y: &[u8],
        rows: Vec<usize>,
        p: &TreeParams,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let k = p.max_features.count(d);
        let min_leaf = p.min_samples_leaf as usize;
        let mut nodes = Vec::new();
        let pos = rows.iter().filter(|&&i| y[i] == 1).count();
        nodes.push(Node {
            n_samples: rows.len() as u64,
            n_positive: pos as u64,
            impurity: impurity(p.criterion, rows.len() as f64, pos as f64),
            split: None,
        });
        let mut stack = vec![Pending {
            node: 0,
            rows,
            depth: 0,
        }];
        let mut feats: Vec<usize> = (0..d).collect();
        let mut pairs: Vec<(f64, u8)> = Vec::new();
        while let Some(Pending { node, rows, depth }) = stack.pop() {
            let n = rows.len();
            let npos = nodes[node].n_positive as usize;
            if npos == 0
                || npos == n
                || p.max_depth.is_some_and(|m| depth >= m)
                || n < p.min_samples_split as usize
                || n < 2 * min_leaf
            {
                continue;
            }

            // candidate features: k non-constant ones in random order, then ascending
            let mut chosen = Vec::with_capacity(k);
            if k < d {
                feats.shuffle(rng);
            }
            for &f in &feats {
                let first = x[rows[0] * d + f];
                if rows.iter().any(|&i| x[i * d + f] != first) {
                    chosen.push(f);
                    if chosen.len() == k {
                        break;
                    }
                }
            }
            chosen.sort_unstable();
            feats.sort_unstable();

            let mut best: Option<(f64, usize, f64)> = None;
            for &f in &chosen {
                pairs.clear();
                pairs.extend(rows.iter().map(|&i| (x[i * d + f], y[i])));
                pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
                let mut left_pos = 0usize;
                for s in 1..n {
                    left_pos += usize::from(pairs[s - 1].1);
                    if pairs[s - 1].0 == pairs[s].0 || s < min_leaf || n - s < min_leaf {
                        continue;
                    }
                    let (ln, rn) = (s as f64, (n - s) as f64);
                    let score = (ln * impurity(p.criterion, ln, left_pos as f64)
                        + rn * impurity(p.criterion, rn, (npos - left_pos) as f64))
                        / n as f64;
                    if best.map_or(true, |(b, _, _)| score < b) {
                        let (a, b) = (pairs[s - 1].0, pairs[s].0);
                        let mut thr = a + (b - a) / 2.0;
                        if thr >= b {
                            thr = a;
                        }
                        best = Some((score, f, thr));
                    }
                }
            }
            let Some((_, feature, threshold)) = best else {
                continue;
            };
            let (lrows, rrows): (Vec<usize>, Vec<usize>) = rows
                .into_iter()
                .partition(|&i| x[i * d + feature] <= threshold);
            let mut child = |rows: Vec<usize>, nodes: &mut Vec<Node>| {
                let pos = rows.iter().filter(|&&i| y[i] == 1).count();
                nodes.push(Node {
                    n_samples: rows.len() as u64,
                    n_positive: pos as u64,
                    impurity: impurity(p.criterion, rows.len() as f64, pos as f64),
                    split: None,
                });
                let id = nodes.len() - 1;
                stack.push(Pending {
                    node: id,
                    rows,
                    depth: depth + 1,
                });
                id
            };
            let left = child(lrows, &mut nodes);
            let right = child(rrows, &mut nodes);
            nodes[node].split = Some(Split {
                feature,
                threshold,
                left,
                right,
            });
        }
        let mut tree = Self { nodes };
        if p.ccp_alpha > 0.0 {
            tree.prune(p.ccp_alpha);
        }
        tree.compact()
    }

    pub fn leaf_index(&self, row: &[f64]) -> usize {
        let mut i = 0;
        while let Some(s) = &self.nodes[i].split {
            i = if row[s.feature] <= s.threshold {
                s.left
            } else {
                s.right
            };
        }
        i
    }

    pub fn confidence(&self, row: &[f64]) -> f64 {
        self.nodes[self.leaf_index(row)].confidence()
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn depth(&self) -> usize {
        let mut best = 0;
        let mut stack = vec![(0usize, 0usize)];
        while let Some((i, dpt)) = stack.pop() {
            best = best.max(dpt);
            if let Some(s) = &self.nodes[i].split {
                stack.push((s.left, dpt + 1));
                stack.push((s.right, dpt + 1));
            }
        }
        best
    }

    /// Minimal cost-complexity pruning: repeatedly collapse the weakest link
    /// while its effective alpha is at most `alpha`.
    fn prune(&mut self, alpha: f64) {
        let total = self.nodes[0].n_samples as f64;
        let cost = |n: &Node| n.impurity * n.n_samples as f64 / total;
        loop {
            // subtree cost and leaf count per node, children before parents
            let order = self.postorder();
            let mut sub_cost = vec![0.0; self.nodes.len()];
            let mut leaves = vec![0usize; self.nodes.len()];
            let mut weakest: Option<(f64, usize)> = None;
            for &i in &order {
                match &self.nodes[i].split {
                    None => {
                        sub_cost[i] = cost(&self.nodes[i]);
                        leaves[i] = 1;
                    }
                    Some(s) => {
                        sub_cost[i] = sub_cost[s.left] + sub_cost[s.right];
                        leaves[i] = leaves[s.left] + leaves[s.right];
                        let g = (cost(&self.nodes[i]) - sub_cost[i]) / (leaves[i] - 1) as f64;
                        if weakest.map_or(true, |(w, _)| g < w) {
                            weakest = Some((g, i));
                        }
                    }
                }
            }
            match weakest {
                Some((g, i)) if g <= alpha => self.nodes[i].split = None,
                _ => break,
            }
        }
    }

    fn postorder(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![(0usize, false)];
        while let Some((i, expanded)) = stack.pop() {
            match (&self.nodes[i].split, expanded) {
                (Some(s), false) => {
                    stack.push((i, true));
                    stack.push((s.right, false));
                    stack.push((s.left, false));
                }
                _ => out.push(i),
            }
        }
        out
    }

    /// Drops unreachable nodes and renumbers the rest in preorder.
    fn compact(self) -> Self {
        let mut nodes = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![(0usize, None::<(usize, bool)>)];
        let mut old = self.nodes;
        while let Some((i, parent)) = stack.pop() {
            let id = nodes.len();
            let node = std::mem::replace(&mut old[i], Node::leaf(0, 0));
            if let Some((p, is_left)) = parent {
                let s: &mut Split = nodes
                    .get_mut(p)
                    .and_then(|n: &mut Node| n.split.as_mut())
                    .expect("parent is internal");
                if is_left {
                    s.left = id;
                } else {
                    s.right = id;
                }
            }
            if let Some(s) = &node.split {
                stack.push((s.right, Some((id, false))));
                stack.push((s.left, Some((id, true))));
            }
            nodes.push(node);
        }
        Self { nodes }
    }
}

impl Predictor for Tree {
    fn score(&self, row: &[f64]) -> f64 {
        self.confidence(row)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
}

impl Forest {
    pub fn confidence(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.confidence(row)).sum::<f64>() / self.trees.len() as f64
    }
}

impl Predictor for Forest {
    fn score(&self, row: &[f64]) -> f64 {
        self.confidence(row)
    }
}

/// Bootstrap sample of size `n`.
pub(crate) fn bootstrap(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::MaxFeatures;
    use crate::seed;

    fn fit(x: &[f64], d: usize, y: &[u8], p: &TreeParams) -> Tree {
        Tree::fit(x, d, y, (0..y.len()).collect(), p, &mut seed::rng(0))
    }

    #[test]
    fn separable_1d_is_fit_exactly() {
        let x: Vec<f64> = (0..20).map(|i| i as f64 - 9.5).collect();
        let y: Vec<u8> = x.iter().map(|&v| u8::from(v > 0.0)).collect();
        let t = fit(&x, 1, &y, &TreeParams::default());
        assert_eq!(t.nodes.len(), 3);
        let s = t.nodes[0].split.as_ref().unwrap();
        assert_eq!(s.threshold, 0.0);
        for (v, yi) in x.iter().zip(&y) {
            assert_eq!(u8::from(t.confidence(&[*v]) >= 0.5), *yi);
        }
    }

    #[test]
    fn xor_needs_zero_gain_first_split() {
        let x = [0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0];
        let y = [0, 1, 1, 0];
        let t = fit(&x, 2, &y, &TreeParams::default());
        for (r, yi) in x.chunks(2).zip(&y) {
            assert_eq!(t.confidence(r), f64::from(*yi));
        }
        // equal gain everywhere: lowest feature wins
        assert_eq!(t.nodes[0].split.as_ref().unwrap().feature, 0);
    }

    #[test]
    fn huge_alpha_prunes_to_root() {
        let x: Vec<f64> = (0..50).map(f64::from).collect();
        let y: Vec<u8> = (0..50).map(|i| u8::from(i % 3 == 0)).collect();
        let p = TreeParams {
            ccp_alpha: 1e9,
            ..TreeParams::default()
        };
        let t = fit(&x, 1, &y, &p);
        assert_eq!(t.nodes.len(), 1);
        assert!(t.confidence(&[3.0]) < 0.5);
    }

    #[test]
    fn small_alpha_prunes_some() {
        let mut rng = seed::rng(3);
        let x: Vec<f64> = (0..400).map(|_| rng.gen_range(0.0..1.0)).collect();
        let y: Vec<u8> = x
            .iter()
            .map(|&v| u8::from((v > 0.5) ^ (rng.gen::<f64>() < 0.15)))
            .collect();
        let full = fit(&x, 1, &y, &TreeParams::default());
        let pruned = fit(
            &x,
            1,
            &y,
            &TreeParams {
                ccp_alpha: 0.01,
                ..TreeParams::default()
            },
        );
        assert!(pruned.n_leaves() < full.n_leaves());
        assert!(pruned.n_leaves() >= 2);
        Tree::from_nodes(pruned.nodes.clone()).unwrap();
    }

    #[test]
    fn constraints_respected() {
        let mut rng = seed::rng(8);
        let x: Vec<f64> = (0..600).map(|_| rng.gen_range(0.0..1.0)).collect();
        let y: Vec<u8> = (0..300).map(|_| rng.gen_range(0..2)).collect();
        let p = TreeParams {
            max_depth: Some(3),
            min_samples_leaf: 7,
            max_features: MaxFeatures::Sqrt,
            ..TreeParams::default()
        };
        let t = fit(&x, 2, &y, &p);
        assert!(t.depth() <= 3);
        assert!(t
            .nodes
            .iter()
            .filter(|n| n.is_leaf())
            .all(|n| n.n_samples >= 7));
    }

    #[test]
    fn from_nodes_rejects_bad_links() {
        assert!(Tree::from_nodes(vec![]).is_err());
        assert!(
            Tree::from_nodes(vec![Node::internal(2, 1, 0, 0.5, 1, 5), Node::leaf(1, 0)]).is_err()
        );
        assert!(Tree::from_nodes(vec![Node::leaf(1, 0), Node::leaf(1, 0)]).is_err());
        assert!(Tree::from_nodes(vec![
            Node::internal(2, 1, 0, 0.5, 1, 2),
            Node::leaf(1, 0),
            Node::leaf(1, 1)
        ])
        .is_ok());
    }
}
