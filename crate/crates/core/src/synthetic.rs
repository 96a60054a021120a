//! Seeded synthetic datasets with a known proxy structure, used in tests,
//! demos and the acceptance suite.
//!
//! The proxy dataset has three features:
//!
//! * `s`: the sensitive attribute, four categories. Categories `s0` and `s3`
//!   form group 0, `s1` and `s2` group 1, so the group is not a linear
//!   function of the code and linear models cannot read it off `s` directly.
//! * `x1`: a categorical copy of the group (`a` for group 0, `b` for
//!   group 1), i.e. a perfect proxy.
//! * `x2`: a numerical feature, normal with a mean that depends on the
//!   category of `s` (far from 0 for `s0`/`s1`, centred on 0 for `s2`/`s3`).
//!
//! The label is `x2 > 0`, flipped with a fixed probability independently of
//! everything else. Given `x2` the group carries no information about the
//! label, so any weight a model puts on `x1` only adds bias. The default
//! parameters were picked so that regularized or early-stopped linear models
//! lean on `x1` noticeably.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{
    Dataset, DatasetSchema, FeatureSchema, GroupRule, LabelSchema, SensitiveSpec,
};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProxyConfig {
    pub n_rows: usize,
    /// Mean and standard deviation of `x2` for each category of `s`.
    pub x2_by_category: [(f64, f64); 4],
    /// Probability that a label is flipped, independently of everything else.
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        Self {
            n_rows: 2000,
            x2_by_category: [(-2.0, 1.0), (2.0, 1.0), (0.0, 1.0), (0.0, 1.0)],
            label_noise: 0.2,
            seed: 0,
        }
    }
}

pub const PROXY_DATASET_ID: &str = "proxy";

/// Sensitive spec of the proxy dataset.
pub fn proxy_spec() -> SensitiveSpec {
    SensitiveSpec {
        feature: "s".into(),
        group0: GroupRule::categories(["s0", "s3"]),
        group1: GroupRule::categories(["s1", "s2"]),
        labels: ["group 0".into(), "group 1".into()],
    }
}

pub fn proxy_schema() -> DatasetSchema {
    DatasetSchema {
        dataset_id: PROXY_DATASET_ID.into(),
        features: vec![
            FeatureSchema::categorical("s", ["s0", "s1", "s2", "s3"]),
            FeatureSchema::categorical("x1", ["a", "b"]),
            FeatureSchema::numerical("x2"),
        ],
        label: LabelSchema {
            name: "y".into(),
            positive_meaning: "positive".into(),
            negative_meaning: "negative".into(),
        },
    }
}

/// Generates the proxy dataset described in the module docs.
pub fn proxy_dataset(cfg: &ProxyConfig) -> Dataset {
    let mut rng = seed::rng(cfg.seed);
    let dist = |(m, s): (f64, f64)| Normal::new(m, s).expect("finite parameters");
    let x2: Vec<Normal<f64>> = cfg.x2_by_category.iter().map(|&p| dist(p)).collect();
    let mut rows = Vec::with_capacity(cfg.n_rows);
    let mut labels = Vec::with_capacity(cfg.n_rows);
    for _ in 0..cfg.n_rows {
        let s: usize = rng.gen_range(0..4);
        let g = usize::from(s == 1 || s == 2);
        let v = x2[s].sample(&mut rng);
        let flip = cfg.label_noise > 0.0 && rng.gen_bool(cfg.label_noise);
        rows.push(vec![s as f64, g as f64, v]);
        labels.push(u8::from(v > 0.0) ^ u8::from(flip));
    }
    Dataset::new(proxy_schema(), rows, labels).expect("generated rows fit the schema")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{assign_groups, Group};

    #[test]
    fn proxy_is_perfect_and_labels_follow_x2() {
        let ds = proxy_dataset(&ProxyConfig::default());
        let groups = assign_groups(&ds, &proxy_spec()).unwrap();
        let mut flips = 0;
        for (i, g) in groups.iter().enumerate() {
            let r = ds.row(i);
            assert_eq!(Some(r[1] as usize), g.index());
            flips += usize::from(ds.labels()[i] != u8::from(r[2] > 0.0));
        }
        let rate = flips as f64 / 2000.0;
        assert!((rate - 0.2).abs() < 0.03, "{rate}");
        assert!(groups.contains(&Group::Group0) && groups.contains(&Group::Group1));
        assert_eq!(ds.rows().len(), 2000);
    }
}
