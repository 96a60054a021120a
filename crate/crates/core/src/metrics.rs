//! Group confusion counts, true/false positive rates, average odds
//! difference, group discrimination and counterfactual (causal)
//! discrimination.
//!
//! Signed scores follow the formulas with group 0 as the first category:
//!
//! ```text
//! AOD   = ((fpr0 - fpr1) + (tpr1 - tpr0)) / 2
//! group = (posfrac0 - posfrac1) / 2
//! ```
//!
//! Reports carry both signed and absolute values. Rankings elsewhere in the
//! crate always use the absolute values.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, DatasetError, Group, SensitiveBinding, SensitiveSpec};
use crate::predictor::Predictor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("length mismatch: {0} predictions, {1} labels, {2} groups")]
    LengthMismatch(usize, usize, usize),
    #[error("sensitive group {0} has no members")]
    NoMembers(u8),
    #[error("{rate} of group {group} is undefined (empty denominator)")]
    UndefinedRate { group: u8, rate: &'static str },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupConfusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl GroupConfusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// `None` marks an undefined rate (zero denominator).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePair {
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
}

/// Per-group confusion counts; excluded rows are ignored.
pub fn group_confusion(
    preds: &[u8],
    labels: &[u8],
    groups: &[Group],
) -> Result<[GroupConfusion; 2], MetricError> {
    if preds.len() != labels.len() || preds.len() != groups.len() {
        return Err(MetricError::LengthMismatch(
            preds.len(),
            labels.len(),
            groups.len(),
        ));
    }
    let mut c = [GroupConfusion::default(); 2];
    for ((&p, &y), g) in preds.iter().zip(labels).zip(groups) {
        let Some(g) = g.index() else { continue };
        let e = &mut c[g];
        match (p, y) {
            (1, 1) => e.tp += 1,
            (1, _) => e.fp += 1,
            (_, 1) => e.fn_ += 1,
            _ => e.tn += 1,
        }
    }
    for (g, e) in c.iter().enumerate() {
        if e.total() == 0 {
            return Err(MetricError::NoMembers(g as u8));
        }
    }
    Ok(c)
}

pub fn rates(c: &GroupConfusion) -> RatePair {
    let ratio = |a: u64, b: u64| (a + b > 0).then(|| a as f64 / (a + b) as f64);
    RatePair {
        tpr: ratio(c.tp, c.fn_),
        fpr: ratio(c.fp, c.tn),
    }
}

/// Signed average odds difference between group 0 and group 1.
pub fn aod(c0: &GroupConfusion, c1: &GroupConfusion) -> Result<f64, MetricError> {
    let defined = |r: Option<f64>, group: u8, rate: &'static str| {
        r.ok_or(MetricError::UndefinedRate { group, rate })
    };
    let (r0, r1) = (rates(c0), rates(c1));
    let tpr0 = defined(r0.tpr, 0, "TPR")?;
    let fpr0 = defined(r0.fpr, 0, "FPR")?;
    let tpr1 = defined(r1.tpr, 1, "TPR")?;
    let fpr1 = defined(r1.fpr, 1, "FPR")?;
    Ok(((fpr0 - fpr1) + (tpr1 - tpr0)) / 2.0)
}

/// Signed group discrimination: half the gap in positive-prediction rates.
pub fn group_discrimination(preds: &[u8], groups: &[Group]) -> Result<f64, MetricError> {
    if preds.len() != groups.len() {
        return Err(MetricError::LengthMismatch(
            preds.len(),
            preds.len(),
            groups.len(),
        ));
    }
    let mut n = [0u64; 2];
    let mut pos = [0u64; 2];
    for (&p, g) in preds.iter().zip(groups) {
        if let Some(g) = g.index() {
            n[g] += 1;
            pos[g] += u64::from(p);
        }
    }
    for g in 0..2 {
        if n[g] == 0 {
            return Err(MetricError::NoMembers(g as u8));
        }
    }
    // One division of exact integers, so the result is the correctly rounded
    // value of the rational difference.
    let num = i128::from(pos[0]) * i128::from(n[1]) - i128::from(pos[1]) * i128::from(n[0]);
    let den = 2 * i128::from(n[0]) * i128::from(n[1]);
    Ok(num as f64 / den as f64)
}

/// For each row: `Some(true)` if flipping the sensitive cell changes the
/// predicted class, `Some(false)` if not, `None` if the row is in neither group.
pub fn counterfactual_flags<P, R>(
    m: &P,
    rows: &[R],
    binding: &SensitiveBinding,
) -> Vec<Option<bool>>
where
    P: Predictor + ?Sized,
    R: AsRef<[f64]> + Sync,
{
    rows.par_iter()
        .map(|r| {
            let r = r.as_ref();
            binding.flipped(r).map(|f| m.classify(&f) != m.classify(r))
        })
        .collect()
}

/// Indices of dataset rows whose prediction changes under the sensitive flip.
pub fn counterfactual_set<P: Predictor + ?Sized>(
    m: &P,
    ds: &Dataset,
    spec: &SensitiveSpec,
) -> Result<Vec<usize>, MetricError> {
    let binding = SensitiveBinding::for_dataset(spec, ds)?;
    let rows: Vec<&[f64]> = ds.rows().collect();
    Ok(counterfactual_flags(m, &rows, &binding)
        .into_iter()
        .enumerate()
        .filter_map(|(i, f)| (f == Some(true)).then_some(i))
        .collect())
}

/// `(counterfactual count, evaluated rows)` over `rows`.
pub fn causal_counts<P, R>(m: &P, rows: &[R], binding: &SensitiveBinding) -> (u64, u64)
where
    P: Predictor + ?Sized,
    R: AsRef<[f64]> + Sync,
{
    counterfactual_flags(m, rows, binding)
        .into_iter()
        .flatten()
        .fold((0, 0), |(c, n), f| (c + u64::from(f), n + 1))
}

/// Fraction of evaluated rows that are counterfactuals (0 when no row is in
/// either group).
pub fn causal_discrimination<P, R>(m: &P, rows: &[R], binding: &SensitiveBinding) -> f64
where
    P: Predictor + ?Sized,
    R: AsRef<[f64]> + Sync,
{
    let (c, n) = causal_counts(m, rows, binding);
    if n == 0 {
        0.0
    } else {
        c as f64 / n as f64
    }
}

/// Scores of one model on one dataset, named after the comparison table
/// columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    /// Accuracy over all rows, excluded ones included.
    pub score: f64,
    #[serde(rename = "AOD")]
    pub aod: f64,
    #[serde(rename = "AOD_signed")]
    pub aod_signed: f64,
    pub group_score: f64,
    pub group_score_signed: f64,
    pub causal_score: f64,
    pub counterfactual_count: u64,
    pub n_evaluated: u64,
    pub confusion: [GroupConfusion; 2],
}

pub fn fairness_report<P: Predictor + ?Sized>(
    m: &P,
    ds: &Dataset,
    spec: &SensitiveSpec,
) -> Result<FairnessReport, MetricError> {
    let binding = SensitiveBinding::for_dataset(spec, ds)?;
    let rows: Vec<&[f64]> = ds.rows().collect();
    let preds: Vec<u8> = rows.par_iter().map(|r| m.classify(r)).collect();
    let groups: Vec<Group> = rows.iter().map(|r| binding.group_of(r)).collect();
    let confusion = group_confusion(&preds, ds.labels(), &groups)?;
    let aod_signed = aod(&confusion[0], &confusion[1])?;
    let group_signed = group_discrimination(&preds, &groups)?;
    let correct = preds
        .iter()
        .zip(ds.labels())
        .filter(|(p, y)| p == y)
        .count();
    let (count, n) = causal_counts(m, &rows, &binding);
    Ok(FairnessReport {
        score: correct as f64 / ds.n_rows() as f64,
        aod: aod_signed.abs(),
        aod_signed,
        group_score: group_signed.abs(),
        group_score_signed: group_signed,
        causal_score: if n == 0 { 0.0 } else { count as f64 / n as f64 },
        counterfactual_count: count,
        n_evaluated: n,
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{DatasetSchema, FeatureSchema, GroupRule, LabelSchema};
    use crate::models::{Node, TrainedModel, Tree};

    const G0: Group = Group::Group0;
    const G1: Group = Group::Group1;

    fn c(tp: u64, fn_: u64, fp: u64, tn: u64) -> GroupConfusion {
        GroupConfusion { tp, fp, fn_, tn }
    }

    #[test]
    fn confusion_by_hand() {
        let [g0, g1] =
            group_confusion(&[1, 0, 1, 0, 1], &[1, 1, 0, 0, 1], &[G0, G0, G0, G0, G1]).unwrap();
        assert_eq!(g0, c(1, 1, 1, 1));
        assert_eq!(g1, c(1, 0, 0, 0));
        let e = group_confusion(&[0], &[0], &[Group::Excluded]).unwrap_err();
        assert_eq!(e, MetricError::NoMembers(0));
        assert!(matches!(
            group_confusion(&[0], &[0, 1], &[G0]),
            Err(MetricError::LengthMismatch(..))
        ));
    }

    #[test]
    fn rates_by_hand() {
        assert_eq!(
            rates(&c(2, 2, 1, 3)),
            RatePair {
                tpr: Some(0.5),
                fpr: Some(0.25)
            }
        );
        assert_eq!(rates(&c(0, 0, 1, 1)).tpr, None);
        assert_eq!(
            rates(&c(5, 0, 0, 5)),
            RatePair {
                tpr: Some(1.0),
                fpr: Some(0.0)
            }
        );
    }

    #[test]
    fn aod_by_hand() {
        // g0 tpr .5 fpr .25; g1 tpr 1 fpr .5
        assert_eq!(aod(&c(2, 2, 1, 3), &c(4, 0, 2, 2)).unwrap(), 0.125);
        assert_eq!(aod(&c(2, 2, 1, 3), &c(2, 2, 1, 3)).unwrap(), 0.0);
        assert_eq!(aod(&c(3, 0, 0, 3), &c(5, 0, 0, 1)).unwrap(), 0.0);
        assert_eq!(
            aod(&c(0, 0, 1, 1), &c(1, 1, 1, 1)).unwrap_err(),
            MetricError::UndefinedRate {
                group: 0,
                rate: "TPR"
            }
        );
    }

    #[test]
    fn group_discrimination_by_hand() {
        // 3/5 vs 1/5
        let preds = [1, 1, 1, 0, 0, 1, 0, 0, 0, 0];
        let groups = [G0, G0, G0, G0, G0, G1, G1, G1, G1, G1];
        assert_eq!(group_discrimination(&preds, &groups).unwrap(), 0.2);
        assert_eq!(group_discrimination(&[1, 1], &[G0, G1]).unwrap(), 0.0);
    }

    fn sens_schema() -> DatasetSchema {
        DatasetSchema {
            dataset_id: "cf".into(),
            features: vec![
                FeatureSchema::categorical("s", ["a", "b", "other"]),
                FeatureSchema::numerical("x"),
            ],
            label: LabelSchema {
                name: "y".into(),
                positive_meaning: "1".into(),
                negative_meaning: "0".into(),
            },
        }
    }

    fn spec() -> SensitiveSpec {
        SensitiveSpec {
            feature: "s".into(),
            group0: GroupRule::categories(["a"]),
            group1: GroupRule::categories(["b"]),
            labels: ["a".into(), "b".into()],
        }
    }

    #[test]
    fn counterfactual_sets() {
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|i| vec![f64::from(i % 3), f64::from(i)])
            .collect();
        let y = vec![0; 12];
        let ds = Dataset::new(sens_schema(), rows, y).unwrap();

        let sensitive = |r: &[f64]| if r[0] == 1.0 { 1.0 } else { 0.0 };
        let all: Vec<usize> = (0..12).filter(|i| i % 3 != 2).collect();
        assert_eq!(counterfactual_set(&sensitive, &ds, &spec()).unwrap(), all);

        let ignore = |r: &[f64]| if r[1] > 5.0 { 1.0 } else { 0.0 };
        assert!(counterfactual_set(&ignore, &ds, &spec())
            .unwrap()
            .is_empty());

        // s <= 0.5 (group a) -> x <= 3.5 ; else -> x <= 7.5
        let tree = Tree::from_nodes(vec![
            Node::internal(4, 2, 0, 0.5, 1, 2),
            Node::internal(2, 1, 1, 3.5, 3, 4),
            Node::internal(2, 1, 1, 7.5, 5, 6),
            Node::leaf(1, 0),
            Node::leaf(1, 1),
            Node::leaf(1, 0),
            Node::leaf(1, 1),
        ])
        .unwrap();
        let m = TrainedModel::from_tree(sens_schema(), tree);
        // flips differ exactly for x in (3.5, 7.5]
        let expect: Vec<usize> = (0..12).filter(|&i| i % 3 != 2 && i > 3 && i <= 7).collect();
        assert_eq!(counterfactual_set(&m, &ds, &spec()).unwrap(), expect);
        let binding = SensitiveBinding::for_dataset(&spec(), &ds).unwrap();
        let rows: Vec<&[f64]> = ds.rows().collect();
        assert_eq!(
            causal_discrimination(&m, &rows, &binding),
            expect.len() as f64 / 8.0
        );
    }

    #[test]
    fn constant_model_report() {
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|i| vec![f64::from(i % 2), f64::from(i)])
            .collect();
        let y = vec![1, 0, 1, 0, 0, 0, 1, 0, 0, 1];
        let ds = Dataset::new(sens_schema(), rows, y).unwrap();
        let r = fairness_report(&|_: &[f64]| 0.0, &ds, &spec()).unwrap();
        assert_eq!((r.aod, r.group_score, r.causal_score), (0.0, 0.0, 0.0));
        assert_eq!(r.score, 0.6);
        assert_eq!(r.n_evaluated, 10);
        let v = serde_json::to_value(&r).unwrap();
        for k in ["score", "AOD", "AOD_signed", "group_score", "causal_score"] {
            assert!(v.get(k).is_some(), "{k}");
        }
    }
}
