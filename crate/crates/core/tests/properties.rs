//! Property tests for the invariants the rest of the workbench relies on.

use fairlens_core::audit;
use fairlens_core::dataset::{
    apply_mask, Dataset, DatasetSchema, FeatureSchema, Group, GroupRule, LabelSchema, MaskEntry,
    MaskSpec, SensitiveSpec,
};
use fairlens_core::metrics::{aod, counterfactual_set, group_confusion, group_discrimination};
use fairlens_core::models::{train, ModelKind};
use fairlens_core::remedy::{apply_remedy, RemedyConfig};
use fairlens_core::store::{Store, StoreError};
use fairlens_core::sweep::{
    mutate_hyperparams, pareto_front, run_sweep, select, ModelRecord, SweepConfig, SweepManifest,
};
use fairlens_core::synthetic::{proxy_dataset, proxy_spec, ProxyConfig};
use fairlens_core::{seed, store, Predictor};
use proptest::prelude::*;
use rand::Rng;

fn schema() -> DatasetSchema {
    DatasetSchema {
        dataset_id: "prop".into(),
        features: vec![
            FeatureSchema::categorical("g", ["a", "b", "c"]),
            FeatureSchema::categorical("color", ["red", "green", "blue", "grey"]),
            FeatureSchema::numerical("x"),
            FeatureSchema::numerical("z"),
        ],
        label: LabelSchema {
            name: "y".into(),
            positive_meaning: "yes".into(),
            negative_meaning: "no".into(),
        },
    }
}

fn spec() -> SensitiveSpec {
    SensitiveSpec {
        feature: "g".into(),
        group0: GroupRule::categories(["a"]),
        group1: GroupRule::categories(["b", "c"]),
        labels: ["a".into(), "not a".into()],
    }
}

/// A dataset with both groups and both labels present.
fn random_dataset(n: usize, seed_: u64) -> Dataset {
    let mut rng = seed::rng(seed_);
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let g = if i < 2 { i as f64 } else { rng.gen_range(0..3) as f64 };
        let color = rng.gen_range(0..4) as f64;
        let x: f64 = rng.gen_range(-3.0..3.0);
        let z: f64 = (rng.gen_range(0..20) as f64) / 4.0;
        let noise: f64 = rng.gen();
        let y = if i < 4 {
            (i % 2) as u8
        } else {
            u8::from(x + 0.5 * g - 0.3 * color + noise > 0.8)
        };
        rows.push(vec![g, color, x, z]);
        labels.push(y);
    }
    Dataset::new(schema(), rows, labels).unwrap()
}

fn mask_strategy() -> impl Strategy<Value = MaskSpec> {
    let cats = prop::sample::subsequence(vec!["red", "green", "blue", "grey"], 0..=4);
    let range = (prop::option::of(-3.0f64..3.0), prop::option::of(-3.0f64..3.0));
    (cats, range, any::<bool>(), any::<bool>()).prop_map(|(cats, (lo, hi), use_x, all_z)| {
        let mut m = MaskSpec::new();
        if !cats.is_empty() {
            m = m.with(
                "color",
                MaskEntry::Categories(cats.into_iter().map(String::from).collect()),
            );
        }
        if use_x {
            let (lo, hi) = match (lo, hi) {
                (Some(a), Some(b)) if a > b => (Some(b), Some(a)),
                other => other,
            };
            m = m.with("x", MaskEntry::Range([lo, hi]));
        }
        if all_z {
            m = m.with("z", MaskEntry::All);
        }
        m
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn masking_is_idempotent(mask in mask_strategy(), s in any::<u64>()) {
        let ds = random_dataset(60, s);
        let once = apply_mask(&ds, &mask).unwrap();
        let twice = apply_mask(&once, &mask).unwrap();
        prop_assert_eq!(once.schema(), twice.schema());
        prop_assert_eq!(once.labels(), twice.labels());
        for (a, b) in once.rows().zip(twice.rows()) {
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn metrics_match_a_naive_loop(
        cells in prop::collection::vec((0u8..2, 0u8..2, 0usize..3), 8..200)
    ) {
        let mut cells = cells;
        // every group needs both labels for the rates to be defined
        cells[..4].copy_from_slice(&[(0, 0, 0), (1, 1, 0), (0, 0, 1), (1, 1, 1)]);
        let preds: Vec<u8> = cells.iter().map(|c| c.0).collect();
        let labels: Vec<u8> = cells.iter().map(|c| c.1).collect();
        let groups: Vec<Group> = cells
            .iter()
            .map(|c| match c.2 {
                0 => Group::Group0,
                1 => Group::Group1,
                _ => Group::Excluded,
            })
            .collect();

        let mut n = [[0i128; 4]; 2]; // tp fp fn tn
        for i in 0..preds.len() {
            let Some(g) = groups[i].index() else { continue };
            let k = match (preds[i], labels[i]) {
                (1, 1) => 0,
                (1, 0) => 1,
                (0, 1) => 2,
                _ => 3,
            };
            n[g][k] += 1;
        }
        let c = group_confusion(&preds, &labels, &groups).unwrap();
        for g in 0..2 {
            prop_assert_eq!([c[g].tp, c[g].fp, c[g].fn_, c[g].tn].map(i128::from), n[g]);
        }
        // ((fp0/neg0 - fp1/neg1) + (tp1/pos1 - tp0/pos0)) / 2 as one fraction
        let (pos0, neg0) = (n[0][0] + n[0][2], n[0][1] + n[0][3]);
        let (pos1, neg1) = (n[1][0] + n[1][2], n[1][1] + n[1][3]);
        let den = 2 * pos0 * neg0 * pos1 * neg1;
        let num = n[0][1] * pos0 * pos1 * neg1 - n[1][1] * pos0 * neg0 * pos1
            + n[1][0] * pos0 * neg0 * neg1
            - n[0][0] * neg0 * pos1 * neg1;
        let exact = num as f64 / den as f64;
        let got = aod(&c[0], &c[1]).unwrap();
        prop_assert!((got - exact).abs() <= 1e-15, "{got} vs {exact}");

        let (m0, m1) = (pos0 + neg0, pos1 + neg1);
        let gd_exact = ((n[0][0] + n[0][1]) * m1 - (n[1][0] + n[1][1]) * m0) as f64
            / (2 * m0 * m1) as f64;
        let gd = group_discrimination(&preds, &groups).unwrap();
        prop_assert!((gd - gd_exact).abs() <= 1e-15);

        // swapping the groups negates both signed scores exactly
        let swapped: Vec<Group> = groups
            .iter()
            .map(|g| match g {
                Group::Group0 => Group::Group1,
                Group::Group1 => Group::Group0,
                Group::Excluded => Group::Excluded,
            })
            .collect();
        let cs = group_confusion(&preds, &labels, &swapped).unwrap();
        prop_assert_eq!(aod(&cs[0], &cs[1]).unwrap(), -got);
        prop_assert_eq!(group_discrimination(&preds, &swapped).unwrap(), -gd);
    }

    #[test]
    fn pareto_front_matches_quadratic_oracle(
        points in prop::collection::vec((0u8..6, 0u8..6), 1..40)
    ) {
        let records: Vec<ModelRecord> = points
            .iter()
            .enumerate()
            .map(|(i, &(acc, a))| record(&format!("r{i:02}"), acc as f64 / 5.0, a as f64 / 10.0))
            .collect();
        let front: Vec<&str> = pareto_front(&records).iter().map(|r| r.record_id.as_str()).collect();
        let oracle: Vec<&str> = records
            .iter()
            .filter(|r| {
                !records.iter().any(|o| {
                    o.accuracy >= r.accuracy
                        && o.aod <= r.aod
                        && (o.accuracy > r.accuracy || o.aod < r.aod)
                })
            })
            .map(|r| r.record_id.as_str())
            .collect();
        prop_assert_eq!(&front, &oracle);

        let sel = select(&records).unwrap();
        let min_aod = records.iter().map(|r| r.aod).fold(f64::INFINITY, f64::min);
        let max_aod = records.iter().map(|r| r.aod).fold(f64::NEG_INFINITY, f64::max);
        let max_acc = records.iter().map(|r| r.accuracy).fold(f64::NEG_INFINITY, f64::max);
        let by_id = |id: &str| records.iter().find(|r| r.record_id == id).unwrap();
        prop_assert_eq!(by_id(&sel.most_fair).aod, min_aod);
        prop_assert_eq!(by_id(&sel.most_unfair).aod, max_aod);
        prop_assert_eq!(by_id(&sel.most_accurate).accuracy, max_acc);
        prop_assert!(front.contains(&sel.most_fair.as_str()));
        prop_assert!(front.contains(&sel.most_accurate.as_str()));
    }
}

fn record(id: &str, accuracy: f64, aod: f64) -> ModelRecord {
    ModelRecord {
        record_id: id.into(),
        kind: ModelKind::DecisionTree,
        hyperparams: fairlens_core::models::Hyperparams::default_for(ModelKind::DecisionTree),
        dataset_id: "prop".into(),
        sensitive: "g".into(),
        accuracy,
        aod_signed: aod,
        aod,
        group_score: None,
        causal_score: None,
        train_seed: 0,
        parent: None,
        mask: None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn probabilities_stay_in_unit_interval(kind_ix in 0usize..4, s in any::<u64>()) {
        let kind = ModelKind::ALL[kind_ix];
        let ds = random_dataset(80, s);
        let mut hp = mutate_hyperparams(kind, &mut seed::rng(s));
        if let fairlens_core::models::Hyperparams::RandomForest(f) = &mut hp {
            f.n_estimators = f.n_estimators.min(10);
        }
        let m = train(&hp, &ds, s).unwrap();
        let mut rng = seed::rng(s ^ 1);
        for _ in 0..50 {
            let row = vec![
                rng.gen_range(0..3) as f64,
                rng.gen_range(0..4) as f64,
                rng.gen_range(-1e3..1e3),
                rng.gen_range(-1e3..1e3),
            ];
            let p = m.score(&row);
            prop_assert!((0.0..=1.0).contains(&p), "{p}");
        }
    }
}

fn manifest_in_pool(threads: usize, kind: ModelKind, ds: &Dataset) -> (SweepManifest, Vec<String>) {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| {
        let out = run_sweep(kind, ds, &proxy_spec(), 6, 42);
        let cfg = SweepConfig {
            kind,
            dataset: ds.id().into(),
            sensitive: "s".into(),
            n_models: 6,
            seed: 42,
        };
        let models = out.members.iter().map(|m| store::canonical_json(&m.model)).collect();
        (SweepManifest::new(cfg, &out), models)
    })
}

#[test]
fn sweeps_are_identical_across_thread_counts() {
    let ds = proxy_dataset(&ProxyConfig {
        n_rows: 300,
        ..ProxyConfig::default()
    });
    for kind in ModelKind::ALL {
        let base = manifest_in_pool(1, kind, &ds);
        for threads in [4, 8] {
            let other = manifest_in_pool(threads, kind, &ds);
            assert_eq!(
                serde_json::to_string(&base.0).unwrap(),
                serde_json::to_string(&other.0).unwrap(),
                "{kind} with {threads} threads"
            );
            assert_eq!(base.1, other.1);
        }
    }
}

#[test]
fn store_round_trip_is_exact_for_every_kind() {
    let dir = tempfile::tempdir().unwrap();
    let st = Store::open(dir.path()).unwrap();
    let ds = random_dataset(150, 3);
    st.save_dataset(&ds).unwrap();
    assert_eq!(st.load_dataset("prop").unwrap().rows().collect::<Vec<_>>(), ds.rows().collect::<Vec<_>>());

    let out = run_sweep(ModelKind::LogisticRegression, &ds, &spec(), 2, 1);
    let mut members = out.members;
    for kind in [ModelKind::DecisionTree, ModelKind::RandomForest, ModelKind::LinearSvm] {
        members.extend(run_sweep(kind, &ds, &spec(), 2, 1).members);
    }
    let mut rng = seed::rng(9);
    let rows: Vec<Vec<f64>> = (0..100)
        .map(|_| {
            vec![
                rng.gen_range(0..3) as f64,
                rng.gen_range(0..4) as f64,
                rng.gen_range(-4.0..4.0),
                rng.gen_range(-1.0..6.0),
            ]
        })
        .collect();
    for m in &members {
        let id = st.save_record(&m.record, &m.model).unwrap();
        assert_eq!(id, m.record.record_id);
        assert_eq!(st.save_record(&m.record, &m.model).unwrap(), id);
        let (rec, model) = st.load_record(&id).unwrap();
        assert_eq!(rec, m.record);
        for r in &rows {
            assert_eq!(model.score(r).to_bits(), m.model.score(r).to_bits());
        }
        let again = fairlens_core::remedy::rescore(&rec, &model, &ds, &spec()).unwrap();
        assert_eq!(again, rec);
    }
    assert!(matches!(st.load_record("000000000000-lr-prop"), Err(StoreError::NotFound { .. })));

    // tampering with a stored model is detected
    let id = &members[0].record.record_id;
    let path = dir.path().join("models").join(format!("{id}.model.json"));
    let text = std::fs::read_to_string(&path).unwrap();
    let tampered = text.replacen("\"converged\":true", "\"converged\":false", 1);
    let tampered = if tampered == text {
        text.replacen("\"converged\":false", "\"converged\":true", 1)
    } else {
        tampered
    };
    std::fs::write(&path, tampered).unwrap();
    assert!(matches!(st.load_record(id), Err(StoreError::CorruptRecord { .. })));
}

#[test]
fn empty_mask_remedy_is_the_identity() {
    let ds = random_dataset(200, 11);
    for kind in ModelKind::ALL {
        let out = run_sweep(kind, &ds, &spec(), 1, 5);
        let m = &out.members[0];
        let r = apply_remedy(&m.record, &m.model, &MaskSpec::new(), &ds, &spec(), &RemedyConfig {
            seed: 3,
            themis_samples: 500,
        })
        .unwrap();
        assert_eq!(r.result.before, r.result.after, "{kind}");
        assert_eq!(r.record.mask, None);
        assert_eq!(r.record.parent.as_deref(), Some(m.record.record_id.as_str()));
    }
}

#[test]
fn remedied_record_round_trips_and_rescores() {
    let dir = tempfile::tempdir().unwrap();
    let st = Store::open(dir.path()).unwrap();
    let ds = random_dataset(200, 12);
    let out = run_sweep(ModelKind::DecisionTree, &ds, &spec(), 1, 8);
    let m = &out.members[0];
    let mask = MaskSpec::new().with("color", MaskEntry::Categories(vec!["red".into()]));
    let r = apply_remedy(&m.record, &m.model, &mask, &ds, &spec(), &RemedyConfig::default()).unwrap();
    let id = st.save_record(&r.record, &r.model).unwrap();
    let (rec, model) = st.load_record(&id).unwrap();
    let again = fairlens_core::remedy::rescore(&rec, &model, &ds, &spec()).unwrap();
    assert_eq!(again.accuracy.to_bits(), r.result.after.accuracy.to_bits());
    assert_eq!(again.aod.to_bits(), r.result.after.aod.to_bits());
    assert_eq!(again, rec);
}

#[test]
fn prediction_flags_match_the_counterfactual_set() {
    let ds = random_dataset(200, 13);
    let out = run_sweep(ModelKind::DecisionTree, &ds, &spec(), 4, 2);
    for m in &out.members {
        let rows = audit::predictions(&m.record, &m.model, &ds, &spec()).unwrap();
        let set = counterfactual_set(&m.model, &ds, &spec()).unwrap();
        let flagged: Vec<usize> = rows.iter().filter(|r| r.counterfactual).map(|r| r.index).collect();
        assert_eq!(flagged, set);
        for r in &rows {
            assert_eq!(r.prediction, m.model.classify(ds.row(r.index)));
        }
    }
}
