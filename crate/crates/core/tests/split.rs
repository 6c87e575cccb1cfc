use std::collections::BTreeSet;

use fedsim_core::data::{generate_synthetic, shard_split, undersample, LabeledDataset, SyntheticSpec};
use fedsim_core::model::ModelSpec;
use fedsim_core::orchestrator::desk_benchmark;
use fedsim_core::Error;

fn uneven() -> LabeledDataset {
    // class counts 120, 75, 300, 40
    let counts = [120usize, 75, 300, 40];
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (c, &n) in counts.iter().enumerate() {
        for i in 0..n {
            features.extend([c as f64, i as f64]);
            labels.push(c);
        }
    }
    LabeledDataset::new(features, labels, 2, 4).unwrap()
}

#[test]
fn clients_are_disjoint_and_rows_are_conserved() {
    for seed in 0..10 {
        let data = uneven();
        let clients = shard_split(&data, 20, 0.8, seed).unwrap();
        let mut seen = BTreeSet::new();
        for c in &clients {
            assert_eq!(c.observed_classes().len(), 2);
            assert_eq!(c.train.len() + c.test.len(), 40);
            for &id in c.train.row_ids().iter().chain(c.test.row_ids()) {
                assert!(id < data.len());
                assert!(seen.insert(id), "row {id} assigned twice");
            }
        }
        assert_eq!(seen.len(), 2 * 20 * clients.len());
    }
}

#[test]
fn client_rows_are_copies_of_source_rows() {
    let data = uneven();
    for c in shard_split(&data, 20, 0.75, 3).unwrap() {
        for part in [&c.train, &c.test] {
            for i in 0..part.len() {
                let id = part.row_ids()[i];
                assert_eq!(part.row(i), data.row(id));
                assert_eq!(part.labels()[i], data.labels()[id]);
            }
        }
        assert_eq!(c.test.len(), 10);
    }
}

#[test]
fn pairing_stops_only_when_no_cross_pair_remains() {
    // 15, 3, 15, 2 shards: class 2 dominates, leftovers must all share one class
    let data = uneven();
    let clients = shard_split(&data, 20, 0.8, 9).unwrap();
    let mut used = [0usize; 4];
    for c in &clients {
        for &k in &c.classes_present {
            used[k] += 1;
        }
    }
    let available = [6usize, 3, 15, 2];
    let leftover: Vec<usize> = (0..4).filter(|&k| used[k] < available[k]).collect();
    assert!(leftover.len() <= 1, "{used:?}");
    // 11 = every shard outside class 2 paired with a class-2 shard
    assert_eq!(clients.len(), 11);
}

#[test]
fn split_is_deterministic_and_seed_changes_only_choices() {
    let data = generate_synthetic(&desk_benchmark(4)).unwrap();
    let a = shard_split(&data, 35, 0.8, 1).unwrap();
    let b = shard_split(&data, 35, 0.8, 1).unwrap();
    let c = shard_split(&data, 35, 0.8, 2).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(a.len(), c.len());
}

#[test]
fn short_class_error_names_it() {
    let err = shard_split(&uneven(), 50, 0.8, 0).unwrap_err();
    match err {
        Error::Shard { class, count, .. } => assert_eq!((class, count), (3, 40)),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn undersample_never_grows_a_class() {
    let data = uneven();
    for cap in [1, 40, 75, 100, 500] {
        let out = undersample(&data, cap, 7).unwrap();
        for (before, after) in data.class_counts().iter().zip(out.class_counts()) {
            assert_eq!(after, (*before).min(cap));
        }
    }
    assert_eq!(undersample(&data, 300, 7).unwrap(), data);
}

#[test]
fn two_class_separable_set_is_learned_exactly() {
    let spec = SyntheticSpec {
        num_classes: 2,
        input_dim: 3,
        per_class_count: 100,
        class_separation: 10.0,
        noise_sigma: 0.1,
        seed: 8,
    };
    let data = generate_synthetic(&spec).unwrap();
    let model = ModelSpec::logistic_regression(3, 2).unwrap();
    let mut rng = fedsim_core::rng::stream(0, &[1]);
    let mut params = model.zeros();
    for _ in 0..5 {
        params = model.sgd_epoch(&params, &data, 0.1, 16, &mut rng).unwrap();
    }
    assert_eq!(model.evaluate(&params, &data).unwrap().accuracy, 1.0);
}
