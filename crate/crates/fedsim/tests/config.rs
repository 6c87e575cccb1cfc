use fedsim::config::{accepted_keys, Settings};
use fedsim::CliError;
use fedsim_core::model::ModelKind;
use fedsim_core::orchestrator::{DataSource, Method};

#[test]
fn defaults_match_the_published_hyperparameters() {
    let cfg = Settings::default().build().unwrap();
    assert_eq!(cfg.fed.local_lr, 0.001);
    assert_eq!(cfg.fed.inner_epochs, 1);
    assert_eq!(cfg.fed.personalization_epochs, 7);
    assert_eq!(cfg.fed.batch_size, 16);
    assert_eq!(cfg.fed.eta0, 1.0);
    assert_eq!(cfg.fed.etak, 0.46);
    assert_eq!(cfg.fed.total_rounds, 220);
    assert_eq!(cfg.fed.meta_batch, 5);
    assert_eq!(cfg.cluster_init_rounds, 20);
    assert_eq!(cfg.max_distance, 5.0);
    assert_eq!(cfg.split.shard_size, 35);
    assert_eq!(cfg.split.train_fraction, 0.8);
    assert_eq!(cfg.split.undersample_cap, Some(500));
}

#[test]
fn parses_comments_sections_and_overrides() {
    let mut s = Settings::default();
    s.apply_text(
        "# experiment\n\nmethod = fedavg_hc   # clustered\nmodel = mlp1\nmodel.hidden_dim=8\n\
         fed.total_rounds = 40\ndata.seed = 9\nsplit.undersample_cap = 0\n",
        "test",
    )
    .unwrap();
    s.apply_override("fed.seed=77").unwrap();
    let cfg = s.build().unwrap();
    assert_eq!(cfg.method, Method::FedAvgHc);
    assert_eq!(cfg.model, ModelKind::Mlp1 { hidden_dim: 8 });
    assert_eq!(cfg.fed.total_rounds, 40);
    assert_eq!(cfg.fed.seed, 77);
    assert_eq!(cfg.split.undersample_cap, None);
    match cfg.data {
        DataSource::Synthetic(spec) => assert_eq!(spec.seed, 9),
        other => panic!("{other:?}"),
    }
}

#[test]
fn unknown_key_is_named() {
    let err = Settings::default().apply_text("metalr = 0.5\n", "test").unwrap_err();
    assert!(matches!(err, CliError::Config(_)));
    let msg = err.to_string();
    assert!(msg.contains("`metalr`"), "{msg}");
    assert!(msg.contains("fed.etak"), "{msg}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn bad_values_name_key_and_range() {
    for (line, key, range) in [
        ("fed.batch_size = 0", "fed.batch_size", "integer >= 1"),
        ("split.train_fraction = 1.5", "split.train_fraction", "(0, 1)"),
        ("method = fedprox", "method", "fedap_hc"),
        ("max_distance = -1", "max_distance", "real > 0"),
    ] {
        let msg = Settings::default().apply_text(line, "t").unwrap_err().to_string();
        assert!(msg.contains(key) && msg.contains(range), "{msg}");
    }
    let msg = Settings::default().apply_text("no equals sign", "t").unwrap_err().to_string();
    assert!(msg.contains("key = value"), "{msg}");
}

#[test]
fn cross_key_rules_are_checked_at_build() {
    let mut s = Settings::default();
    s.apply_text("fed.etak = 2\n", "t").unwrap();
    let msg = s.build().unwrap_err().to_string();
    assert!(msg.contains("fed.etak"), "{msg}");

    let mut s = Settings::default();
    s.apply_text("fed.total_rounds = 10\n", "t").unwrap();
    assert!(s.build().is_err());
    s.apply_text("method = fedap\n", "t").unwrap();
    assert!(s.build().is_ok());
}

#[test]
fn every_key_has_a_range() {
    let keys: Vec<_> = accepted_keys().collect();
    assert!(keys.len() >= 25);
    assert!(keys.iter().all(|(k, r)| !k.is_empty() && !r.is_empty()));
}

#[test]
fn csv_path_is_relative_to_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.cfg");
    std::fs::write(&path, "data.kind = csv\ndata.path = rows.csv\n").unwrap();
    let cfg = Settings::from_file(&path).unwrap().build().unwrap();
    match cfg.data {
        DataSource::Csv { path: p, label_column, .. } => {
            assert_eq!(std::path::Path::new(&p), dir.path().join("rows.csv"));
            assert_eq!(label_column, "label");
        }
        other => panic!("{other:?}"),
    }
    std::fs::write(&path, "data.kind = csv\n").unwrap();
    assert!(Settings::from_file(&path).unwrap().build().is_err());
}
