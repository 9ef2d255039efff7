use std::path::PathBuf;

use ndarray::Array2;
use xpaudit::data::correlation_screening;
use xpaudit::nn::{Architecture, MlpModel, Predictor};
use xpaudit::pipeline::{dp_variant_train, prepare_dataset, DpVariant, ExperimentConfig};

fn desk() -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml");
    ExperimentConfig::load(&path).unwrap()
}

#[test]
fn screening_on_bundled_data() {
    let cfg = desk();
    for ds in &cfg.datasets {
        let p = prepare_dataset(ds, cfg.seed).unwrap();
        let rows = correlation_screening(&p.bundle.target_train).unwrap();
        assert_eq!(rows.len(), ds.sensitive.len(), "{}", ds.name);
        for r in rows {
            println!(
                "{}/{}: target {:+.3}, features {:+.3} ± {:.3} over {}",
                ds.name, r.attribute, r.vs_target, r.vs_features_mean, r.vs_features_std, r.n_features
            );
            assert!(r.n_features > 0);
            assert!(r.vs_target.abs() <= 1.0);
            assert!(r.vs_features_mean.abs() < 0.1, "{}/{}", ds.name, r.attribute);
            assert!(r.vs_features_std.is_finite());
        }
    }
}

#[test]
fn credit_utility_grows_with_budget() {
    let mut cfg = desk();
    cfg.datasets.retain(|d| d.name == "credit");
    let ds = cfg.datasets[0].clone();
    let (mut tight, mut loose) = (0.0, 0.0);
    for seed in 0..5 {
        cfg.seed = seed;
        let p = prepare_dataset(&ds, seed).unwrap();
        tight += dp_variant_train(&cfg, &ds, &p, DpVariant::EpsilonTarget(0.01)).unwrap().test_accuracy / 5.0;
        loose += dp_variant_train(&cfg, &ds, &p, DpVariant::EpsilonTarget(5.0)).unwrap().test_accuracy / 5.0;
    }
    println!("credit accuracy: eps=0.01 {tight:.4}, eps=5 {loose:.4}");
    assert!(tight <= loose);
}

#[test]
fn wide_architecture() {
    assert_eq!(Architecture::Wide.hidden(), &[1024, 512, 256, 128]);
    let m = MlpModel::new(12, &Architecture::Wide.layers(), 3).unwrap();
    let p = m.predict_batch(Array2::zeros((4, 12)).view());
    assert!(p.iter().all(|v| *v > 0.0 && *v < 1.0));
}
