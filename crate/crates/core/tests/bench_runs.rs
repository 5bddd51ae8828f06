mod common;

use std::sync::OnceLock;

use oscnet::bench::{run_experiment_on, DatasetKind, ExperimentConfig};
use oscnet::data::{load_mnist, Dataset};
use oscnet::{ActivationKind, Error};

fn mnist() -> Option<&'static (Dataset, Dataset)> {
    static DATA: OnceLock<Option<(Dataset, Dataset)>> = OnceLock::new();
    DATA.get_or_init(|| {
        if common::mnist_present() {
            Some(load_mnist(&common::mnist_dir()).unwrap())
        } else {
            eprintln!("MNIST not found at {}; skipping", common::mnist_dir().display());
            None
        }
    })
    .as_ref()
}

fn small_config() -> ExperimentConfig {
    ExperimentConfig {
        epochs: 1,
        batch_size: 64,
        train_subset: Some(512),
        seed: 3,
        ..ExperimentConfig::defaults(DatasetKind::Mnist)
    }
}

#[test]
fn zero_epochs_rejected() {
    let cfg = ExperimentConfig {
        epochs: 0,
        ..small_config()
    };
    assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
}

#[test]
fn one_epoch_small_subset_beats_chance() {
    let Some((train, test)) = mnist() else { return };
    let rec = run_experiment_on(&small_config(), train, test, &mut |_| {}).unwrap();
    assert_eq!(rec.history.len(), 1);
    assert!(rec.test_accuracy > 0.3, "test accuracy {}", rec.test_accuracy);
}

#[test]
fn repeated_runs_are_identical() {
    let Some((train, test)) = mnist() else { return };
    let cfg = ExperimentConfig {
        conv_activation: ActivationKind::Prelu,
        train_subset: Some(256),
        ..small_config()
    };
    let a = run_experiment_on(&cfg, train, test, &mut |_| {}).unwrap();
    let b = run_experiment_on(&cfg, train, test, &mut |_| {}).unwrap();
    assert_eq!(a.without_timing().to_json().unwrap(), b.without_timing().to_json().unwrap());
}

#[test]
fn training_reduces_loss_for_every_conv_activation() {
    let Some((train, test)) = mnist() else { return };
    for kind in ActivationKind::ALL {
        let cfg = ExperimentConfig {
            epochs: 2,
            train_subset: Some(4096),
            ..ExperimentConfig::defaults(DatasetKind::Mnist)
        }
        .with_activations(kind, ActivationKind::Relu);
        let rec = run_experiment_on(&cfg, train, test, &mut |_| {}).unwrap();
        let last = rec.last_epoch().train_loss;
        assert!(last < rec.initial_train_loss, "{kind}: {last} vs {}", rec.initial_train_loss);
    }
}
