//! Training runs on a reduced version of the synthetic forgetting protocol.

use hanmlm::eval::representation_stray;
use hanmlm::model::{load_checkpoint, ModelParams};
use hanmlm::synthetic::{ToyData, ToyExperiment};
use hanmlm::training::{train, TrainConfig, TrainOutcome};
use hanmlm::Error;
use std::sync::OnceLock;

fn experiment() -> ToyExperiment {
    let mut exp = ToyExperiment {
        train_sentences: 600,
        test_sentences: 100,
        ..ToyExperiment::default()
    };
    exp.pretrain.epochs = 6;
    exp.finetune.epochs = 4;
    exp.finetune.learning_rate = 3e-3;
    exp
}

struct Setup {
    exp: ToyExperiment,
    data: ToyData,
    base: ModelParams<f64>,
}

fn setup() -> &'static Setup {
    static SETUP: OnceLock<Setup> = OnceLock::new();
    SETUP.get_or_init(|| {
        let exp = experiment();
        let data = exp.data().unwrap();
        let base = exp.pretrain(&data).unwrap();
        Setup { exp, data, base }
    })
}

fn finetune(lambda: f64) -> TrainOutcome<f64> {
    let s = setup();
    s.exp.finetune(&s.data, &s.base, lambda).unwrap()
}

#[test]
fn mlm_loss_strictly_decreases_over_first_five_epochs() {
    let s = setup();
    let init = hanmlm::model::init_params::<f64>(&s.exp.model_config(&s.data), s.exp.init_seed);
    let config = TrainConfig {
        epochs: 5,
        ..s.exp.pretrain.clone()
    };
    let log = train(&s.data.a_train, &init, &config, &mut ()).unwrap().log;
    let means = log.epoch_means(|r| r.mlm_loss);
    assert_eq!(means.len(), 5);
    for w in means.windows(2) {
        assert!(w[1] < w[0], "epoch means {means:?}");
    }
}

#[test]
fn strong_regularizer_keeps_representations_close() {
    let plain = finetune(0.0);
    let strong = finetune(10.0);
    let last = |o: &TrainOutcome<f64>| o.log.records.last().unwrap().cross_lingual_l2;
    assert!(last(&strong) < last(&plain), "{} vs {}", last(&strong), last(&plain));
}

#[test]
fn zero_epochs_returns_base_bitwise() {
    let s = setup();
    let config = TrainConfig {
        epochs: 0,
        ..s.exp.finetune.clone()
    };
    let out = train(&s.data.b_train, &s.base, &config, &mut ()).unwrap();
    assert_eq!(out.params, s.base);
    assert!(out.log.records.is_empty());
}

#[test]
fn single_worker_runs_are_reproducible() {
    let s = setup();
    let config = TrainConfig {
        lambda: 0.5,
        epochs: 1,
        dropout: true,
        ..s.exp.finetune.clone()
    };
    let a = train(&s.data.b_train, &s.base, &config, &mut ()).unwrap();
    let b = train(&s.data.b_train, &s.base, &config, &mut ()).unwrap();
    assert_eq!(a.log.to_jsonl(), b.log.to_jsonl());
    assert_eq!(a.params, b.params);
}

#[test]
fn worker_count_does_not_change_the_trajectory_much() {
    let s = setup();
    let config = TrainConfig {
        lambda: 0.3,
        epochs: 1,
        ..s.exp.finetune.clone()
    };
    let one = train(&s.data.b_train, &s.base, &config, &mut ()).unwrap();
    let three = train(&s.data.b_train, &s.base, &TrainConfig { workers: 3, ..config }, &mut ()).unwrap();
    for (x, y) in one.log.records.iter().zip(&three.log.records) {
        assert!((x.total_loss - y.total_loss).abs() < 1e-6 * x.total_loss.abs().max(1.0));
    }
}

#[test]
fn base_is_untouched_by_training() {
    let s = setup();
    let before = s.base.fingerprint();
    let out = finetune(0.3);
    assert_eq!(out.base_fingerprint, before);
    assert_eq!(s.base.fingerprint(), before);
    assert_ne!(out.params.fingerprint(), before);
}

#[test]
fn unregularized_training_strays_and_regularization_limits_it() {
    let s = setup();
    let stray = |p: &ModelParams<f64>| representation_stray(p, &s.base, &s.data.b_test, None).unwrap();
    assert_eq!(stray(&s.base), 0.0);
    let plain = stray(&finetune(0.0).params);
    assert!(plain > 0.0);
    let weak = stray(&finetune(0.1).params);
    let strong = stray(&finetune(0.9).params);
    assert!(strong <= weak, "λ=0.9 {strong} vs λ=0.1 {weak}");
    assert!(weak < plain, "λ=0.1 {weak} vs λ=0 {plain}");
}

#[test]
fn checkpoints_are_written_per_epoch_and_load_back() {
    let s = setup();
    let dir = tempfile::tempdir().unwrap();
    let config = TrainConfig {
        epochs: 2,
        checkpoint_dir: Some(dir.path().to_path_buf()),
        ..s.exp.finetune.clone()
    };
    let out = train(&s.data.b_train[..100], &s.base, &config, &mut ()).unwrap();
    assert_eq!(out.checkpoints.len(), 2);
    let last: ModelParams<f64> = load_checkpoint(out.checkpoints.last().unwrap()).unwrap();
    assert_eq!(last, out.params);
}

#[test]
fn divergence_is_reported_with_the_step() {
    let s = setup();
    let config = TrainConfig {
        learning_rate: 1e300,
        warmup_fraction: 0.0,
        epochs: 1,
        ..s.exp.finetune.clone()
    };
    match train(&s.data.b_train, &s.base, &config, &mut ()) {
        Err(Error::Diverged { step, checkpoint }) => {
            assert!(step >= 1);
            assert!(checkpoint.is_none());
        }
        other => panic!("expected divergence, got {:?}", other.map(|o| o.log.records.len())),
    }
}
