mod common;

use dunet_core::data::SliceStack;
use dunet_core::train::{
    compare_losses, load_model, load_state, CheckpointPlan, LossConfig, TrainConfig, TrainState,
};
use dunet_core::losses::{LossKind, LossParams};
use dunet_core::{train, Error, Preset};

fn data() -> Vec<SliceStack> {
    common::phantom_stacks(32, 3)
}

#[test]
fn frozen_epoch_leaves_every_value_bitwise_unchanged() {
    let spec = common::tiny(Preset::SeAdd23, 32);
    let cfg = TrainConfig {
        learning_rate: 0.0,
        freeze: true,
        epochs: 1,
        batch_size: Some(3),
        ..TrainConfig::default()
    };
    let mut state = TrainState::new(&spec, &cfg, &LossConfig::default()).unwrap();
    let before = state.model.params().clone();
    state.run(&data(), None).unwrap();
    assert_eq!(state.model.params(), &before);
    assert_eq!(state.history.len(), 1);
}

#[test]
fn same_seed_same_trajectory() {
    let spec = common::tiny(Preset::Add23, 32);
    let cfg = common::adam(2, 4);
    let (m1, h1) = train(&spec, &data(), &cfg, &LossConfig::default()).unwrap();
    let (m2, h2) = train(&spec, &data(), &cfg, &LossConfig::default()).unwrap();
    assert_eq!(h1.losses(), h2.losses());
    assert_eq!(h1.dsc(), h2.dsc());
    assert_eq!(m1.params(), m2.params());
    assert!(h1.records.iter().all(|r| r.seconds > 0.0));

    let other = TrainConfig { seed: 12, ..cfg };
    let (_, h3) = train(&spec, &data(), &other, &LossConfig::default()).unwrap();
    assert_ne!(h1.losses(), h3.losses());
}

#[test]
fn resume_reproduces_the_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let spec = common::tiny(Preset::SeAdd23, 32);
    let stacks = data();
    let full_cfg = TrainConfig {
        checkpoint_every: 2,
        ..common::adam(4, 4)
    };
    let plan = CheckpointPlan {
        dir: dir.path().to_path_buf(),
    };
    let mut full = TrainState::new(&spec, &full_cfg, &LossConfig::default()).unwrap();
    full.run(&stacks, Some(&plan)).unwrap();
    assert!(plan.path_for(2).exists() && plan.path_for(4).exists());
    assert!(!plan.path_for(1).exists());

    let mut resumed = load_state(&plan.path_for(2)).unwrap();
    assert_eq!(resumed.epochs_done(), 2);
    resumed.run(&stacks, None).unwrap();
    for (a, b) in full.history.records.iter().zip(&resumed.history.records) {
        assert!((a.loss - b.loss).abs() <= 1e-5 * a.loss.abs(), "{a:?} vs {b:?}");
    }
    assert_eq!(resumed.history.len(), 4);
    assert_eq!(load_model(&plan.path_for(4)).unwrap().params(), full.model.params());
}

#[test]
fn non_finite_input_names_the_batch() {
    let spec = common::tiny(Preset::Add23, 32);
    let mut stacks = data();
    stacks[1].input[5] = f32::NAN;
    let cfg = TrainConfig {
        augment: false,
        ..common::adam(1, 64)
    };
    let err = train(&spec, &stacks, &cfg, &LossConfig::default()).unwrap_err();
    match err {
        Error::NonFiniteLoss { epoch, batch, cases, .. } => {
            assert_eq!((epoch, batch), (1, 0));
            assert!(cases.contains("a:1"), "{cases}");
        }
        other => panic!("{other}"),
    }
}

#[test]
fn incompatible_data_is_rejected() {
    let spec = common::tiny(Preset::Add23, 48);
    let err = train(&spec, &data(), &common::adam(1, 2), &LossConfig::default()).unwrap_err();
    assert!(matches!(err, Error::ShapeMismatch(_)));
    let err = train(&spec, &[], &common::adam(1, 2), &LossConfig::default()).unwrap_err();
    assert!(matches!(err, Error::InvalidArgument(_)));
}

#[test]
fn loss_comparison_is_a_controlled_experiment() {
    let spec = common::tiny(Preset::Add23, 32);
    let losses: Vec<LossConfig> = LossKind::ALL
        .into_iter()
        .map(|k| LossConfig::new(k, LossParams::default()))
        .collect();
    let bundle = compare_losses(&spec, &data(), &common::adam(2, 6), &losses).unwrap();
    assert_eq!(bundle.curves.len(), 3);
    assert!(bundle.curves.iter().all(|c| c.history.len() == 2));
    // identical initial weights: each run equals a fresh train with its loss
    let (_, dl) = train(&spec, &data(), &common::adam(2, 6), &losses[1]).unwrap();
    assert_eq!(bundle.curve(LossKind::Dl).unwrap().history.losses(), dl.losses());
    let tsv = bundle.to_tsv();
    assert!(tsv.starts_with("epoch\tfl\tdl\teml\n"), "{tsv}");
    assert_eq!(tsv.lines().count(), 3);
}
