use super::*;
use crate::kg::{Triple, Vocab};
use crate::models::{batch_grad, init_params};
use crate::sampler::Strategy;
use crate::testkit;
use rand::SeedableRng;

fn ring_dataset(n: u32) -> Arc<KgDataset> {
    let mut vocab = Vocab::new();
    for i in 0..n {
        vocab.intern_entity(&format!("e{i}"));
    }
    vocab.intern_relation("next");
    let train: Vec<Triple> = (0..n).map(|i| Triple::new(i, 0, (i + 1) % n)).collect();
    let valid: Vec<Triple> = (0..3).map(|i| Triple::new(i, 0, (i + 1) % n)).collect();
    Arc::new(KgDataset::from_parts(vocab, train, valid, vec![]).unwrap())
}

fn quick_hp(model: &str) -> HyperParams {
    HyperParams {
        epochs: 3,
        hidden_size: 6,
        batch_size: 4,
        ..HyperParams::defaults_for(model)
    }
}

#[test]
fn loss_examples() {
    // margin: gamma=1, s_pos=0.5, s_neg=0.3 → 0.8
    assert!((loss(LossKind::Margin, &[0.5], &[0.3], 1.0, 0.0, 0.0) - 0.8).abs() < 1e-12);
    // inactive hinge
    assert_eq!(loss(LossKind::Margin, &[2.0], &[0.5], 1.0, 0.0, 0.0), 0.0);
    // softplus with zero scores → 2 ln 2
    let l = loss(LossKind::Softplus, &[0.0], &[0.0], 0.0, 0.0, 0.0);
    assert!((l - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    // the regularizer enters through the touched norm
    let l = loss(LossKind::Softplus, &[0.0], &[0.0], 0.0, 0.5, 2.0);
    assert!((l - (2.0 * std::f64::consts::LN_2 + 1.0)).abs() < 1e-12);
}

#[test]
fn softplus_is_stable_at_extremes() {
    assert_eq!(crate::models::softplus(800.0), 800.0);
    assert_eq!(crate::models::softplus(-800.0), 0.0);
    assert!(loss(LossKind::Softplus, &[800.0], &[-800.0], 0.0, 0.0, 0.0).is_finite());
}

#[test]
fn zero_learning_rate_leaves_params_at_init() {
    let d = ring_dataset(10);
    let mut hp = quick_hp("transe");
    hp.learning_rate = 0.0;
    let kind = ModelKind::from_name("transe", hp.l1_flag).unwrap();
    let cfg = hp.sampler_config(false, 1, 4);
    let (params, _) = train(d.clone(), kind, &hp, &cfg).unwrap();
    let fresh = init_params(kind, d.n_entities(), d.n_relations(), hp.hidden_size, hp.seed).unwrap();
    assert_eq!(params, fresh);
}

#[test]
fn degenerate_graph_has_constant_loss_trajectory() {
    // One entity: every negative equals its positive, so the margin term
    // is exactly gamma per pair regardless of the parameters.
    let mut vocab = Vocab::new();
    vocab.intern_entity("only");
    vocab.intern_relation("self");
    let d = Arc::new(
        KgDataset::from_parts(vocab, vec![Triple::new(0, 0, 0); 4], vec![], vec![]).unwrap(),
    );
    let mut hp = quick_hp("transe");
    hp.learning_rate = 0.0;
    hp.margin = 0.7;
    let cfg = hp.sampler_config(false, 1, 4);
    let (_, record) = train(d, ModelKind::TransE { l1: true }, &hp, &cfg).unwrap();
    assert_eq!(record.epoch_loss.len(), hp.epochs);
    for &l in &record.epoch_loss {
        assert_eq!(l, record.epoch_loss[0], "trajectory not constant");
        assert!((l - 0.7).abs() < 1e-12);
    }
}

#[test]
fn training_is_deterministic_with_one_worker() {
    let d = ring_dataset(12);
    let hp = quick_hp("transh");
    let kind = ModelKind::from_name("transh", hp.l1_flag).unwrap();
    let cfg = hp.sampler_config(false, 1, 4);
    let (p1, r1) = train(d.clone(), kind, &hp, &cfg).unwrap();
    let (p2, r2) = train(d, kind, &hp, &cfg).unwrap();
    assert_eq!(p1, p2);
    assert_eq!(r1.epoch_loss, r2.epoch_loss);
}

#[test]
fn constraints_hold_after_every_epoch() {
    let d = ring_dataset(14);
    for (model, check_kg2e) in [("transe", false), ("kg2e", true)] {
        let hp = quick_hp(model);
        let kind = ModelKind::from_name(model, hp.l1_flag).unwrap();
        let cfg = hp.sampler_config(false, 1, 4);
        let (params, _) = train(d.clone(), kind, &hp, &cfg).unwrap();
        if check_kg2e {
            for slot in [2, 3] {
                for &v in params.tensors[slot].data() {
                    assert!((0.05..=5.0).contains(&v), "variance {v} escaped clamp");
                }
            }
        } else {
            for row in params.tensors[0].iter_rows() {
                let n: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((n - 1.0).abs() <= 1e-6, "entity norm {n}");
            }
        }
    }
}

#[test]
fn single_sgd_step_does_not_increase_batch_loss() {
    // Active hinge, eta = 1e-4.
    let kind = ModelKind::TransE { l1: false };
    let mut params = testkit::random_params(kind, 8, 2, 6, 99);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(100);
    let batch = testkit::random_batch(8, 2, 5, &mut rng);
    let ctx = crate::models::LossContext {
        loss: LossKind::Margin,
        margin: 2.0,
        lambda: 0.0,
    };
    let (grads, before) = batch_grad(&params, &batch, &ctx);
    assert!(before > 0.0, "hinge must be active for this test");
    let mut opt = OptState::new(OptKind::Sgd, params.tensors.len());
    opt.step(&mut params, &grads, 1e-4);
    let (_, after) = batch_grad(&params, &batch, &ctx);
    assert!(
        after <= before + 1e-12,
        "loss increased: {before} -> {after}"
    );
}

#[test]
fn adam_first_step_is_signed_unit_step() {
    let kind = ModelKind::DistMult;
    let params0 = testkit::random_params(kind, 5, 2, 4, 7);
    let mut params = params0.clone();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
    let batch = testkit::random_batch(5, 2, 3, &mut rng);
    let ctx = crate::models::LossContext {
        loss: LossKind::Softplus,
        margin: 0.0,
        lambda: 0.0,
    };
    let (grads, _) = batch_grad(&params, &batch, &ctx);
    let mut opt = OptState::new(OptKind::Adam, params.tensors.len());
    let lr = 0.01;
    opt.step(&mut params, &grads, lr);
    for slot in 0..grads.n_slots() {
        for (&row, g) in grads.slot(slot) {
            for (i, &gi) in g.iter().enumerate() {
                if gi.abs() < 1e-9 {
                    continue;
                }
                let delta = params.tensors[slot].row(row as usize)[i]
                    - params0.tensors[slot].row(row as usize)[i];
                // With bias correction the first step is lr * g/(|g| + eps).
                let expected = -lr * gi / (gi.abs() + 1e-8);
                assert!(
                    (delta - expected).abs() < 1e-9,
                    "slot {slot} row {row} col {i}: {delta} vs {expected}"
                );
            }
        }
    }
}

#[test]
fn mismatched_sampler_config_is_rejected() {
    let d = ring_dataset(8);
    let hp = quick_hp("transe");
    let kind = ModelKind::TransE { l1: true };
    let mut cfg = hp.sampler_config(false, 1, 4);
    cfg.batch_size += 1;
    assert!(matches!(
        train(d.clone(), kind, &hp, &cfg),
        Err(TrainError::InconsistentConfig(_))
    ));
    let mut cfg = hp.sampler_config(false, 1, 4);
    cfg.seed ^= 1;
    assert!(matches!(
        train(d, kind, &hp, &cfg),
        Err(TrainError::InconsistentConfig(_))
    ));
}

#[test]
fn non_finite_loss_aborts_with_diagnostics() {
    let d = ring_dataset(10);
    let mut hp = quick_hp("distmult");
    hp.loss_kind = LossKind::Softplus;
    hp.learning_rate = 1e155; // one step blows the parameters up
    hp.epochs = 3;
    let kind = ModelKind::DistMult;
    let cfg = hp.sampler_config(false, 1, 4);
    match train(d, kind, &hp, &cfg) {
        Err(TrainError::NonFiniteLoss { rows, .. }) => {
            assert!(!rows.is_empty());
        }
        other => panic!("expected NonFiniteLoss, got {other:?}"),
    }
}

#[test]
fn validation_reports_are_recorded() {
    let d = ring_dataset(10);
    let mut hp = quick_hp("transe");
    hp.epochs = 4;
    hp.eval_every = 2;
    let kind = ModelKind::TransE { l1: true };
    let cfg = hp.sampler_config(false, 1, 4);
    let (_, record) = train(d, kind, &hp, &cfg).unwrap();
    let epochs: Vec<usize> = record.validations.iter().map(|(e, _)| *e).collect();
    assert_eq!(epochs, vec![1, 3]);
    // Default: once at the end.
    let d = ring_dataset(10);
    let mut hp = quick_hp("transe");
    hp.epochs = 4;
    let cfg = hp.sampler_config(false, 1, 4);
    let (_, record) = train(d, kind, &hp, &cfg).unwrap();
    let epochs: Vec<usize> = record.validations.iter().map(|(e, _)| *e).collect();
    assert_eq!(epochs, vec![3]);
}

#[test]
fn planted_translation_loss_decreases_over_first_epochs() {
    let d = Arc::new(testkit::modular_translation_kg(100, &[1, 5], 0.10, 42));
    let hp = HyperParams {
        l1_flag: true,
        batch_size: 32,
        epochs: 5,
        hidden_size: 32,
        learning_rate: 0.01,
        margin: 1.0,
        opt: OptKind::Sgd,
        samp: Strategy::Bern,
        loss_kind: LossKind::Margin,
        lambda_reg: 0.0,
        seed: 3,
        eval_every: 0,
    };
    let cfg = hp.sampler_config(false, 1, 8);
    let (_, record) = train(d, ModelKind::TransE { l1: true }, &hp, &cfg).unwrap();
    for w in record.epoch_loss.windows(2) {
        assert!(w[1] < w[0], "loss did not strictly decrease: {:?}", record.epoch_loss);
    }
}

#[test]
fn checkpoint_round_trips_exactly() {
    for name in crate::models::MODEL_NAMES {
        let kind = ModelKind::from_name(name, true).unwrap();
        let params = testkit::random_params(kind, 6, 3, 4, 17);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_model(&params, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded, params, "{name}");
    }
}

#[test]
fn checkpoint_corruption_is_detected() {
    let params = testkit::random_params(ModelKind::DistMult, 4, 2, 3, 1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    save_model(&params, &path).unwrap();

    let mut bytes = fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    fs::write(&path, &bytes).unwrap();
    assert!(matches!(
        load_model(&path),
        Err(CheckpointError::ChecksumMismatch)
    ));

    let mut bytes = fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff; // restore payload
    bytes[0] = b'X';
    fs::write(&path, &bytes).unwrap();
    assert!(matches!(
        load_model(&path),
        Err(CheckpointError::VersionMismatch { .. })
    ));

    fs::write(&path, [1, 2, 3]).unwrap();
    assert!(matches!(load_model(&path), Err(CheckpointError::Truncated)));
}

#[test]
fn loss_csv_has_one_row_per_epoch() {
    let record = TrainRecord {
        epoch_loss: vec![1.5, 0.75, 0.5],
        epoch_seconds: vec![0.01, 0.02, 0.01],
        validations: vec![],
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("loss.csv");
    write_loss_csv(&record, &path).unwrap();
    let body = fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = body.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0], "epoch,mean_loss,seconds");
    assert_eq!(lines[1], "1,1.5,0");
}

#[test]
fn multi_worker_training_covers_all_epochs() {
    let d = ring_dataset(20);
    let mut hp = quick_hp("distmult");
    hp.epochs = 4;
    let cfg = hp.sampler_config(false, 3, 2);
    let (params, record) = train(d, ModelKind::DistMult, &hp, &cfg).unwrap();
    assert_eq!(record.epoch_loss.len(), 4);
    assert!(params.all_finite());
}
