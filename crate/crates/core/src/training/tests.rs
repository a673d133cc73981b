use std::sync::Arc;

use super::*;
use crate::data::{
    generate_synthetic, jsonl, DatasetSplit, JsonlDataset, MaterialRecord, SyntheticParams,
};
use crate::error::Error;
use crate::models::{Model, ModelConfig};

fn records(n: usize, atoms: (usize, usize), seed: u64) -> Vec<MaterialRecord> {
    generate_synthetic(n, atoms, seed, &SyntheticParams::default()).unwrap()
}

fn split(n_train: usize, n_val: usize) -> DatasetSplit {
    let all = records(n_train + n_val, (2, 4), 11);
    DatasetSplit::from_parts(all[..n_train].to_vec(), all[n_train..].to_vec(), "test")
}

fn small() -> Model {
    Model::new(ModelConfig::transformer(16, 1, 2, 32), 3).unwrap()
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        epochs,
        val_period_epochs: 1,
        max_lr: 1e-3,
        ..Default::default()
    }
}

/// Largest difference relative to the largest magnitude. Elementwise ratios
/// are meaningless for parameters initialized at zero.
fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    diff / a.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

#[test]
fn one_epoch_of_64_at_batch_32_is_two_steps() {
    let cfg = TrainConfig {
        epochs: 1,
        ..Default::default()
    };
    let (rec, ckpt) = train(&mut small(), &split(64, 4), &cfg).unwrap();
    assert_eq!(rec.steps.len(), 2);
    assert_eq!(
        rec.steps.iter().map(|s| s.step).collect::<Vec<_>>(),
        vec![1, 2]
    );
    assert_eq!(rec.dataset_size, 64);
    assert_eq!((ckpt.step, ckpt.epoch), (2, 1));
    // validation always runs at the final epoch
    assert!(rec.steps[1].val.is_some());
}

#[test]
fn steps_increase_and_compute_accumulates() {
    let (rec, _) = train(&mut small(), &split(20, 4), &quick(3)).unwrap();
    assert_eq!(rec.steps.len(), 3 * 3);
    assert!(rec
        .steps
        .windows(2)
        .all(|w| w[0].step < w[1].step && w[0].flops <= w[1].flops));
    assert_eq!(rec.val_points().len(), 3);
    assert_eq!(rec.epoch_times_s.len(), 3);
    let total = 9;
    for (k, s) in rec.steps.iter().enumerate() {
        assert_eq!(s.lr, lr_at_step(k, total, 1e-3).unwrap());
    }
}

#[test]
fn homogeneous_batches_cost_the_same() {
    let recs = records(24, (3, 3), 5);
    let sp = DatasetSplit::from_parts(recs[..16].to_vec(), recs[16..].to_vec(), "test");
    let (rec, _) = train(&mut small(), &sp, &quick(2)).unwrap();
    let per_step = rec.steps[0].flops;
    assert!(per_step > 0);
    for s in &rec.steps {
        assert_eq!(s.flops, s.step as u64 * per_step);
    }
}

#[test]
fn deterministic_for_fixed_seed() {
    let sp = split(24, 4);
    let (a, ca) = train(&mut small(), &sp, &quick(2)).unwrap();
    let (b, cb) = train(&mut small(), &sp, &quick(2)).unwrap();
    assert_eq!(a, b);
    assert_eq!(ca.params, cb.params);
    let (c, _) = train(
        &mut small(),
        &sp,
        &TrainConfig {
            seed: 1,
            ..quick(2)
        },
    )
    .unwrap();
    assert_ne!(a.steps, c.steps);
}

#[test]
fn checkpoint_bytes_round_trip() {
    let (_, ckpt) = train(&mut small(), &split(16, 4), &quick(2)).unwrap();
    let bytes = ckpt.to_bytes().unwrap();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(back.to_bytes().unwrap(), bytes);
    let mut rng = back.rng.restore().unwrap();
    let mut orig = ckpt.rng.restore().unwrap();
    use rand::RngCore;
    assert_eq!(rng.next_u64(), orig.next_u64());
}

#[test]
fn checkpoint_version_and_corruption() {
    let (_, ckpt) = train(&mut small(), &split(8, 2), &quick(1)).unwrap();
    let mut bytes = ckpt.to_bytes().unwrap();
    bytes[8..12].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
    assert!(matches!(
        Checkpoint::from_bytes(&bytes),
        Err(Error::Load(_))
    ));
    let good = ckpt.to_bytes().unwrap();
    assert!(matches!(
        Checkpoint::from_bytes(&good[..good.len() - 8]),
        Err(Error::Load(_))
    ));
    assert!(matches!(
        Checkpoint::from_bytes(b"nonsense"),
        Err(Error::Load(_))
    ));
}

#[test]
fn inference_survives_save_and_load() {
    let sp = split(16, 4);
    let (_, ckpt) = train(&mut small(), &sp, &quick(2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    ckpt.save(&path).unwrap();
    let before = infer(&ckpt, &sp.val[0]).unwrap();
    let after = infer_file(&path, &sp.val[0]).unwrap();
    assert_eq!(before, after);
    assert_eq!(before, infer(&ckpt, &sp.val[0]).unwrap());
    let direct = ckpt.to_model().unwrap().predict(&sp.val[0]).unwrap();
    assert_eq!(before.0, direct);
}

#[test]
fn outputs_written_per_period() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        val_period_epochs: 2,
        viz_period_epochs: 2,
        out_dir: Some(dir.path().to_path_buf()),
        ..quick(4)
    };
    train(&mut small(), &split(8, 2), &cfg).unwrap();
    for name in [
        "checkpoint_epoch2.ckpt",
        "checkpoint_epoch4.ckpt",
        "checkpoint_final.ckpt",
        "viz_epoch2.svg",
        "viz_epoch4.svg",
    ] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    assert!(!dir.path().join("checkpoint_epoch1.ckpt").exists());
    let ck = Checkpoint::load(dir.path().join("checkpoint_epoch2.ckpt")).unwrap();
    assert_eq!(ck.epoch, 2);
    assert_eq!(ck.record.steps.len(), 2);
}

#[test]
fn non_finite_loss_aborts_with_diagnostic() {
    let mut sp = split(8, 2);
    sp.train[3].energy = f64::NAN;
    let err = train(&mut small(), &sp, &quick(2)).unwrap_err();
    match err {
        Error::NonFiniteLoss { step, diagnostic } => {
            assert_eq!(step, 1);
            assert_eq!(diagnostic.step, 0);
            assert_eq!(diagnostic.params, small().params().clone());
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn early_stopping_keeps_best() {
    let cfg = TrainConfig {
        early_stop_patience: Some(1),
        max_lr: 0.5,
        ..quick(30)
    };
    let (rec, _) = train(&mut small(), &split(8, 4), &cfg).unwrap();
    let vals: Vec<f64> = rec.val_points().iter().map(|p| p.1).collect();
    assert!(rec.stopped_early, "{vals:?}");
    assert!(rec.last_epoch() < 30);
    let best = rec.best_val().unwrap();
    assert_eq!(best, vals.iter().copied().fold(f64::INFINITY, f64::min));
    assert!(vals.last().unwrap() >= &best);
}

#[test]
fn config_errors_before_work() {
    let bad = TrainConfig {
        batch_size: 0,
        ..Default::default()
    };
    assert!(matches!(
        train(&mut small(), &split(8, 2), &bad),
        Err(Error::Config(_))
    ));
    let cfg = TrainConfig {
        workers: 3,
        batch_size: 8,
        ..Default::default()
    };
    assert!(matches!(
        train_data_parallel(&mut small(), &split(8, 2), &cfg),
        Err(Error::Config(_))
    ));
    assert!(matches!(
        train_data_parallel(&mut small(), &split(8, 2), &quick(1)),
        Err(Error::Config(_))
    ));
}

#[test]
fn cached_jsonl_source_trains_identically() {
    let sp = split(16, 4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.jsonl");
    jsonl::save_jsonl(&path, &sp.train).unwrap();
    let (mem, _) = train(&mut small(), &sp, &quick(3)).unwrap();
    for caching in [true, false] {
        let mut src = JsonlDataset::open(&path, caching).unwrap();
        let (rec, _) = train_from_source(&mut small(), &mut src, &sp.val, &quick(3)).unwrap();
        assert_eq!(rec.steps, mem.steps);
        assert_eq!(src.parse_count(), if caching { 1 } else { 3 });
    }
}

#[test]
fn surrogate_trains() {
    let mut m = Model::new(ModelConfig::surrogate(8), 1).unwrap();
    let (rec, _) = train(&mut m, &split(8, 2), &quick(2)).unwrap();
    assert!(rec.steps.iter().all(|s| s.train.total.is_finite()));
}

fn combined_gradient_matches(k: usize) {
    let sp = split(8, 0);
    let model = small();
    let cfg = TrainConfig {
        workers: k,
        batch_size: 8,
        ..Default::default()
    };
    let refs: Vec<&MaterialRecord> = sp.train.iter().collect();
    let serial = compute_gradients(&model, &refs, &cfg).unwrap();
    let mut dp = DataParallel::spawn(&model, &cfg).unwrap();
    let all = Arc::new(sp.train.clone());
    let idx: Vec<usize> = (0..8).collect();
    let par = dp.gradients(&all, &idx).unwrap();
    let flat = |g: &[crate::tensor::Tensor]| {
        g.iter()
            .flat_map(|t| t.data().to_vec())
            .collect::<Vec<f64>>()
    };
    let (a, b) = (flat(&serial.grads), flat(&par.grads));
    let worst = a
        .iter()
        .zip(&b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 1e-12, "k={k}: {worst}");
    assert!((serial.loss.total - par.loss.total).abs() <= 1e-12);
}

#[test]
fn data_parallel_gradient_equals_serial() {
    combined_gradient_matches(2);
    combined_gradient_matches(4);
}

#[test]
fn data_parallel_step_matches_serial_step() {
    let sp = split(8, 2);
    for k in [2, 4] {
        let cfg = TrainConfig {
            batch_size: 8,
            epochs: 1,
            ..Default::default()
        };
        let mut serial = small();
        train(&mut serial, &sp, &cfg).unwrap();
        let mut par = small();
        let (rec, _) =
            train_data_parallel(&mut par, &sp, &TrainConfig { workers: k, ..cfg }).unwrap();
        assert_eq!(rec.steps.len(), 1);
        let (sa, pa) = (serial.params().flatten(), par.params().flatten());
        let rel = max_rel(&sa, &pa);
        assert!(rel <= 1e-10, "k={k}: {rel}");
    }
}

#[test]
fn replicas_stay_bitwise_identical() {
    let sp = split(12, 2);
    let model = small();
    let cfg = TrainConfig {
        workers: 2,
        batch_size: 4,
        ..Default::default()
    };
    let mut dp = DataParallel::spawn(&model, &cfg).unwrap();
    let mut master = model.clone();
    let mut adam = Adam::new(master.params());
    let all = Arc::new(sp.train.clone());
    for step in 0..3 {
        let idx: Vec<usize> = (step * 4..step * 4 + 4).collect();
        let mut g = dp.gradients(&all, &idx).unwrap();
        clip_gradients(&mut g.grads, cfg.grad_clip);
        adam.step(master.params_mut(), &g.grads, 1e-3).unwrap();
        dp.apply(Arc::new(g.grads), 1e-3).unwrap();
        let reps = dp.replica_params().unwrap();
        assert_eq!(reps.len(), 2);
        for r in &reps {
            let bits = |p: &crate::models::ParamStore| {
                p.flatten().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
            };
            assert_eq!(bits(r), bits(master.params()));
        }
    }
    dp.verify_replicas(master.params()).unwrap();
}

#[test]
fn data_parallel_training_is_deterministic() {
    let sp = split(16, 4);
    let cfg = TrainConfig {
        workers: 2,
        ..quick(2)
    };
    let (a, _) = train(&mut small(), &sp, &cfg).unwrap();
    let (b, _) = train(&mut small(), &sp, &cfg).unwrap();
    assert_eq!(a, b);
}
