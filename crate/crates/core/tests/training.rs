use histobench_core::data::{split, synth_center_blob, LabeledDataset};
use histobench_core::nn::{build_conv, build_mlp, load_checkpoint, save_checkpoint};
use histobench_core::optim::{
    adam_step, bce_logit_gradient, bce_loss, evaluate, read_history_log, train, train_split, train_with, AdamConfig,
    AdamState, StopReason, TrainingConfig,
};
use histobench_core::Tensor;

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn bce(p: &[f64], y: &[u8]) -> f64 {
    let n = p.len() as f64;
    p.iter()
        .zip(y)
        .map(|(&p, &y)| if y == 1 { -p.ln() } else { -(1.0 - p).ln() })
        .sum::<f64>()
        / n
}

#[test]
fn loss_gradients_match_finite_differences() {
    let logits = [-2.0, -0.3, 0.0, 0.7, 3.1];
    let labels = [0u8, 1, 1, 0, 1];
    let probs: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
    let p = Tensor::new([5, 1], probs.clone()).unwrap();
    let (loss, dprob) = bce_loss(&p, &labels).unwrap();
    assert!((loss - bce(&probs, &labels)).abs() < 1e-12);
    let dlogit = bce_logit_gradient(&p, &labels).unwrap();
    let h = 1e-6;
    for i in 0..5 {
        let bumped = |dp: f64| {
            let mut q = probs.clone();
            q[i] += dp;
            bce(&q, &labels)
        };
        let numeric = (bumped(h) - bumped(-h)) / (2.0 * h);
        assert!((dprob.data()[i] - numeric).abs() < 1e-6 * numeric.abs().max(1.0));
        let through_sigmoid = |dz: f64| {
            let mut q = probs.clone();
            q[i] = sigmoid(logits[i] + dz);
            bce(&q, &labels)
        };
        let numeric = (through_sigmoid(h) - through_sigmoid(-h)) / (2.0 * h);
        assert!((dlogit.data()[i] - numeric).abs() < 1e-8, "{i}: {} vs {numeric}", dlogit.data()[i]);
    }
}

#[test]
fn saturated_outputs_keep_a_logit_gradient() {
    let p = Tensor::new([2, 1], vec![0.0, 1.0]).unwrap();
    let (loss, _) = bce_loss(&p, &[1, 0]).unwrap();
    assert!((loss - -(1e-7f64).ln()).abs() < 1e-6);
    assert_eq!(bce_logit_gradient(&p, &[1, 0]).unwrap().data(), &[-0.5, 0.5]);
}

#[test]
fn first_adam_step_moves_by_the_learning_rate() {
    let mut x = Tensor::new([3], vec![1.0, -2.0, 0.5]).unwrap();
    let g = Tensor::new([3], vec![4.0, -0.01, 250.0]).unwrap();
    let mut state = AdamState::for_shapes([x.shape()]);
    adam_step([&mut x], &[g], &mut state, &AdamConfig::default()).unwrap();
    let expected = [1.0 - 0.001, -2.0 + 0.001, 0.5 - 0.001];
    for (a, b) in x.data().iter().zip(expected) {
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }
    assert_eq!(state.step, 1);
}

#[test]
fn adam_minimizes_a_quadratic() {
    let target = [3.0, -1.5, 0.25];
    let mut x = Tensor::zeros([3]);
    let mut state = AdamState::for_shapes([x.shape()]);
    let cfg = AdamConfig {
        learning_rate: 0.05,
        ..AdamConfig::default()
    };
    for _ in 0..2000 {
        let g: Vec<f64> = x.data().iter().zip(target).map(|(v, t)| 2.0 * (v - t)).collect();
        adam_step([&mut x], &[Tensor::new([3], g).unwrap()], &mut state, &cfg).unwrap();
    }
    for (v, t) in x.data().iter().zip(target) {
        assert!((v - t).abs() < 1e-3, "{v} vs {t}");
    }
}

#[test]
fn adam_rejects_mismatched_shapes_without_writing() {
    let mut x = Tensor::zeros([2]);
    let mut state = AdamState::for_shapes([x.shape()]);
    let err = adam_step([&mut x], &[Tensor::zeros([3])], &mut state, &AdamConfig::default());
    assert!(err.is_err());
    assert_eq!(state.step, 0);
    assert_eq!(x.data(), &[0.0, 0.0]);
}

fn tiny(n: usize, seed: u64) -> LabeledDataset {
    // 96×96 blobs, nearest-downsampled 8× to 12×12.
    let big = synth_center_blob(n, 0.05, seed).unwrap();
    let mut bytes = Vec::with_capacity(n * 3 * 144);
    for i in 0..n {
        let img = big.image_bytes(i).unwrap();
        for c in 0..3 {
            for y in 0..12 {
                for x in 0..12 {
                    bytes.push(img[c * 9216 + (y * 8 + 4) * 96 + x * 8 + 4]);
                }
            }
        }
    }
    LabeledDataset::from_bytes([3, 12, 12], bytes, big.labels().to_vec(), "tiny").unwrap()
}

#[test]
fn overfits_a_single_batch() {
    let ds = tiny(8, 1);
    let mut net = build_conv([3, 12, 12], 8, 2).unwrap();
    let cfg = TrainingConfig {
        learning_rate: 0.01,
        epochs: 150,
        patience: 150,
        batch_size: 8,
        augment: false,
        ..TrainingConfig::default()
    };
    let (history, _) = train_with(&mut net, &ds, &cfg, |net| {
        let (loss, scores) = evaluate(net, &ds, 8)?;
        Ok((loss, histobench_core::optim::accuracy(&scores, ds.labels())))
    })
    .unwrap();
    assert!(history.best_val_loss() < 0.05, "{}", history.best_val_loss());
}

#[test]
fn training_is_deterministic() {
    let ds = tiny(40, 2);
    let cfg = TrainingConfig {
        epochs: 3,
        batch_size: 8,
        seed: 9,
        ..TrainingConfig::default()
    };
    let run = || {
        let mut net = build_mlp([3, 12, 12], 16, 4).unwrap();
        let (history, _) = train(&mut net, &ds, &cfg).unwrap();
        (history, net.param_values())
    };
    assert_eq!(run(), run());
}

#[test]
fn forced_trace_stops_and_restores_best_epoch() {
    let forced = [0.5, 0.4, 0.41, 0.42, 0.43, 0.44, 0.45, 0.1];
    let ds = tiny(8, 3);
    let mut net = build_mlp([3, 12, 12], 4, 1).unwrap();
    let cfg = TrainingConfig {
        epochs: forced.len(),
        batch_size: 4,
        ..TrainingConfig::default()
    };
    let mut seen = Vec::new();
    let (history, state) = train_with(&mut net, &ds, &cfg, |net| {
        let loss = forced[seen.len()];
        seen.push(net.param_values());
        Ok((loss, 0.0))
    })
    .unwrap();
    assert_eq!(history.epochs.len(), 7);
    assert_eq!(history.stop_reason, StopReason::EarlyStopping);
    assert_eq!(history.best_epoch, 2);
    assert_eq!(history.epochs.last().unwrap().stop_reason, Some(StopReason::EarlyStopping));
    assert!(history.epochs[..6].iter().all(|r| r.stop_reason.is_none()));
    assert_eq!(net.param_values(), seen[1]);
    assert_ne!(seen[1], seen[6]);
    assert_eq!(state.best_val_loss, Some(0.4));
    assert_eq!(net.trained_epochs(), 7);
}

#[test]
fn restored_weights_reproduce_the_best_validation_loss() {
    let ds = tiny(60, 4);
    let (fit, val) = split(&ds, 0.25, 1, true).unwrap();
    let mut net = build_conv([3, 12, 12], 4, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("h.jsonl");
    let cfg = TrainingConfig {
        epochs: 6,
        patience: 2,
        batch_size: 16,
        learning_rate: 0.01,
        log_path: Some(log.clone()),
        ..TrainingConfig::default()
    };
    let (history, state) = train_split(&mut net, &fit, &val, &cfg).unwrap();
    let (loss, _) = evaluate(&net, &val, 16).unwrap();
    assert_eq!(loss, history.best_val_loss());
    assert_eq!(read_history_log(&log).unwrap(), history.epochs);

    let path = dir.path().join("m.hbck");
    save_checkpoint(&net, &state, &path).unwrap();
    let (back, back_state) = load_checkpoint(&path).unwrap();
    assert_eq!(back.param_values(), net.param_values());
    assert_eq!(back_state.best_val_loss, state.best_val_loss);
    assert_eq!(evaluate(&back, &val, 16).unwrap().0, loss);
}

#[test]
fn learns_the_downsampled_task() {
    let ds = tiny(200, 5);
    let (fit, test) = split(&ds, 0.25, 2, true).unwrap();
    let mut net = build_conv([3, 12, 12], 8, 6).unwrap();
    let cfg = TrainingConfig {
        learning_rate: 0.003,
        epochs: 40,
        batch_size: 16,
        seed: 3,
        ..TrainingConfig::default()
    };
    train(&mut net, &fit, &cfg).unwrap();
    let (_, scores) = evaluate(&net, &test, 64).unwrap();
    let acc = histobench_core::optim::accuracy(&scores, test.labels());
    assert!(acc >= 0.8, "{acc}");
}
