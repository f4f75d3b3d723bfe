use gapfill_tensor::{
    gelu, read_checkpoint, softmax, write_checkpoint, AdamConfig, AdamState, CheckpointHeader,
    EngineError, ParamStore, RunningStats, Tape, Tensor,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn t2(rows: &[&[f64]]) -> Tensor {
    Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

#[test]
fn matmul_identity_and_hand_case() {
    let eye = t2(&[&[1.0, 0.0], &[0.0, 1.0]]);
    let a = t2(&[&[1.0, 2.0], &[3.0, 4.0]]);
    assert_eq!(eye.matmul(&a).unwrap(), a);

    let mut tape = Tape::new();
    let x = tape.constant(t2(&[&[1.0, 2.0]]));
    let y = tape.constant(t2(&[&[3.0], &[4.0]]));
    let z = tape.matmul(x, y).unwrap();
    assert_eq!(tape.value(z).data(), &[11.0]);
    assert_eq!(tape.shape(z), &[1, 1]);
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = Tensor::randn(&[5, 7], 1.0, &mut rng);
    let b = Tensor::randn(&[7, 3], 1.0, &mut rng);
    let c = a.matmul(&b).unwrap();
    for i in 0..5 {
        for j in 0..3 {
            let mut acc = 0.0;
            for k in 0..7 {
                acc += a.at2(i, k) * b.at2(k, j);
            }
            assert!((c.at2(i, j) - acc).abs() < 1e-12);
        }
    }
}

#[test]
fn matmul_shape_mismatch() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    assert!(matches!(tape.matmul(a, b), Err(EngineError::Shape { .. })));
}

#[test]
fn softmax_examples() {
    let s = softmax(&Tensor::new(vec![3], vec![0.0; 3]).unwrap(), 0).unwrap();
    for v in s.data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let s = softmax(&Tensor::new(vec![2], vec![1000.0, 0.0]).unwrap(), 0).unwrap();
    assert!(s.is_finite());
    assert!((s.data()[0] - 1.0).abs() < 1e-15 && s.data()[1] < 1e-300);

    // Direct exp-normalisation without max shift as an independent route.
    let xs = [1.0f64, 2.0, 3.0];
    let denom: f64 = xs.iter().map(|x| x.exp()).sum();
    let s = softmax(&Tensor::new(vec![3], xs.to_vec()).unwrap(), 0).unwrap();
    for (v, x) in s.data().iter().zip(xs) {
        assert!((v - x.exp() / denom).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn softmax_rows_normalised_and_shift_invariant(
        row in prop::collection::vec(-50.0f64..50.0, 1..12),
        shift in -100.0f64..100.0,
    ) {
        let n = row.len();
        let x = Tensor::new(vec![1, n], row.clone()).unwrap();
        let s = softmax(&x, 1).unwrap();
        let total: f64 = s.data().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(s.data().iter().all(|&v| v >= 0.0));
        let shifted = Tensor::new(vec![1, n], row.iter().map(|v| v + shift).collect()).unwrap();
        let s2 = softmax(&shifted, 1).unwrap();
        for (a, b) in s.data().iter().zip(s2.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}

/// erf by its Maclaurin series; converges quickly for |x| < 2.
fn erf_series(x: f64) -> f64 {
    let mut term = x;
    let mut sum = x;
    for n in 1..80 {
        term *= -x * x / n as f64;
        sum += term / (2 * n + 1) as f64;
    }
    sum * 2.0 / std::f64::consts::PI.sqrt()
}

#[test]
fn gelu_examples() {
    assert_eq!(gelu(0.0), 0.0);
    assert!((gelu(30.0) - 30.0).abs() < 1e-12);
    assert!(gelu(-30.0).abs() < 1e-12);
    let oracle = 0.5 * (1.0 + erf_series(1.0 / 2f64.sqrt()));
    assert!((gelu(1.0) - oracle).abs() < 1e-9);
    assert!((gelu(1.0) - 0.841_344_746_068_542_9).abs() < 1e-9);
}

#[test]
fn batch_norm_training_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::randn(&[8, 4], 10.0, &mut rng);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let g = tape.constant(Tensor::full(&[4], 1.0));
    let b = tape.constant(Tensor::zeros(&[4]));
    let mut rs = RunningStats::new(4);
    let y = tape.batch_norm(xv, g, b, &mut rs, true).unwrap();
    let out = tape.value(y);
    for j in 0..4 {
        let col: Vec<f64> = (0..8).map(|i| out.at2(i, j)).collect();
        let mean = col.iter().sum::<f64>() / 8.0;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-6);

        // Two-pass oracle.
        let xcol: Vec<f64> = (0..8).map(|i| x.at2(i, j)).collect();
        let m = xcol.iter().sum::<f64>() / 8.0;
        let v = xcol.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 8.0;
        for i in 0..8 {
            let expect = (xcol[i] - m) / (v + 1e-5).sqrt();
            assert!((out.at2(i, j) - expect).abs() < 1e-10);
        }
        // Running stats moved 10% of the way from (0, 1).
        assert!((rs.mean[j] - 0.1 * m).abs() < 1e-12);
        assert!((rs.var[j] - (0.9 + 0.1 * v * 8.0 / 7.0)).abs() < 1e-12);
    }
}

#[test]
fn batch_norm_constant_column_and_errors() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::full(&[5, 2], 4.2));
    let g = tape.constant(Tensor::full(&[2], 2.0));
    let b = tape.constant(Tensor::new(vec![2], vec![0.5, -1.0]).unwrap());
    let mut rs = RunningStats::new(2);
    let y = tape.batch_norm(x, g, b, &mut rs, true).unwrap();
    for i in 0..5 {
        assert!((tape.value(y).at2(i, 0) - 0.5).abs() < 1e-12);
        assert!((tape.value(y).at2(i, 1) + 1.0).abs() < 1e-12);
    }
    let one = tape.constant(Tensor::zeros(&[1, 2]));
    assert!(tape.batch_norm(one, g, b, &mut rs, true).is_err());
    assert!(tape.batch_norm(one, g, b, &mut rs, false).is_ok());
}

#[test]
fn backward_linear_and_quadratic() {
    let mut tape = Tape::new();
    let w = tape.leaf(Tensor::new(vec![3], vec![0.3, -1.0, 2.0]).unwrap(), true);
    let s = tape.sum(w).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(w).unwrap().data(), &[1.0, 1.0, 1.0]);

    let mut tape = Tape::new();
    let w = tape.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap(), true);
    let sq = tape.mul(w, w).unwrap();
    let s = tape.sum(sq).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(w).unwrap().data(), &[2.0, 4.0]);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::new();
    let w = tape.leaf(Tensor::zeros(&[2]), true);
    let y = tape.scale(w, 2.0).unwrap();
    assert!(matches!(tape.backward(y), Err(EngineError::NotScalar(_))));
}

#[test]
fn shared_param_accumulates() {
    let mut store = ParamStore::new();
    let id = store.add("w", Tensor::new(vec![2], vec![1.0, 3.0]).unwrap()).unwrap();
    let mut tape = Tape::new();
    let a = tape.param(&store, id);
    let b = tape.param(&store, id);
    let y = tape.mul(a, b).unwrap();
    let s = tape.sum(y).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.param(id).unwrap().data(), &[2.0, 6.0]);
}

#[test]
fn adam_zero_gradient_is_noop() {
    let mut params = vec![Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap()];
    let before = params.clone();
    let mut adam = AdamState::new(AdamConfig::default(), &params);
    adam.update(&mut params, &[Tensor::zeros(&[3])]).unwrap();
    assert_eq!(params, before);
    assert_eq!(adam.step_count(), 1);
}

#[test]
fn adam_first_step_moves_by_lr() {
    let mut params = vec![Tensor::scalar(0.0)];
    let mut adam = AdamState::new(AdamConfig::default(), &params);
    adam.update(&mut params, &[Tensor::scalar(1.0)]).unwrap();
    assert!((params[0].item() + 1e-3).abs() < 1e-10);
}

#[test]
fn adam_trajectory_matches_scripted_oracle() {
    // f(w) = w^2, grad 2w, ten steps with lr 0.1.
    let lr = 0.1;
    let cfg = AdamConfig {
        learning_rate: lr,
        ..AdamConfig::default()
    };
    let mut params = vec![Tensor::scalar(1.5)];
    let mut adam = AdamState::new(cfg, &params);

    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
    let (mut w, mut m, mut v) = (1.5f64, 0.0f64, 0.0f64);
    for t in 1..=10 {
        let g = 2.0 * w;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t));
        let vh = v / (1.0 - b2.powi(t));
        w -= lr * mh / (vh.sqrt() + eps);

        let grad = Tensor::scalar(2.0 * params[0].item());
        adam.update(&mut params, &[grad]).unwrap();
        assert!((params[0].item() - w).abs() < 1e-10, "step {t}");
    }
}

#[test]
fn adam_shape_mismatch() {
    let mut params = vec![Tensor::zeros(&[2])];
    let mut adam = AdamState::new(AdamConfig::default(), &params);
    assert!(adam.update(&mut params, &[Tensor::zeros(&[3])]).is_err());
}

#[test]
fn dropout_eval_identity_and_unbiased_in_training() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::full(&[20_000], 1.0));
    let same = tape.dropout(x, 0.4, false, &mut rng).unwrap();
    assert_eq!(same, x);

    let y = tape.dropout(x, 0.4, true, &mut rng).unwrap();
    let vals = tape.value(y).data();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    // Each output is 0 or 1/0.6; per-sample variance p/(1-p).
    let sigma = (0.4f64 / 0.6 / n).sqrt();
    assert!((mean - 1.0).abs() < 3.0 * sigma, "mean {mean}");
    assert!(tape.dropout(x, 1.0, true, &mut rng).is_err());
}

#[test]
fn structural_ops_values() {
    let mut tape = Tape::new();
    let a = tape.constant(t2(&[&[1.0, 2.0], &[3.0, 4.0]]));
    let b = tape.constant(t2(&[&[5.0], &[6.0]]));
    let c = tape.concat(&[a, b], 1).unwrap();
    assert_eq!(tape.value(c).data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
    let s = tape.slice(c, 1, 1, 2).unwrap();
    assert_eq!(tape.value(s).data(), &[2.0, 5.0, 4.0, 6.0]);
    let t = tape.transpose(a).unwrap();
    assert_eq!(tape.value(t).data(), &[1.0, 3.0, 2.0, 4.0]);
    let g = tape.gather_rows(a, &[1, 1, 0]).unwrap();
    assert_eq!(tape.value(g).data(), &[3.0, 4.0, 3.0, 4.0, 1.0, 2.0]);
    let m = tape.mean_axis(a, 0).unwrap();
    assert_eq!(tape.value(m).data(), &[2.0, 3.0]);
    let r = tape.reshape(a, &[4]).unwrap();
    assert_eq!(tape.shape(r), &[4]);
    assert!(tape.reshape(a, &[3]).is_err());
}

#[test]
fn layer_norm_rows_standardised() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::randn(&[3, 16], 4.0, &mut rng));
    let g = tape.constant(Tensor::full(&[16], 1.0));
    let b = tape.constant(Tensor::zeros(&[16]));
    let y = tape.layer_norm(x, g, b).unwrap();
    for r in 0..3 {
        let row: Vec<f64> = (0..16).map(|j| tape.value(y).at2(r, j)).collect();
        let mean = row.iter().sum::<f64>() / 16.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
        assert!(mean.abs() < 1e-9);
        assert!((var - 1.0).abs() < 1e-5);
    }
}

#[test]
fn checked_mode_rejects_non_finite() {
    let mut tape = Tape::new();
    tape.set_checked(true);
    let x = tape.constant(Tensor::full(&[2], 1e300));
    assert!(matches!(
        tape.scale(x, 1e300),
        Err(EngineError::NonFinite { op: "scale" })
    ));
}

fn train_tiny(seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let w = store.add("w", Tensor::randn(&[3, 2], 0.5, &mut rng)).unwrap();
    let b = store.add("b", Tensor::zeros(&[2])).unwrap();
    let mut adam = AdamState::for_store(AdamConfig::default(), &store);
    let x = Tensor::randn(&[6, 3], 1.0, &mut rng);
    let target = Tensor::randn(&[6, 2], 1.0, &mut rng);
    for _ in 0..50 {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let wv = tape.param(&store, w);
        let bv = tape.param(&store, b);
        let h = tape.matmul(xv, wv).unwrap();
        let h = tape.add_broadcast(h, bv).unwrap();
        let h = tape.dropout(h, 0.2, true, &mut rng).unwrap();
        let t = tape.constant(target.clone());
        let d = tape.sub(h, t).unwrap();
        let sq = tape.mul(d, d).unwrap();
        let loss = tape.mean(sq).unwrap();
        let g = tape.backward(loss).unwrap();
        adam.step(&mut store, &g).unwrap();
    }
    store
}

#[test]
fn identical_seed_identical_trajectory() {
    let a = train_tiny(42);
    let b = train_tiny(42);
    for (x, y) in a.tensors().iter().zip(b.tensors()) {
        let bx: Vec<u64> = x.data().iter().map(|v| v.to_bits()).collect();
        let by: Vec<u64> = y.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bx, by);
    }
    assert_ne!(a, train_tiny(43));
}

#[test]
fn checkpoint_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::new();
    store.add("enc.w", Tensor::randn(&[4, 3], 1.0, &mut rng)).unwrap();
    store.add("enc.b", Tensor::randn(&[3], 1.0, &mut rng)).unwrap();
    store.add("scalar", Tensor::scalar(rng.random())).unwrap();
    let config = serde_json::json!({"d_model": 16, "heads": 4});
    let header = CheckpointHeader::new(&config, serde_json::json!({"note": "x"}));
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &header, &store).unwrap();
    let (h2, s2) = read_checkpoint(&mut buf.as_slice()).unwrap();
    assert_eq!(h2, header);
    assert_eq!(s2, store);
    assert_eq!(h2.config_hash.len(), 64);

    let other = CheckpointHeader::new(&serde_json::json!({"d_model": 32, "heads": 4}), serde_json::Value::Null);
    assert_ne!(other.config_hash, header.config_hash);

    buf[0] = b'X';
    assert!(matches!(read_checkpoint(&mut buf.as_slice()), Err(EngineError::Format(_))));
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.ckpt");
    let mut store = ParamStore::new();
    store.add("w", Tensor::new(vec![2], vec![f64::MIN_POSITIVE, -0.0]).unwrap()).unwrap();
    let header = CheckpointHeader::new(&serde_json::json!({}), serde_json::Value::Null);
    gapfill_tensor::save_checkpoint(&path, &header, &store).unwrap();
    let (_, loaded) = gapfill_tensor::load_checkpoint(&path).unwrap();
    assert_eq!(loaded.get(loaded.id_of("w").unwrap()).data()[1].to_bits(), (-0.0f64).to_bits());
}
