use txcnn::model::{
    concat_channels, cross_connect, end_to_end_check, miniature_batch, split_channels, Batch, BnPosition,
    CrossConnection, Model, ModelKind, ModelSpec, ParamReport, END_TO_END_TOLERANCE,
};
use txcnn::nn::{Conv2d, Dense, LayerNode, Mode, OptimizerConfig};
use txcnn::{SeededRng, Tensor};

fn model(kind: ModelKind, dims: (usize, usize), seed: u64) -> Model<f32> {
    let spec = ModelSpec::new(kind, 2, dims).unwrap();
    Model::build(&spec, &mut SeededRng::new(seed)).unwrap()
}

fn batch(kind: ModelKind, n: usize, dims: (usize, usize), rng: &mut SeededRng) -> Batch<f32> {
    let (h, w) = dims;
    Batch {
        image: rng.uniform(&[n, 1, h, w], 0.0, 1.0).unwrap(),
        difference: kind.is_cross().then(|| rng.normal(&[n, 1, h, w], 0.0, 0.2).unwrap()),
        timestamp: kind.uses_timestamp().then(|| {
            let weeks = (0..n).map(|i| (i % 9) as f32).collect();
            Tensor::from_vec(&[n, 1], weeks).unwrap()
        }),
    }
}

fn trainable(kind: ModelKind, dims: (usize, usize)) -> usize {
    model(kind, dims, 1).count_params().trainable
}

#[test]
fn single_layer_counts() {
    let mut rng = SeededRng::new(1);
    let dense = [LayerNode::Dense(Dense::<f32>::new(10, 5, &mut rng).unwrap())];
    assert_eq!(ParamReport::of_layers(&dense).trainable, 55);
    let conv = [LayerNode::Conv(Conv2d::<f32>::new(1, 16, 3, &mut rng).unwrap())];
    assert_eq!(ParamReport::of_layers(&conv).trainable, 160);
}

#[test]
fn timestamp_adds_exactly_64_parameters() {
    for dims in [(64, 96), (32, 32), (501, 763)] {
        assert_eq!(trainable(ModelKind::CnnTs, dims) - trainable(ModelKind::Cnn, dims), 64);
        assert_eq!(
            trainable(ModelKind::XcnnTsAbsdiff, dims) - trainable(ModelKind::XcnnAbsdiff, dims),
            64
        );
        assert_eq!(
            trainable(ModelKind::XcnnTsReldiff, dims) - trainable(ModelKind::XcnnReldiff, dims),
            64
        );
    }
}

#[test]
fn difference_modes_share_an_architecture() {
    let a = model(ModelKind::XcnnAbsdiff, (64, 96), 1).count_params();
    let r = model(ModelKind::XcnnReldiff, (64, 96), 1).count_params();
    assert_eq!(a.total(), r.total());
    assert_eq!(a.trainable, r.trainable);
}

#[test]
fn running_statistics_are_non_trainable() {
    let m = model(ModelKind::Cnn, (32, 32), 1);
    let r = m.count_params();
    let bn_channels: usize = [16, 32, 32, 32, 32, 64, 32].iter().sum();
    assert_eq!(r.non_trainable, 2 * bn_channels);
    assert_eq!(r.total(), r.trainable + r.non_trainable);
    assert_eq!(r.layers.iter().map(|l| l.trainable).sum::<usize>(), r.trainable);
}

#[test]
fn baseline_count_by_hand() {
    // 32x32 input pools down to 1x1, so the head sees 32 features.
    let convs = [(1, 16), (16, 16), (16, 32), (32, 32), (32, 32), (32, 32), (32, 32), (32, 32), (32, 32), (32, 32)];
    let conv: usize = convs.iter().map(|(i, o)| 9 * i * o + o).sum();
    let bn: usize = 2 * (16 + 32 * 4);
    let head = (32 * 64 + 64) + 2 * 64 + (64 * 32 + 32) + 2 * 32 + (32 * 2 + 2);
    assert_eq!(trainable(ModelKind::Cnn, (32, 32)), conv + bn + head);
}

#[test]
fn cross_connect_without_kernels_is_identity() {
    let mut rng = SeededRng::new(2);
    let a: Tensor<f32> = rng.normal(&[2, 3, 4, 5], 0.0, 1.0).unwrap();
    let b: Tensor<f32> = rng.normal(&[2, 4, 4, 5], 0.0, 1.0).unwrap();
    let mut conn = CrossConnection::new(3, 4, 0, &mut rng).unwrap();
    let (ma, mb) = cross_connect(&a, &b, &mut conn, Mode::Infer).unwrap();
    assert_eq!(ma, a);
    assert_eq!(mb, b);
}

#[test]
fn cross_connect_channel_arithmetic() {
    let mut rng = SeededRng::new(3);
    let a: Tensor<f32> = rng.normal(&[2, 3, 4, 5], 0.0, 1.0).unwrap();
    let b: Tensor<f32> = rng.normal(&[2, 6, 4, 5], 0.0, 1.0).unwrap();
    let mut conn = CrossConnection::new(3, 6, 2, &mut rng).unwrap();
    let (ma, mb) = cross_connect(&a, &b, &mut conn, Mode::Infer).unwrap();
    assert_eq!(ma.shape(), &[2, 5, 4, 5]);
    assert_eq!(mb.shape(), &[2, 8, 4, 5]);
    let (head, _) = split_channels(&ma, 3).unwrap();
    assert_eq!(head, a);
}

#[test]
fn cross_connect_rejects_spatial_mismatch() {
    let mut rng = SeededRng::new(3);
    let a = Tensor::<f32>::zeros(&[1, 2, 4, 4]).unwrap();
    let b = Tensor::<f32>::zeros(&[1, 2, 4, 6]).unwrap();
    let mut conn = CrossConnection::new(2, 2, 1, &mut rng).unwrap();
    assert!(cross_connect(&a, &b, &mut conn, Mode::Infer).is_err());
}

#[test]
fn copying_cross_kernel_appends_channel_zero() {
    let mut rng = SeededRng::new(4);
    let a: Tensor<f64> = rng.normal(&[2, 2, 3, 3], 0.0, 1.0).unwrap();
    let b: Tensor<f64> = rng.normal(&[2, 3, 3, 3], 0.0, 1.0).unwrap();
    let mut conn = CrossConnection::new(2, 3, 1, &mut rng).unwrap();
    let copy0 = |c_in: usize| {
        let mut w = vec![0.0; c_in];
        w[0] = 1.0;
        Conv2d::from_tensors(Tensor::from_vec(&[1, c_in, 1, 1], w).unwrap(), Tensor::zeros(&[1]).unwrap()).unwrap()
    };
    conn.b_to_a = Some(copy0(3));
    conn.a_to_b = Some(copy0(2));
    let (ma, mb) = cross_connect(&a, &b, &mut conn, Mode::Infer).unwrap();
    for n in 0..2 {
        for y in 0..3 {
            for x in 0..3 {
                assert_eq!(ma.at(&[n, 2, y, x]), b.at(&[n, 0, y, x]));
                assert_eq!(mb.at(&[n, 3, y, x]), a.at(&[n, 0, y, x]));
            }
        }
    }
}

#[test]
fn concat_then_split_round_trips() {
    let mut rng = SeededRng::new(5);
    let a: Tensor<f32> = rng.normal(&[3, 2, 2, 3], 0.0, 1.0).unwrap();
    let b: Tensor<f32> = rng.normal(&[3, 1, 2, 3], 0.0, 1.0).unwrap();
    let (x, y) = split_channels(&concat_channels(&a, &b).unwrap(), 2).unwrap();
    assert_eq!((x, y), (a, b));
}

#[test]
fn outputs_are_distributions_for_every_kind() {
    let mut rng = SeededRng::new(6);
    for kind in ModelKind::ALL {
        let mut m = model(kind, (32, 48), 7);
        let b = batch(kind, 5, (32, 48), &mut rng);
        for mode in [Mode::Train, Mode::Infer] {
            let p = m.forward(&b, mode).unwrap();
            assert_eq!(p.shape(), &[5, 2]);
            for row in p.data().chunks_exact(2) {
                let s: f64 = row.iter().map(|&v| v as f64).sum();
                assert!((s - 1.0).abs() < 1e-6, "{kind}: {s}");
            }
        }
    }
}

#[test]
fn inference_is_deterministic() {
    let mut rng = SeededRng::new(8);
    let mut m = model(ModelKind::XcnnTsAbsdiff, (32, 32), 9);
    let b = batch(ModelKind::XcnnTsAbsdiff, 4, (32, 32), &mut rng);
    let p1 = m.forward(&b, Mode::Infer).unwrap();
    let p2 = m.forward(&b, Mode::Infer).unwrap();
    assert_eq!(p1, p2);
}

#[test]
fn fresh_models_are_near_uniform_on_zero_input() {
    for seed in 0..5 {
        for kind in ModelKind::ALL {
            let mut m = model(kind, (32, 32), seed);
            let n = 4;
            let b = Batch {
                image: Tensor::zeros(&[n, 1, 32, 32]).unwrap(),
                difference: kind.is_cross().then(|| Tensor::zeros(&[n, 1, 32, 32]).unwrap()),
                timestamp: kind.uses_timestamp().then(|| Tensor::zeros(&[n, 1]).unwrap()),
            };
            let p = m.forward(&b, Mode::Infer).unwrap();
            assert!(p.data().iter().all(|&v| (v - 0.5).abs() < 0.2), "{kind} seed {seed}: {:?}", p.data());
        }
    }
}

#[test]
fn channel_checks() {
    let mut rng = SeededRng::new(10);
    let mut cnn = model(ModelKind::Cnn, (32, 32), 1);
    let with_diff = batch(ModelKind::XcnnAbsdiff, 2, (32, 32), &mut rng);
    assert!(cnn.forward(&with_diff, Mode::Infer).is_err());
    let mut x = model(ModelKind::XcnnAbsdiff, (32, 32), 1);
    let plain = batch(ModelKind::Cnn, 2, (32, 32), &mut rng);
    assert!(x.forward(&plain, Mode::Infer).is_err());
    let mut ts = model(ModelKind::CnnTs, (32, 32), 1);
    assert!(ts.forward(&plain, Mode::Infer).is_err());
    let wrong_dims = batch(ModelKind::Cnn, 2, (32, 40), &mut rng);
    assert!(cnn.forward(&wrong_dims, Mode::Infer).is_err());
    assert!(cnn.backward_and_step(&plain, &[0], &OptimizerConfig::default()).is_err());
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let mut rng = SeededRng::new(11);
    let mut m = model(ModelKind::XcnnTsReldiff, (32, 32), 12);
    m.freeze_dropout(true);
    let b = batch(ModelKind::XcnnTsReldiff, 6, (32, 32), &mut rng);
    let labels = [0, 1, 0, 1, 1, 0];
    let cfg = OptimizerConfig {
        learning_rate: 0.0,
        ..Default::default()
    };
    let before: Vec<Tensor<f32>> = m.params().iter().map(|p| p.value.clone()).collect();
    let l1 = m.backward_and_step(&b, &labels, &cfg).unwrap();
    let l2 = m.backward_and_step(&b, &labels, &cfg).unwrap();
    let l3 = m.backward_and_step(&b, &labels, &cfg).unwrap();
    assert_eq!(l1, l2);
    assert_eq!(l2, l3);
    let after: Vec<Tensor<f32>> = m.params().iter().map(|p| p.value.clone()).collect();
    assert_eq!(before, after);
}

#[test]
fn memorizes_a_fixed_batch() {
    let mut rng = SeededRng::new(13);
    let spec = ModelSpec::new(ModelKind::Cnn, 2, (32, 32)).unwrap().with_dropout(0.0);
    let mut m: Model<f32> = Model::build(&spec, &mut rng).unwrap();
    let b = batch(ModelKind::Cnn, 32, (32, 32), &mut rng);
    let labels: Vec<usize> = (0..32).map(|_| rng.below(2)).collect();
    let cfg = OptimizerConfig::default();
    let mut last = f64::INFINITY;
    for step in 0..500 {
        last = m.backward_and_step(&b, &labels, &cfg).unwrap();
        if last < 0.01 {
            eprintln!("memorized after {step} steps");
            break;
        }
    }
    assert!(last < 0.01, "loss {last}");
}

#[test]
fn dropping_a_zeroed_timestamp_reproduces_the_plain_model() {
    let mut rng = SeededRng::new(14);
    for kind in [ModelKind::CnnTs, ModelKind::XcnnTsAbsdiff, ModelKind::XcnnTsReldiff] {
        let mut ts = model(kind, (32, 64), 15);
        let LayerNode::Dense(d) = &mut ts.head[0] else { panic!() };
        let (f_in, f_out) = (d.f_in(), d.f_out());
        for v in &mut d.weight.value.data_mut()[(f_in - 1) * f_out..] {
            *v = 0.0;
        }
        let mut plain = ts.without_timestamp().unwrap();
        assert_eq!(plain.spec().kind, kind.without_timestamp());
        assert_eq!(ts.count_params().trainable - plain.count_params().trainable, 64);
        let b = batch(kind, 4, (32, 64), &mut rng);
        let b_plain = Batch {
            timestamp: None,
            ..b.clone()
        };
        let p_ts = ts.forward(&b, Mode::Infer).unwrap();
        let p_plain = plain.forward(&b_plain, Mode::Infer).unwrap();
        assert_eq!(p_ts, p_plain, "{kind}");
    }
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    for kind in ModelKind::ALL {
        let report = end_to_end_check(kind, 21).unwrap();
        eprintln!("{kind}: max relative error {:.2e}", report.max_relative_error());
        for e in &report.entries {
            assert!(e.relative_error < END_TO_END_TOLERANCE, "{kind} {}: {}", e.tensor, e.relative_error);
        }
    }
}

#[test]
fn batch_norm_after_cross_builds_and_trains() {
    let mut rng = SeededRng::new(16);
    let mut spec = ModelSpec::miniature(ModelKind::XcnnAbsdiff, 2);
    spec.bn_position = BnPosition::AfterCross;
    let mut m: Model<f64> = Model::build(&spec, &mut rng).unwrap();
    let b = miniature_batch(ModelKind::XcnnAbsdiff, 4, &mut rng).unwrap();
    let loss = m.backward_and_step(&b, &[0, 1, 1, 0], &OptimizerConfig::default()).unwrap();
    assert!(loss.is_finite());
    let before = ModelSpec::miniature(ModelKind::XcnnAbsdiff, 2);
    let other: Model<f64> = Model::build(&before, &mut rng).unwrap();
    // batch norm now covers the appended cross channels as well
    assert!(m.count_params().trainable > other.count_params().trainable);
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.xmid");
    let mut rng = SeededRng::new(17);
    let mut m = model(ModelKind::XcnnTsAbsdiff, (32, 32), 18);
    let b = batch(ModelKind::XcnnTsAbsdiff, 4, (32, 32), &mut rng);
    m.backward_and_step(&b, &[0, 1, 0, 1], &OptimizerConfig::default()).unwrap();
    m.save(&path).unwrap();
    let mut loaded: Model<f32> = Model::load(&path).unwrap();
    assert_eq!(loaded.spec(), m.spec());
    assert_eq!(loaded.forward(&b, Mode::Infer).unwrap(), m.forward(&b, Mode::Infer).unwrap());
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"XMID");
    assert!(Model::<f32>::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'Y';
    assert!(Model::<f32>::from_bytes(&bad).is_err());
}
