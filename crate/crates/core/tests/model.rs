use oscnet::activations::act_forward;
use oscnet::checks::mini_model_check;
use oscnet::nn::{build_alexnet, softmax, softmax_xent, LayerSpec, Mode, Model, ModelSpec};
use oscnet::tensor::{conv2d, matmul, maxpool2d};
use oscnet::{ActivationKind, Rng, Tape, Tensor};

#[test]
fn mini_model_gradients_every_activation() {
    for kind in ActivationKind::ALL {
        let r = mini_model_check(kind, 5).unwrap();
        assert!(r.max_rel_error <= 1e-4, "{kind}: {:?}", r.per_parameter);
    }
}

/// Apply the layers with plain tensor kernels, bypassing the tape.
fn hand_forward(model: &Model<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let spec = model.spec();
    let mut params = model.params().iter();
    let mut last_conv_or_dense = None;
    let mut h = x.clone();
    for layer in &spec.layers {
        h = match *layer {
            LayerSpec::Conv { stride, padding, .. } => {
                let w = &params.next().unwrap().value;
                let b = &params.next().unwrap().value;
                last_conv_or_dense = Some(());
                conv2d(&h, w, b, stride, padding).unwrap()
            }
            LayerSpec::MaxPool { window, stride } => maxpool2d(&h, window, stride).unwrap().0,
            LayerSpec::Flatten => {
                let n = h.dims()[0];
                let rest = h.numel() / n;
                h.reshape(&[n, rest]).unwrap()
            }
            LayerSpec::Dense { units } => {
                let w = &params.next().unwrap().value;
                let b = &params.next().unwrap().value;
                let mut y = matmul(&h, w).unwrap();
                for row in y.data_mut().chunks_mut(units) {
                    for (v, bias) in row.iter_mut().zip(b.data()) {
                        *v += bias;
                    }
                }
                y
            }
            LayerSpec::Dropout { .. } => h,
            LayerSpec::Activation { kind } => {
                assert!(last_conv_or_dense.is_some());
                let alpha = (kind == ActivationKind::Prelu).then(|| &params.next().unwrap().value);
                act_forward(kind, alpha, &h).unwrap()
            }
        };
    }
    assert!(params.next().is_none());
    h
}

#[test]
fn model_matches_hand_composed_pipeline() {
    for (conv, dense, shape) in [
        (ActivationKind::Relu, ActivationKind::Relu, [1, 28, 28]),
        (ActivationKind::Prelu, ActivationKind::Mish, [3, 32, 32]),
        (ActivationKind::Gcu, ActivationKind::Prelu, [1, 28, 28]),
    ] {
        let mut model = build_alexnet::<f64>(shape, conv, dense, 10, 9).unwrap();
        model.set_mode(Mode::Eval);
        let x = Tensor::uniform(&[2, shape[0], shape[1], shape[2]], 0.0, 1.0, &mut Rng::new(1));
        let got = model.predict(&x, &mut Rng::new(0)).unwrap();
        let want = hand_forward(&model, &x);
        assert_eq!(got.dims(), &[2, 10]);
        assert!(got.sub(&want).unwrap().max_abs() <= 1e-12, "{conv}/{dense}");
    }
}

#[test]
fn alexnet_flattened_sizes() {
    let mnist = ModelSpec::scaled_alexnet([1, 28, 28], ActivationKind::Relu, ActivationKind::Relu, 10);
    let cifar = ModelSpec::scaled_alexnet([3, 32, 32], ActivationKind::Relu, ActivationKind::Relu, 10);
    let flat = |s: &ModelSpec| {
        let shapes = s.infer_shapes().unwrap();
        let i = s.layers.iter().position(|l| *l == LayerSpec::Flatten).unwrap();
        shapes[i][0]
    };
    assert_eq!(flat(&mnist), 576);
    assert_eq!(flat(&cifar), 1024);
}

#[test]
fn softmax_xent_invariants() {
    let mut rng = Rng::new(3);
    let logits = Tensor::<f64>::uniform(&[16, 10], -20.0, 20.0, &mut rng);
    let p = softmax(&logits).unwrap();
    for row in p.data().chunks(10) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
    }
    let labels: Vec<usize> = (0..16).map(|i| i % 10).collect();
    let mut tape = Tape::new();
    let l = tape.parameter(logits);
    let (loss, _) = softmax_xent(&mut tape, l, &labels).unwrap();
    let grads = tape.backward(loss).unwrap();
    for row in grads[&l].data().chunks(10) {
        assert!(row.iter().sum::<f64>().abs() <= 1e-6);
    }
    let mut tape = Tape::new();
    let u = tape.constant(Tensor::<f64>::full(&[4, 10], 3.5));
    let (loss, _) = softmax_xent(&mut tape, u, &[0, 3, 7, 9]).unwrap();
    assert!((tape.value(loss).item().unwrap() - 10f64.ln()).abs() <= 1e-6);
}
