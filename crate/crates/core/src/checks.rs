//! Gradient-check suites shared by the `gradcheck` command and the test
//! targets.

use serde::Serialize;

use crate::activations::{act_derivative, act_forward, ActivationKind, PRELU_INIT_ALPHA};
use crate::autodiff::{grad_check, grad_check_many, DEFAULT_GRAD_CHECK_EPS};
use crate::error::Result;
use crate::nn::{self, LayerSpec, Model, ModelSpec};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const ORACLE_POINTS: usize = 1000;
pub const ORACLE_RANGE: f64 = 5.0;
pub const KINK_EXCLUSION: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ActivationCheck {
    pub kind: ActivationKind,
    pub points: usize,
    /// `act_derivative` against central differences of `act_forward`.
    pub derivative_rel_error: f64,
    /// Tape gradient of `sum(activation(z))` against central differences.
    pub tape_rel_error: f64,
}

impl ActivationCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.derivative_rel_error.max(self.tape_rel_error)
    }
}

/// `points` seeded samples from `[-range, range]`, skipping the ReLU/PReLU
/// kink neighbourhood for those kinds.
pub fn oracle_points(kind: ActivationKind, points: usize, seed: u64) -> Vec<f64> {
    let mut rng = Rng::new(seed);
    let kinked = matches!(kind, ActivationKind::Relu | ActivationKind::Prelu);
    let mut out = Vec::with_capacity(points);
    while out.len() < points {
        let z = rng.uniform(-ORACLE_RANGE, ORACLE_RANGE);
        if !(kinked && z.abs() < KINK_EXCLUSION) {
            out.push(z);
        }
    }
    out
}

/// Compare the analytic derivative of `kind` with central differences at
/// [`ORACLE_POINTS`] seeded points, in 64-bit, PReLU at slope `0.25`.
pub fn activation_oracle(kind: ActivationKind, seed: u64, eps: f64) -> Result<ActivationCheck> {
    let zs = oracle_points(kind, ORACLE_POINTS, seed);
    let z = Tensor::from_vec(&[zs.len()], zs)?;
    let alpha = Tensor::from_vec(&[1], vec![PRELU_INIT_ALPHA])?;
    let a = (kind == ActivationKind::Prelu).then_some(&alpha);

    let analytic = act_derivative(kind, a, &z)?;
    let plus = act_forward(kind, a, &z.map(|v| v + eps))?;
    let minus = act_forward(kind, a, &z.map(|v| v - eps))?;
    let derivative_rel_error = analytic
        .data()
        .iter()
        .zip(plus.data().iter().zip(minus.data()))
        .map(|(&d, (&p, &m))| {
            let numeric = (p - m) / (2.0 * eps);
            (d - numeric).abs() / numeric.abs().max(1.0)
        })
        .fold(0.0, f64::max);

    let tape_rel_error = grad_check(
        |tape, x| {
            let slope = match kind {
                ActivationKind::Prelu => Some(tape.constant(alpha.clone())),
                _ => None,
            };
            let y = tape.activation(kind, x, slope)?;
            tape.sum(y)
        },
        &z,
        eps,
    )?;
    Ok(ActivationCheck {
        kind,
        points: z.numel(),
        derivative_rel_error,
        tape_rel_error,
    })
}

/// A two-conv network on `[2, 8, 8]` inputs with `kind` after each conv.
pub fn mini_model_spec(kind: ActivationKind) -> ModelSpec {
    let conv = LayerSpec::Conv {
        out_channels: 4,
        kernel: 3,
        stride: 1,
        padding: 1,
    };
    let act = LayerSpec::Activation { kind };
    let pool = LayerSpec::MaxPool { window: 2, stride: 2 };
    ModelSpec {
        input_shape: [2, 8, 8],
        layers: vec![conv, act, pool, conv, act, pool, LayerSpec::Flatten, LayerSpec::Dense { units: 3 }],
        conv_activation: kind,
        dense_activation: ActivationKind::Relu,
        num_classes: 3,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelCheck {
    pub kind: ActivationKind,
    pub max_rel_error: f64,
    /// `(parameter name, max relative error)` in parameter order.
    pub per_parameter: Vec<(String, f64)>,
}

/// Finite-difference check of the softmax cross-entropy loss of
/// [`mini_model_spec`] against every parameter, in 64-bit.
pub fn mini_model_check(kind: ActivationKind, seed: u64) -> Result<ModelCheck> {
    let model = Model::<f64>::build(mini_model_spec(kind), seed)?;
    let mut rng = Rng::derive(seed, 7);
    let x = Tensor::uniform(&[3, 2, 8, 8], -1.0, 1.0, &mut rng);
    let labels = vec![0, 2, 1];
    let mut inputs: Vec<Tensor<f64>> = model.params().iter().map(|p| p.value.clone()).collect();
    // Nudge the zero-initialized biases so they are exercised off zero too.
    for v in inputs.iter_mut() {
        if v.data().iter().all(|&b| b == 0.0) {
            *v = Tensor::uniform(v.dims(), -0.1, 0.1, &mut rng);
        }
    }
    let report = grad_check_many(
        |tape, ids| {
            let logits = model.forward_with(tape, ids, &x, &mut Rng::new(0))?;
            Ok(nn::softmax_xent(tape, logits, &labels)?.0)
        },
        &inputs,
        DEFAULT_GRAD_CHECK_EPS,
    )?;
    Ok(ModelCheck {
        kind,
        max_rel_error: report.max_rel_error,
        per_parameter: model
            .params()
            .iter()
            .map(|p| p.name.clone())
            .zip(report.per_input)
            .collect(),
    })
}
