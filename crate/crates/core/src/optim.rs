//! SGD with momentum and Adam.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerConfig {
    Sgd { lr: f64, momentum: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerConfig {
    pub const SGD_DEFAULT: Self = Self::Sgd {
        lr: 0.01,
        momentum: 0.9,
    };
    pub const ADAM_DEFAULT: Self = Self::Adam {
        lr: 1e-3,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };

    pub fn name(&self) -> &'static str {
        match self {
            Self::Sgd { .. } => "sgd",
            Self::Adam { .. } => "adam",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Sgd { lr, momentum } => lr > 0.0 && (0.0..1.0).contains(&momentum),
            Self::Adam { lr, beta1, beta2, eps } => {
                lr > 0.0 && (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid optimizer hyperparameters {self:?}")))
        }
    }
}

/// Per-parameter moment buffers plus the Adam step counter.
#[derive(Debug, Clone)]
pub struct OptimizerState<T> {
    config: OptimizerConfig,
    /// SGD velocity, or Adam first moment.
    first: Vec<Tensor<T>>,
    /// Adam second moment; empty for SGD.
    second: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Element> OptimizerState<T> {
    pub fn new(config: OptimizerConfig, shapes: &[&[usize]]) -> Result<Self> {
        config.validate()?;
        let zeros = || shapes.iter().map(|s| Tensor::zeros(s)).collect::<Vec<_>>();
        let second = match config {
            OptimizerConfig::Adam { .. } => zeros(),
            OptimizerConfig::Sgd { .. } => Vec::new(),
        };
        Ok(Self {
            config,
            first: zeros(),
            second,
            step: 0,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Apply one update to `params` in place.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters, {} gradients, {} optimizer slots",
                params.len(),
                grads.len(),
                self.first.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            p.expect_same_shape(g, "optimizer step")?;
            p.expect_same_shape(&self.first[i], "optimizer slot")?;
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(i));
            }
        }
        match self.config {
            OptimizerConfig::Sgd { lr, momentum } => {
                let (lr, mu) = (T::from_f64(lr), T::from_f64(momentum));
                for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.first) {
                    sgd_update(p.data_mut(), g.data(), v.data_mut(), lr, mu);
                }
            }
            OptimizerConfig::Adam { lr, beta1, beta2, eps } => {
                self.step += 1;
                let t = self.step as i32;
                let c = AdamCoefficients {
                    lr: T::from_f64(lr),
                    beta1: T::from_f64(beta1),
                    beta2: T::from_f64(beta2),
                    eps: T::from_f64(eps),
                    bias1: T::from_f64(1.0 - beta1.powi(t)),
                    bias2: T::from_f64(1.0 - beta2.powi(t)),
                };
                for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
                    adam_update(p.data_mut(), g.data(), m.data_mut(), v.data_mut(), &c);
                }
            }
        }
        Ok(())
    }
}

/// `v ← μ·v + g; p ← p − lr·v`
fn sgd_update<T: Element>(p: &mut [T], g: &[T], v: &mut [T], lr: T, mu: T) {
    for ((p, &g), v) in p.iter_mut().zip(g).zip(v) {
        *v = mu * *v + g;
        *p = *p - lr * *v;
    }
}

struct AdamCoefficients<T> {
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
    bias1: T,
    bias2: T,
}

fn adam_update<T: Element>(p: &mut [T], g: &[T], m: &mut [T], v: &mut [T], c: &AdamCoefficients<T>) {
    let one = T::one();
    for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m).zip(v) {
        *m = c.beta1 * *m + (one - c.beta1) * g;
        *v = c.beta2 * *v + (one - c.beta2) * g * g;
        let m_hat = *m / c.bias1;
        let v_hat = *v / c.bias2;
        *p = *p - c.lr * m_hat / (v_hat.sqrt() + c.eps);
    }
}

/// One SGD step on a fresh or existing state; convenience wrapper over
/// [`OptimizerState::step`].
pub fn sgd_step<T: Element>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut OptimizerState<T>,
) -> Result<()> {
    if !matches!(state.config, OptimizerConfig::Sgd { .. }) {
        return Err(Error::InvalidConfig("sgd_step on a non-SGD state".into()));
    }
    state.step(params, grads)
}

pub fn adam_step<T: Element>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut OptimizerState<T>,
) -> Result<()> {
    if !matches!(state.config, OptimizerConfig::Adam { .. }) {
        return Err(Error::InvalidConfig("adam_step on a non-Adam state".into()));
    }
    state.step(params, grads)
}

/// Rescale `grads` so their joint L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_grad_norm<T: Element>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = T::from_f64(max_norm / norm);
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v = *v * s;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor<f64> {
        Tensor::from_vec(&[1], vec![v]).unwrap()
    }

    fn run(config: OptimizerConfig, p0: f64, grads: &[f64]) -> Vec<f64> {
        let mut p = scalar(p0);
        let mut state = OptimizerState::new(config, &[&[1]]).unwrap();
        grads
            .iter()
            .map(|&g| {
                state.step(&mut [&mut p], &[scalar(g)]).unwrap();
                p.data()[0]
            })
            .collect()
    }

    #[test]
    fn sgd_examples() {
        let plain = OptimizerConfig::Sgd { lr: 0.1, momentum: 0.0 };
        assert!((run(plain, 1.0, &[2.0])[0] - 0.8).abs() < 1e-15);
        assert_eq!(run(plain, 1.0, &[0.0, 0.0]), vec![1.0, 1.0]);
        let heavy = OptimizerConfig::Sgd { lr: 1.0, momentum: 0.9 };
        // v1 = 1, p1 = -1; v2 = 1.9, p2 = -2.9
        let traj = run(heavy, 0.0, &[1.0, 1.0]);
        assert_eq!(traj[0], -1.0);
        assert!((traj[1] + 2.9).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_about_lr() {
        for g in [1e-3, 0.5, 7.0, -3.0] {
            let p = run(OptimizerConfig::ADAM_DEFAULT, 0.0, &[g])[0];
            assert!((0.999e-3..=1.0e-3).contains(&p.abs()), "g={g} step={p}");
            assert_eq!(p.signum(), -g.signum());
        }
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point() {
        assert_eq!(run(OptimizerConfig::ADAM_DEFAULT, 2.5, &[0.0, 0.0, 0.0]), vec![2.5; 3]);
    }

    #[test]
    fn adam_matches_scalar_unroll() {
        // Independent unroll of the textbook recurrence.
        let (lr, b1, b2, eps) = (1e-3f64, 0.9f64, 0.999f64, 1e-8f64);
        let (mut p, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        let mut expected = Vec::new();
        for t in 1..=3 {
            let g = 1.0;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            p -= lr * mh / (vh.sqrt() + eps);
            expected.push(p);
        }
        let got = run(OptimizerConfig::ADAM_DEFAULT, 0.0, &[1.0; 3]);
        for (a, b) in got.iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut state = OptimizerState::<f64>::new(OptimizerConfig::ADAM_DEFAULT, &[&[2]]).unwrap();
        let mut p = Tensor::zeros(&[2]);
        assert!(matches!(
            state.step(&mut [&mut p], &[Tensor::zeros(&[3])]),
            Err(Error::ShapeMismatch(_))
        ));
        let bad = Tensor::from_vec(&[2], vec![0.0, f64::NAN]).unwrap();
        assert!(matches!(state.step(&mut [&mut p], &[bad]), Err(Error::NonFiniteGradient(0))));
        assert!(OptimizerState::<f64>::new(OptimizerConfig::Sgd { lr: -1.0, momentum: 0.0 }, &[]).is_err());
        assert!(sgd_step(&mut [&mut p], &[Tensor::zeros(&[2])], &mut state).is_err());
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g = vec![Tensor::from_vec(&[2], vec![3.0f64, 4.0]).unwrap()];
        assert_eq!(clip_grad_norm(&mut g, 5.0), 5.0);
        assert_eq!(g[0].data(), &[3.0, 4.0]);
        clip_grad_norm(&mut g, 1.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-15);
    }
}
