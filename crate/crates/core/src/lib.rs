//! A small CPU-only neural-network stack: tensors, tape-based reverse-mode
//! autodiff, convolutional layers, SGD/Adam, MNIST and CIFAR-10 loaders, and
//! a benchmark harness comparing ReLU, PReLU, Mish and GCU activations.

pub mod activations;
pub mod autodiff;
pub mod bench;
pub mod checks;
pub mod cli;
pub mod data;
pub mod error;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use activations::ActivationKind;
pub use autodiff::{NodeId, Tape};
pub use bench::{ExperimentConfig, RunRecord};
pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{Shape, Tensor};
