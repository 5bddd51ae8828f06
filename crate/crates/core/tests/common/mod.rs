#![allow(dead_code)]

use std::path::{Path, PathBuf};

use oscnet::data::{encode_cifar, encode_idx_images, encode_idx_labels, Dataset};
use oscnet::{Rng, Tensor};

/// Direct nested-loop cross-correlation with zero padding.
pub fn conv2d_reference(
    x: &Tensor<f64>,
    k: &Tensor<f64>,
    b: &Tensor<f64>,
    stride: usize,
    padding: usize,
) -> Tensor<f64> {
    let &[n, c, h, w] = x.dims() else { panic!("input rank") };
    let &[co, _, kh, kw] = k.dims() else { panic!("kernel rank") };
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (w + 2 * padding - kw) / stride + 1;
    let xd = x.data();
    let kd = k.data();
    let mut out = vec![0.0; n * co * oh * ow];
    for ni in 0..n {
        for o in 0..co {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for u in 0..kh {
                            for v in 0..kw {
                                let y = (i * stride + u) as isize - padding as isize;
                                let z = (j * stride + v) as isize - padding as isize;
                                if y < 0 || z < 0 || y >= h as isize || z >= w as isize {
                                    continue;
                                }
                                let xi = ((ni * c + ci) * h + y as usize) * w + z as usize;
                                let ki = ((o * c + ci) * kh + u) * kw + v;
                                acc += xd[xi] * kd[ki];
                            }
                        }
                    }
                    out[((ni * co + o) * oh + i) * ow + j] = acc + b.data()[o];
                }
            }
        }
    }
    Tensor::from_vec(&[n, co, oh, ow], out).unwrap()
}

/// A random conv instance whose geometry divides exactly.
pub struct ConvCase {
    pub x: Tensor<f64>,
    pub k: Tensor<f64>,
    pub b: Tensor<f64>,
    pub stride: usize,
    pub padding: usize,
}

pub fn random_conv_case(rng: &mut Rng) -> ConvCase {
    loop {
        let n = 1 + rng.below(2);
        let c = 1 + rng.below(3);
        let co = 1 + rng.below(4);
        let kh = 1 + rng.below(3);
        let kw = 1 + rng.below(3);
        let h = kh + rng.below(6);
        let w = kw + rng.below(6);
        let stride = 1 + rng.below(2);
        let padding = rng.below(2);
        if (h + 2 * padding - kh) % stride != 0 || (w + 2 * padding - kw) % stride != 0 {
            continue;
        }
        return ConvCase {
            x: Tensor::uniform(&[n, c, h, w], -1.0, 1.0, rng),
            k: Tensor::uniform(&[co, c, kh, kw], -1.0, 1.0, rng),
            b: Tensor::uniform(&[co], -1.0, 1.0, rng),
            stride,
            padding,
        };
    }
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// `$OSCNET_MNIST_DIR`, else `<workspace>/data/mnist`.
pub fn mnist_dir() -> PathBuf {
    std::env::var_os("OSCNET_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| workspace_root().join("data/mnist"))
}

/// `$OSCNET_CIFAR10_DIR`, else `<workspace>/data/cifar-10-batches-bin`.
pub fn cifar_dir() -> PathBuf {
    std::env::var_os("OSCNET_CIFAR10_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| workspace_root().join("data/cifar-10-batches-bin"))
}

pub fn mnist_present() -> bool {
    mnist_dir().join("train-images-idx3-ubyte").exists() || mnist_dir().join("train-images-idx3-ubyte.gz").exists()
}

pub fn cifar_present() -> bool {
    cifar_dir().join("data_batch_1.bin").exists()
}

/// A dataset of `n` random byte-valued images.
pub fn synthetic(n: usize, dims: [usize; 3], classes: usize, seed: u64) -> Dataset {
    let mut rng = Rng::new(seed);
    let numel = n * dims.iter().product::<usize>();
    let pixels = (0..numel).map(|_| rng.below(256) as f32 / 255.0).collect();
    let images = Tensor::from_vec(&[n, dims[0], dims[1], dims[2]], pixels).unwrap();
    let labels = (0..n).map(|_| rng.below(classes)).collect();
    Dataset::new("synthetic", images, labels, classes).unwrap()
}

/// Write a miniature MNIST directory (`train` and `t10k` IDX pairs).
pub fn write_mnist_fixture(dir: &Path, n_train: usize, n_test: usize, seed: u64) {
    std::fs::create_dir_all(dir).unwrap();
    for (prefix, n, s) in [("train", n_train, seed), ("t10k", n_test, seed + 1)] {
        let ds = synthetic(n, [1, 28, 28], 10, s);
        std::fs::write(
            dir.join(format!("{prefix}-images-idx3-ubyte")),
            encode_idx_images(&ds.images).unwrap(),
        )
        .unwrap();
        std::fs::write(dir.join(format!("{prefix}-labels-idx1-ubyte")), encode_idx_labels(&ds.labels)).unwrap();
    }
}

/// Write a miniature CIFAR-10 directory with `per_batch` records per file.
pub fn write_cifar_fixture(dir: &Path, per_batch: usize, seed: u64) {
    std::fs::create_dir_all(dir).unwrap();
    let names = (1..=5).map(|i| format!("data_batch_{i}.bin")).chain(["test_batch.bin".to_string()]);
    for (i, name) in names.enumerate() {
        let ds = synthetic(per_batch, [3, 32, 32], 10, seed + i as u64);
        std::fs::write(dir.join(name), encode_cifar(&ds).unwrap()).unwrap();
    }
}
