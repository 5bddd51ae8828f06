//! MNIST (IDX) and CIFAR-10 (binary version) loaders, splitting, batching and
//! the XOR toy set.
//!
//! Pixels are scaled by 1/255 with no further normalization. IDX files may
//! be gzip-compressed; compression is detected from the stream header, not
//! the file name.

use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_RECORD_BYTES: usize = 1 + 3 * 32 * 32;
const CIFAR_CLASSES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    /// `[N, C, H, W]`, values in `[0, 1]`.
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(name: impl Into<String>, images: Tensor<f32>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let ds = Self {
            name: name.into(),
            images,
            labels,
            num_classes,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-example `[C, H, W]`.
    pub fn example_dims(&self) -> &[usize] {
        &self.images.dims()[1..]
    }

    fn example_len(&self) -> usize {
        self.example_dims().iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        let dims = self.images.dims();
        if dims.len() != 4 {
            return Err(Error::ShapeMismatch(format!("{}: images must be [N,C,H,W], got {dims:?}", self.name)));
        }
        if dims[0] != self.labels.len() {
            return Err(Error::CountMismatch {
                images: dims[0],
                labels: self.labels.len(),
            });
        }
        if let Some(&label) = self.labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: self.num_classes,
            });
        }
        if let Some(v) = self.images.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::NonFiniteValue(format!("{}: pixel value {v} outside [0, 1]", self.name)));
        }
        Ok(())
    }

    /// The examples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let len = self.example_len();
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * len..(i + 1) * len]);
        }
        let mut dims = self.images.dims().to_vec();
        dims[0] = indices.len();
        Self {
            name: self.name.clone(),
            images: Tensor::from_vec(&dims, data).expect("selection preserves layout"),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// The first `n` examples (all of them if `n >= len`).
    pub fn take(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub val_fraction: f64,
    pub seed: u64,
}

/// Seeded shuffle, then the last `ceil(N · val_fraction)` shuffled indices
/// become the validation set.
pub fn split(dataset: &Dataset, spec: SplitSpec) -> Result<(Dataset, Dataset)> {
    let (train_idx, val_idx) = split_indices(dataset.len(), spec)?;
    Ok((dataset.select(&train_idx), dataset.select(&val_idx)))
}

pub fn split_indices(n: usize, spec: SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(spec.val_fraction > 0.0 && spec.val_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "val_fraction {} outside (0, 1)",
            spec.val_fraction
        )));
    }
    let mut perm = Rng::new(spec.seed).permutation(n);
    let n_val = ((n as f64) * spec.val_fraction).ceil() as usize;
    let val = perm.split_off(n - n_val.min(n));
    Ok((perm, val))
}

/// Iterator over `(images, labels)` mini-batches. The last batch may be
/// short.
pub struct Batches<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for Batches<'_> {
    type Item = (Tensor<f32>, Vec<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let part = self.dataset.select(&self.order[self.pos..end]);
        self.pos = end;
        Some((part.images, part.labels))
    }
}

/// Mini-batches in natural order, or in `Rng::new(seed).permutation` order
/// when a seed is given.
pub fn batches(dataset: &Dataset, batch_size: usize, shuffle_seed: Option<u64>) -> Batches<'_> {
    assert!(batch_size >= 1, "batch_size must be positive");
    let order = match shuffle_seed {
        Some(seed) => Rng::new(seed).permutation(dataset.len()),
        None => (0..dataset.len()).collect(),
    };
    Batches {
        dataset,
        order,
        batch_size,
        pos: 0,
    }
}

/// The four XOR points as `[4, 2, 1, 1]` images with labels `0, 1, 1, 0`.
pub fn xor_dataset() -> Dataset {
    let images = Tensor::from_vec(&[4, 2, 1, 1], vec![0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0]).expect("static shape");
    Dataset {
        name: "xor".into(),
        images,
        labels: vec![0, 1, 1, 0],
        num_classes: 2,
    }
}

fn byte_to_unit(b: u8) -> f32 {
    (b as f64 / 255.0) as f32
}

fn unit_to_byte(v: f32) -> u8 {
    (v as f64 * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Read a file, transparently inflating gzip streams.
pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::DataMissing(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn truncated(name: &str, detail: impl Into<String>) -> Error {
    Error::TruncatedFile {
        path: name.to_string(),
        detail: detail.into(),
    }
}

fn be_u32(bytes: &[u8], offset: usize, name: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| truncated(name, "header ends early"))
}

/// Parse an IDX image file into `[N, 1, rows, cols]` pixels.
pub fn parse_idx_images(bytes: &[u8], name: &str) -> Result<Tensor<f32>> {
    let magic = be_u32(bytes, 0, name)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic {
            path: name.to_string(),
            found: magic,
            expected: IDX_IMAGES_MAGIC,
        });
    }
    let n = be_u32(bytes, 4, name)? as usize;
    let rows = be_u32(bytes, 8, name)? as usize;
    let cols = be_u32(bytes, 12, name)? as usize;
    let body = &bytes[16..];
    let want = n * rows * cols;
    if body.len() != want {
        return Err(truncated(name, format!("{} pixel bytes, header promises {want}", body.len())));
    }
    Tensor::from_vec(&[n, 1, rows, cols], body.iter().map(|&b| byte_to_unit(b)).collect())
}

pub fn parse_idx_labels(bytes: &[u8], name: &str) -> Result<Vec<usize>> {
    let magic = be_u32(bytes, 0, name)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::BadMagic {
            path: name.to_string(),
            found: magic,
            expected: IDX_LABELS_MAGIC,
        });
    }
    let n = be_u32(bytes, 4, name)? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(truncated(name, format!("{} label bytes, header promises {n}", body.len())));
    }
    Ok(body.iter().map(|&b| b as usize).collect())
}

/// Inverse of [`parse_idx_images`] for single-channel images.
pub fn encode_idx_images(images: &Tensor<f32>) -> Result<Vec<u8>> {
    let &[n, 1, rows, cols] = images.dims() else {
        return Err(Error::ShapeMismatch(format!("IDX images must be [N,1,H,W], got {}", images.shape())));
    };
    let mut out = Vec::with_capacity(16 + images.numel());
    for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend(images.data().iter().map(|&v| unit_to_byte(v)));
    Ok(out)
}

pub fn encode_idx_labels(labels: &[usize]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend(labels.iter().map(|&l| l as u8));
    out
}

fn locate(dir: &Path, base: &str) -> Result<PathBuf> {
    let plain = dir.join(base);
    if plain.exists() {
        return Ok(plain);
    }
    let gz = dir.join(format!("{base}.gz"));
    if gz.exists() {
        return Ok(gz);
    }
    Err(Error::DataMissing(plain))
}

fn load_mnist_part(dir: &Path, prefix: &str) -> Result<Dataset> {
    let img_path = locate(dir, &format!("{prefix}-images-idx3-ubyte"))?;
    let lbl_path = locate(dir, &format!("{prefix}-labels-idx1-ubyte"))?;
    let images = parse_idx_images(&read_bytes(&img_path)?, &img_path.display().to_string())?;
    let labels = parse_idx_labels(&read_bytes(&lbl_path)?, &lbl_path.display().to_string())?;
    Dataset::new(format!("mnist-{prefix}"), images, labels, 10)
}

/// Load `(train, test)` from the four standard IDX files in `dir`.
pub fn load_mnist(dir: &Path) -> Result<(Dataset, Dataset)> {
    Ok((load_mnist_part(dir, "train")?, load_mnist_part(dir, "t10k")?))
}

/// Parse CIFAR-10 binary records: one label byte followed by 1024 red,
/// 1024 green and 1024 blue bytes, each plane row-major 32×32.
pub fn parse_cifar(bytes: &[u8], name: &str) -> Result<Dataset> {
    if bytes.len() % CIFAR_RECORD_BYTES != 0 {
        return Err(truncated(
            name,
            format!("{} bytes is not a multiple of {CIFAR_RECORD_BYTES}", bytes.len()),
        ));
    }
    let n = bytes.len() / CIFAR_RECORD_BYTES;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * (CIFAR_RECORD_BYTES - 1));
    for rec in bytes.chunks_exact(CIFAR_RECORD_BYTES) {
        let label = rec[0] as usize;
        if label >= CIFAR_CLASSES {
            return Err(Error::LabelOutOfRange {
                label,
                classes: CIFAR_CLASSES,
            });
        }
        labels.push(label);
        pixels.extend(rec[1..].iter().map(|&b| byte_to_unit(b)));
    }
    Dataset::new(name, Tensor::from_vec(&[n, 3, 32, 32], pixels)?, labels, CIFAR_CLASSES)
}

pub fn encode_cifar(dataset: &Dataset) -> Result<Vec<u8>> {
    if dataset.example_dims() != [3, 32, 32] {
        return Err(Error::ShapeMismatch(format!(
            "CIFAR records are [3,32,32], got {:?}",
            dataset.example_dims()
        )));
    }
    let mut out = Vec::with_capacity(dataset.len() * CIFAR_RECORD_BYTES);
    for (img, &label) in dataset.images.data().chunks(CIFAR_RECORD_BYTES - 1).zip(&dataset.labels) {
        out.push(label as u8);
        out.extend(img.iter().map(|&v| unit_to_byte(v)));
    }
    Ok(out)
}

fn concat(name: &str, parts: Vec<Dataset>) -> Result<Dataset> {
    let n: usize = parts.iter().map(Dataset::len).sum();
    let mut pixels = Vec::new();
    let mut labels = Vec::with_capacity(n);
    for p in parts {
        labels.extend_from_slice(&p.labels);
        pixels.extend(p.images.into_data());
    }
    Dataset::new(name, Tensor::from_vec(&[n, 3, 32, 32], pixels)?, labels, CIFAR_CLASSES)
}

/// Load `(train, test)` from `data_batch_1..5.bin` and `test_batch.bin`.
pub fn load_cifar10(dir: &Path) -> Result<(Dataset, Dataset)> {
    let read = |file: &str| -> Result<Dataset> {
        let path = dir.join(file);
        parse_cifar(&read_bytes(&path)?, &path.display().to_string())
    };
    let train = (1..=5)
        .map(|i| read(&format!("data_batch_{i}.bin")))
        .collect::<Result<Vec<_>>>()?;
    let test = read("test_batch.bin")?;
    Ok((concat("cifar10-train", train)?, concat("cifar10-test", vec![test])?))
}
