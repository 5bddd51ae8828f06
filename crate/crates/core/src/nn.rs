//! Layers, the scaled AlexNet topology, and the softmax cross-entropy head.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::activations::{ActivationKind, PRELU_INIT_ALPHA};
use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{self, ConvGeometry, Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    MaxPool {
        window: usize,
        stride: usize,
    },
    Flatten,
    Dense {
        units: usize,
    },
    Dropout {
        rate: f64,
    },
    Activation {
        kind: ActivationKind,
    },
}

impl std::fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            LayerSpec::Conv {
                out_channels,
                kernel,
                stride,
                padding,
            } => write!(f, "conv(out={out_channels}, kernel={kernel}, stride={stride}, padding={padding})"),
            LayerSpec::MaxPool { window, stride } => write!(f, "maxpool(window={window}, stride={stride})"),
            LayerSpec::Flatten => f.write_str("flatten"),
            LayerSpec::Dense { units } => write!(f, "dense(units={units})"),
            LayerSpec::Dropout { rate } => write!(f, "dropout(rate={rate})"),
            LayerSpec::Activation { kind } => write!(f, "activation({kind})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Per-example `[C, H, W]`.
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
    pub conv_activation: ActivationKind,
    pub dense_activation: ActivationKind,
    pub num_classes: usize,
}

impl ModelSpec {
    /// AlexNet's five conv / three dense layout shrunk for 28×28 and 32×32
    /// inputs. No local response normalization.
    pub fn scaled_alexnet(
        input_shape: [usize; 3],
        conv_activation: ActivationKind,
        dense_activation: ActivationKind,
        num_classes: usize,
    ) -> Self {
        use LayerSpec::*;
        let conv = |out_channels| Conv {
            out_channels,
            kernel: 3,
            stride: 1,
            padding: 1,
        };
        let conv_act = Activation { kind: conv_activation };
        let dense_act = Activation { kind: dense_activation };
        let pool = MaxPool { window: 2, stride: 2 };
        Self {
            input_shape,
            layers: vec![
                conv(32),
                conv_act,
                pool,
                conv(64),
                conv_act,
                pool,
                conv(128),
                conv_act,
                conv(128),
                conv_act,
                conv(64),
                conv_act,
                pool,
                Flatten,
                Dense { units: 256 },
                dense_act,
                Dropout { rate: 0.5 },
                Dense { units: 128 },
                dense_act,
                Dropout { rate: 0.5 },
                Dense { units: num_classes },
            ],
            conv_activation,
            dense_activation,
            num_classes,
        }
    }

    /// Check layer parameters, the activation placement rule and shape
    /// inference. Returns the per-example output dims of every layer.
    pub fn validate(&self) -> Result<Vec<Vec<usize>>> {
        self.check_activation_placement()?;
        self.infer_shapes()
    }

    /// Every conv is directly followed by the conv activation, every hidden
    /// dense layer by the dense activation, and the model ends in a bare
    /// `Dense(num_classes)` producing logits.
    pub fn check_activation_placement(&self) -> Result<()> {
        let bad = |i: usize, msg: &str| Err(Error::InvalidConfig(format!("layer {i}: {msg}")));
        let last_dense = self
            .layers
            .iter()
            .rposition(|l| matches!(l, LayerSpec::Dense { .. }));
        match (last_dense, self.layers.last()) {
            (Some(i), Some(LayerSpec::Dense { units })) if i + 1 == self.layers.len() => {
                if *units != self.num_classes {
                    return bad(i, "final dense layer must have num_classes units");
                }
            }
            _ => {
                return Err(Error::InvalidConfig(
                    "model must end with a dense logits layer".into(),
                ))
            }
        }
        for (i, layer) in self.layers.iter().enumerate() {
            let next = self.layers.get(i + 1);
            match layer {
                LayerSpec::Conv { .. } => {
                    if next != Some(&LayerSpec::Activation { kind: self.conv_activation }) {
                        return bad(i, "conv must be followed by the conv activation");
                    }
                }
                LayerSpec::Dense { .. } if i + 1 < self.layers.len() => {
                    if next != Some(&LayerSpec::Activation { kind: self.dense_activation }) {
                        return bad(i, "hidden dense must be followed by the dense activation");
                    }
                }
                LayerSpec::Activation { .. } => {
                    let prev = i.checked_sub(1).map(|p| &self.layers[p]);
                    if !matches!(prev, Some(LayerSpec::Conv { .. } | LayerSpec::Dense { .. })) {
                        return bad(i, "activation must follow a conv or dense layer");
                    }
                }
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(rate) {
                        return bad(i, "dropout rate must lie in [0, 1)");
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn infer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut dims = self.input_shape.to_vec();
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let invalid = |msg: String| Error::InvalidShape(format!("layer {i} ({layer}): {msg}"));
            dims = match *layer {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    let &[c, h, w] = dims.as_slice() else {
                        return Err(invalid(format!("expects [C,H,W], got {dims:?}")));
                    };
                    if out_channels == 0 {
                        return Err(invalid("zero output channels".into()));
                    }
                    let g = ConvGeometry::new(&[1, c, h, w], &[out_channels, c, kernel, kernel], stride, padding)
                        .map_err(|e| invalid(e.to_string()))?;
                    vec![out_channels, g.out_h, g.out_w]
                }
                LayerSpec::MaxPool { window, stride } => {
                    let &[c, h, w] = dims.as_slice() else {
                        return Err(invalid(format!("expects [C,H,W], got {dims:?}")));
                    };
                    if window == 0 || stride == 0 || h < window || w < window {
                        return Err(invalid(format!("spatial extent {h}x{w} collapses")));
                    }
                    vec![c, (h - window) / stride + 1, (w - window) / stride + 1]
                }
                LayerSpec::Flatten => vec![dims.iter().product()],
                LayerSpec::Dense { units } => {
                    if dims.len() != 1 {
                        return Err(invalid(format!("dense needs flat input, got {dims:?}")));
                    }
                    if units == 0 {
                        return Err(invalid("zero units".into()));
                    }
                    vec![units]
                }
                LayerSpec::Dropout { .. } | LayerSpec::Activation { .. } => dims,
            };
            out.push(dims.clone());
        }
        Ok(out)
    }

    /// Human-readable one-layer-per-line description.
    pub fn to_config_block(&self) -> String {
        let [c, h, w] = self.input_shape;
        let mut s = format!(
            "input = {c}x{h}x{w}\nconv_activation = {}\ndense_activation = {}\nnum_classes = {}\n",
            self.conv_activation, self.dense_activation, self.num_classes
        );
        for (i, layer) in self.layers.iter().enumerate() {
            let _ = writeln!(s, "layer.{i} = {layer}");
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
}

/// A materialized [`ModelSpec`]: one parameter list in layer order.
#[derive(Debug, Clone)]
pub struct Model<T> {
    spec: ModelSpec,
    params: Vec<Param<T>>,
    /// Indices into `params` owned by each layer.
    layer_params: Vec<Vec<usize>>,
    mode: Mode,
}

/// Output of [`Model::forward`]: the logits node and, in parameter order,
/// the tape node holding each parameter.
pub struct ForwardPass {
    pub logits: NodeId,
    pub param_nodes: Vec<NodeId>,
}

impl<T: Element> Model<T> {
    /// Allocate parameters: He-uniform weights with bound `sqrt(6 / fan_in)`,
    /// zero biases and `0.25` PReLU slopes, drawn from `Rng::new(seed)` in
    /// layer order.
    pub fn build(spec: ModelSpec, seed: u64) -> Result<Self> {
        let shapes = spec.validate()?;
        let mut rng = Rng::new(seed);
        let mut params = Vec::new();
        let mut layer_params = Vec::with_capacity(spec.layers.len());
        let (mut convs, mut denses) = (0, 0);
        let mut last_name = String::new();
        let mut in_dims = spec.input_shape.to_vec();
        for (layer, out_dims) in spec.layers.iter().zip(&shapes) {
            let mut owned = Vec::new();
            let mut push = |name: String, value: Tensor<T>| {
                owned.push(params.len());
                params.push(Param { name, value });
            };
            match *layer {
                LayerSpec::Conv {
                    out_channels, kernel, ..
                } => {
                    convs += 1;
                    last_name = format!("conv{convs}");
                    let fan_in = in_dims[0] * kernel * kernel;
                    let bound = (6.0 / fan_in as f64).sqrt();
                    push(
                        format!("{last_name}.weight"),
                        Tensor::uniform(&[out_channels, in_dims[0], kernel, kernel], -bound, bound, &mut rng),
                    );
                    push(format!("{last_name}.bias"), Tensor::zeros(&[out_channels]));
                }
                LayerSpec::Dense { units } => {
                    denses += 1;
                    last_name = format!("dense{denses}");
                    let fan_in = in_dims[0];
                    let bound = (6.0 / fan_in as f64).sqrt();
                    push(
                        format!("{last_name}.weight"),
                        Tensor::uniform(&[fan_in, units], -bound, bound, &mut rng),
                    );
                    push(format!("{last_name}.bias"), Tensor::zeros(&[units]));
                }
                LayerSpec::Activation {
                    kind: ActivationKind::Prelu,
                } => {
                    push(
                        format!("{last_name}.prelu_alpha"),
                        Tensor::full(&[in_dims[0]], T::from_f64(PRELU_INIT_ALPHA)),
                    );
                }
                _ => {}
            }
            layer_params.push(owned);
            in_dims.clone_from(out_dims);
        }
        Ok(Self {
            spec,
            params,
            layer_params,
            mode: Mode::Train,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Record the forward computation on `tape`. `rng` supplies dropout
    /// masks and is untouched in eval mode.
    pub fn forward(&self, tape: &mut Tape<T>, batch: &Tensor<T>, rng: &mut Rng) -> Result<ForwardPass> {
        let param_nodes: Vec<NodeId> = self.params.iter().map(|p| tape.parameter(p.value.clone())).collect();
        let logits = self.forward_with(tape, &param_nodes, batch, rng)?;
        Ok(ForwardPass { logits, param_nodes })
    }

    /// Forward pass reading parameters from existing tape nodes, given in
    /// [`Model::params`] order.
    pub fn forward_with(
        &self,
        tape: &mut Tape<T>,
        param_nodes: &[NodeId],
        batch: &Tensor<T>,
        rng: &mut Rng,
    ) -> Result<NodeId> {
        let dims = batch.dims();
        if dims.len() != 4 || dims[1..] != self.spec.input_shape {
            return Err(Error::ShapeMismatch(format!(
                "model expects [N, {:?}], got {:?}",
                self.spec.input_shape, dims
            )));
        }
        if param_nodes.len() != self.params.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameter nodes for {} parameters",
                param_nodes.len(),
                self.params.len()
            )));
        }
        let n = dims[0];
        let mut x = tape.constant(batch.clone());
        for (layer, owned) in self.spec.layers.iter().zip(&self.layer_params) {
            let p = |k: usize| param_nodes[owned[k]];
            x = match *layer {
                LayerSpec::Conv { stride, padding, .. } => tape.conv2d(x, p(0), p(1), stride, padding)?,
                LayerSpec::MaxPool { window, stride } => tape.maxpool2d(x, window, stride)?,
                LayerSpec::Flatten => {
                    let flat = tape.value(x).numel() / n.max(1);
                    tape.reshape(x, &[n, flat])?
                }
                LayerSpec::Dense { .. } => {
                    let y = tape.matmul(x, p(0))?;
                    tape.add_row_bias(y, p(1))?
                }
                LayerSpec::Dropout { rate } => match self.mode {
                    Mode::Train => dropout(tape, x, rate, rng)?,
                    Mode::Eval => x,
                },
                LayerSpec::Activation { kind } => tape.activation(kind, x, owned.first().map(|&i| param_nodes[i]))?,
            };
        }
        Ok(x)
    }

    /// Logits for a batch in the current mode, without keeping the tape.
    pub fn predict(&self, batch: &Tensor<T>, rng: &mut Rng) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, batch, rng)?;
        Ok(tape.value(fwd.logits).clone())
    }

    /// Write all parameters as `(name, dims, f64 values)` records.
    pub fn save_parameters(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(PARAM_MAGIC);
        buf.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            buf.extend_from_slice(&(p.name.len() as u64).to_le_bytes());
            buf.extend_from_slice(p.name.as_bytes());
            buf.extend_from_slice(&(p.value.rank() as u64).to_le_bytes());
            for &d in p.value.dims() {
                buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in p.value.data() {
                buf.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&buf))
            .map_err(|e| Error::io(path, e))
    }

    /// Load parameters written by [`Model::save_parameters`]; names and
    /// shapes must match this model exactly.
    pub fn load_parameters(&mut self, path: &Path) -> Result<()> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let name = path.display().to_string();
        let mut r = ByteReader::new(&bytes, &name);
        if r.take(PARAM_MAGIC.len())? != PARAM_MAGIC {
            return Err(Error::Report(format!("{name}: not a parameter file")));
        }
        let count = r.u64()? as usize;
        if count != self.params.len() {
            return Err(Error::ShapeMismatch(format!(
                "{name}: {count} parameters, model has {}",
                self.params.len()
            )));
        }
        let mut loaded = Vec::with_capacity(count);
        for p in &self.params {
            let len = r.u64()? as usize;
            let pname = String::from_utf8_lossy(r.take(len)?).into_owned();
            let rank = r.u64()? as usize;
            let dims = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            if pname != p.name || dims != p.value.dims() {
                return Err(Error::ShapeMismatch(format!(
                    "{name}: found {pname} {dims:?}, expected {} {:?}",
                    p.name,
                    p.value.dims()
                )));
            }
            let n: usize = dims.iter().product();
            let data = (0..n).map(|_| r.f64().map(T::from_f64)).collect::<Result<Vec<_>>>()?;
            loaded.push(Tensor::from_vec(&dims, data)?);
        }
        for (p, v) in self.params.iter_mut().zip(loaded) {
            p.value = v;
        }
        Ok(())
    }
}

const PARAM_MAGIC: &[u8] = b"OSCNETP1";

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    name: &'a str,
}

impl<'a> ByteReader<'a> {
    fn new(bytes: &'a [u8], name: &'a str) -> Self {
        Self { bytes, pos: 0, name }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::TruncatedFile {
                path: self.name.to_string(),
                detail: format!("wanted {n} bytes at offset {}", self.pos),
            }
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Build [`ModelSpec::scaled_alexnet`] and initialize it from `seed`.
pub fn build_alexnet<T: Element>(
    input_shape: [usize; 3],
    conv_activation: ActivationKind,
    dense_activation: ActivationKind,
    num_classes: usize,
    seed: u64,
) -> Result<Model<T>> {
    Model::build(
        ModelSpec::scaled_alexnet(input_shape, conv_activation, dense_activation, num_classes),
        seed,
    )
}

/// Inverted dropout: each unit is zeroed with probability `rate` and
/// survivors are scaled by `1 / (1 - rate)`.
pub fn dropout<T: Element>(tape: &mut Tape<T>, x: NodeId, rate: f64, rng: &mut Rng) -> Result<NodeId> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidConfig(format!("dropout rate {rate} outside [0, 1)")));
    }
    let keep = T::from_f64(1.0 / (1.0 - rate));
    let xv = tape.node(x)?.value();
    let mask = Tensor::from_vec(
        xv.dims(),
        (0..xv.numel())
            .map(|_| if rng.uniform01() < rate { T::zero() } else { keep })
            .collect(),
    )?;
    let value = xv.mul(&mask)?;
    tape.record("dropout", &[x], value, Box::new(move |c| Ok(vec![c.upstream.mul(&mask)?])))
}

/// Row-wise softmax of `[N, K]` logits.
pub fn softmax<T: Element>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let &[_, k] = logits.dims() else {
        return Err(Error::ShapeMismatch(format!("softmax needs [N,K], got {}", logits.shape())));
    };
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k) {
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z = z + *v;
        }
        for v in row.iter_mut() {
            *v = *v / z;
        }
    }
    Ok(out)
}

fn check_labels(labels: &[usize], n: usize, k: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!("{} labels for {n} rows", labels.len())));
    }
    match labels.iter().find(|&&l| l >= k) {
        Some(&label) => Err(Error::LabelOutOfRange { label, classes: k }),
        None => Ok(()),
    }
}

/// Mean sparse categorical cross-entropy of `[N, K]` logits.
///
/// Returns the scalar loss node and the per-example losses
/// `logsumexp(row) - row[label]`. The recorded gradient is
/// `(softmax - onehot) / N`.
pub fn softmax_xent<T: Element>(tape: &mut Tape<T>, logits: NodeId, labels: &[usize]) -> Result<(NodeId, Vec<T>)> {
    let lv = tape.node(logits)?.value();
    let &[n, k] = lv.dims() else {
        return Err(Error::ShapeMismatch(format!("softmax_xent needs [N,K], got {}", lv.shape())));
    };
    check_labels(labels, n, k)?;
    let mut per_example = Vec::with_capacity(n);
    for (row, &label) in lv.data().chunks(k).zip(labels) {
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
        per_example.push(lse - row[label]);
    }
    let mean = per_example.iter().copied().sum::<T>() / T::from_f64(n as f64);
    let labels = labels.to_vec();
    let node = tape.record(
        "softmax_xent",
        &[logits],
        Tensor::scalar(mean),
        Box::new(move |c| {
            let scale = c.upstream.item()? / T::from_f64(n as f64);
            let mut g = softmax(c.inputs[0])?;
            for (row, &label) in g.data_mut().chunks_mut(k).zip(&labels) {
                row[label] = row[label] - T::one();
                for v in row.iter_mut() {
                    *v = *v * scale;
                }
            }
            Ok(vec![g])
        }),
    )?;
    Ok((node, per_example))
}

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
pub fn accuracy<T: Element>(logits: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    let &[n, k] = logits.dims() else {
        return Err(Error::ShapeMismatch(format!("accuracy needs [N,K], got {}", logits.shape())));
    };
    check_labels(labels, n, k)?;
    if n == 0 {
        return Ok(0.0);
    }
    let correct = logits
        .data()
        .chunks(k)
        .zip(labels)
        .filter(|(row, &l)| tensor::argmax(row) == l)
        .count();
    Ok(correct as f64 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alexnet_shapes() {
        let spec = ModelSpec::scaled_alexnet([1, 28, 28], ActivationKind::Gcu, ActivationKind::Relu, 10);
        let shapes = spec.validate().unwrap();
        assert_eq!(shapes[2], vec![32, 14, 14]);
        assert_eq!(shapes[5], vec![64, 7, 7]);
        assert_eq!(shapes[12], vec![64, 3, 3]);
        assert_eq!(shapes[13], vec![576]);
        assert_eq!(shapes.last().unwrap(), &vec![10]);

        let spec = ModelSpec::scaled_alexnet([3, 32, 32], ActivationKind::Relu, ActivationKind::Relu, 10);
        assert_eq!(spec.infer_shapes().unwrap()[13], vec![1024]);
    }

    #[test]
    fn alexnet_rejects_collapsing_input() {
        let err = build_alexnet::<f32>([1, 4, 4], ActivationKind::Relu, ActivationKind::Relu, 10, 0).unwrap_err();
        assert!(matches!(err, Error::InvalidShape(_)), "{err}");
    }

    #[test]
    fn placement_rule_is_enforced() {
        let mut spec = ModelSpec::scaled_alexnet([1, 28, 28], ActivationKind::Gcu, ActivationKind::Relu, 10);
        assert!(spec.check_activation_placement().is_ok());
        spec.layers[1] = LayerSpec::Activation {
            kind: ActivationKind::Relu,
        };
        assert!(spec.check_activation_placement().is_err());

        let mut spec = ModelSpec::scaled_alexnet([1, 28, 28], ActivationKind::Gcu, ActivationKind::Relu, 10);
        spec.layers.push(LayerSpec::Activation {
            kind: ActivationKind::Relu,
        });
        assert!(spec.check_activation_placement().is_err());

        let mut spec = ModelSpec::scaled_alexnet([1, 28, 28], ActivationKind::Gcu, ActivationKind::Relu, 10);
        spec.layers[16] = LayerSpec::Dropout { rate: 1.0 };
        assert!(spec.check_activation_placement().is_err());
    }

    #[test]
    fn prelu_model_has_alpha_per_conv_block() {
        let m = build_alexnet::<f32>([1, 28, 28], ActivationKind::Prelu, ActivationKind::Relu, 10, 1).unwrap();
        let alphas: Vec<_> = m.params().iter().filter(|p| p.name.ends_with("prelu_alpha")).collect();
        assert_eq!(alphas.len(), 5);
        for a in alphas {
            assert!(a.value.data().iter().all(|&v| v == 0.25));
        }
        assert_eq!(m.param("conv3.prelu_alpha").unwrap().dims(), &[128]);
    }

    #[test]
    fn init_follows_he_uniform() {
        let m = build_alexnet::<f64>([1, 28, 28], ActivationKind::Relu, ActivationKind::Relu, 10, 3).unwrap();
        let w = m.param("conv2.weight").unwrap();
        let bound = (6.0f64 / (32.0 * 9.0)).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= bound));
        assert!(w.max_abs() > 0.9 * bound);
        assert!(m.param("dense1.bias").unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = build_alexnet::<f32>([3, 32, 32], ActivationKind::Mish, ActivationKind::Relu, 10, 42).unwrap();
        let b = build_alexnet::<f32>([3, 32, 32], ActivationKind::Mish, ActivationKind::Relu, 10, 42).unwrap();
        assert_eq!(a.params(), b.params());
        let c = build_alexnet::<f32>([3, 32, 32], ActivationKind::Mish, ActivationKind::Relu, 10, 43).unwrap();
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn forward_shape_and_eval_determinism() {
        let mut m = build_alexnet::<f32>([1, 28, 28], ActivationKind::Gcu, ActivationKind::Relu, 10, 1).unwrap();
        let mut rng = Rng::new(0);
        let x = Tensor::uniform(&[4, 1, 28, 28], 0.0, 1.0, &mut rng);
        m.set_mode(Mode::Eval);
        let a = m.predict(&x, &mut rng).unwrap();
        let b = m.predict(&x, &mut rng).unwrap();
        assert_eq!(a.dims(), &[4, 10]);
        assert_eq!(a, b);
        assert!(m.predict(&Tensor::zeros(&[4, 3, 28, 28]), &mut rng).is_err());
    }

    #[test]
    fn zero_input_gives_uniform_softmax() {
        let mut m = build_alexnet::<f64>([1, 28, 28], ActivationKind::Relu, ActivationKind::Relu, 10, 1).unwrap();
        m.set_mode(Mode::Eval);
        let logits = m.predict(&Tensor::zeros(&[2, 1, 28, 28]), &mut Rng::new(0)).unwrap();
        let p = softmax(&logits).unwrap();
        for v in p.data() {
            assert!((v - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn dropout_rate_and_scaling() {
        let mut tape = Tape::<f64>::new();
        let n = 100_000;
        let x = tape.constant(Tensor::ones(&[n]));
        let y = dropout(&mut tape, x, 0.5, &mut Rng::new(8)).unwrap();
        let v = tape.value(y);
        let zeros = v.data().iter().filter(|&&v| v == 0.0).count() as f64;
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((zeros - n as f64 / 2.0).abs() < 3.0 * sigma);
        assert!(v.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn xent_examples() {
        let mut tape = Tape::<f64>::new();
        let l = tape.parameter(Tensor::zeros(&[3, 10]));
        let (loss, per) = softmax_xent(&mut tape, l, &[0, 4, 9]).unwrap();
        assert!((tape.value(loss).item().unwrap() - 10f64.ln()).abs() < 1e-12);
        assert_eq!(per.len(), 3);

        let mut tape = Tape::<f64>::new();
        let l = tape.parameter(Tensor::from_vec(&[1, 3], vec![0.0, 1000.0, 0.0]).unwrap());
        let (loss, _) = softmax_xent(&mut tape, l, &[1]).unwrap();
        assert!(tape.value(loss).item().unwrap() < 1e-300);

        let mut tape = Tape::<f64>::new();
        let l = tape.parameter(Tensor::zeros(&[2, 3]));
        assert!(matches!(
            softmax_xent(&mut tape, l, &[0, 3]),
            Err(Error::LabelOutOfRange { label: 3, classes: 3 })
        ));
    }

    #[test]
    fn accuracy_examples() {
        let perfect = Tensor::from_vec(&[2, 2], vec![1.0f64, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(accuracy(&perfect, &[0, 1]).unwrap(), 1.0);
        let tied = Tensor::<f64>::zeros(&[3, 4]);
        assert_eq!(accuracy(&tied, &[0, 0, 0]).unwrap(), 1.0);
        let one_of_four = Tensor::from_vec(&[4, 2], vec![1.0f64, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(accuracy(&one_of_four, &[0, 1, 1, 1]).unwrap(), 0.25);
        assert!(accuracy(&tied, &[0, 0, 4]).is_err());
    }

    #[test]
    fn parameters_round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        let a = build_alexnet::<f32>([1, 28, 28], ActivationKind::Prelu, ActivationKind::Relu, 10, 5).unwrap();
        a.save_parameters(&path).unwrap();
        let mut b = build_alexnet::<f32>([1, 28, 28], ActivationKind::Prelu, ActivationKind::Relu, 10, 6).unwrap();
        b.load_parameters(&path).unwrap();
        assert_eq!(a.params(), b.params());
        let mut c = build_alexnet::<f32>([1, 28, 28], ActivationKind::Relu, ActivationKind::Relu, 10, 6).unwrap();
        assert!(c.load_parameters(&path).is_err());
    }
}
