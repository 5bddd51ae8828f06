//! Tape-based reverse-mode differentiation.
//!
//! A [`Tape`] is rebuilt for every forward pass. Each recorded node keeps
//! its value and a backward rule mapping the upstream gradient to one
//! gradient per input. [`Tape::backward`] walks the tape once in descending
//! id order, summing contributions when a node feeds several consumers.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::tensor::{self, Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// What a backward rule sees: the gradient flowing into the node, the
/// values of its inputs (in recording order) and its own value.
pub struct BackwardCtx<'a, T> {
    pub upstream: &'a Tensor<T>,
    pub inputs: Vec<&'a Tensor<T>>,
    pub output: &'a Tensor<T>,
}

pub type BackwardRule<T> = Box<dyn Fn(&BackwardCtx<'_, T>) -> Result<Vec<Tensor<T>>>>;

pub struct Node<T> {
    id: NodeId,
    op: &'static str,
    inputs: Vec<NodeId>,
    value: Tensor<T>,
    rule: Option<BackwardRule<T>>,
    requires_grad: bool,
}

impl<T> Node<T> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn op(&self) -> &'static str {
        self.op
    }

    pub fn inputs(&self) -> &[NodeId] {
        &self.inputs
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    parameters: BTreeSet<NodeId>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            parameters: BTreeSet::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: &'static str, inputs: Vec<NodeId>, value: Tensor<T>, rule: Option<BackwardRule<T>>, requires_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            id,
            op,
            inputs,
            value,
            rule,
            requires_grad,
        });
        id
    }

    /// A constant input. Gradients are not propagated into constants.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push("const", Vec::new(), value, None, false)
    }

    /// A trainable leaf; [`Tape::backward`] reports a gradient for it.
    pub fn parameter(&mut self, value: Tensor<T>) -> NodeId {
        let id = self.push("param", Vec::new(), value, None, true);
        self.parameters.insert(id);
        id
    }

    pub fn record(
        &mut self,
        op: &'static str,
        inputs: &[NodeId],
        value: Tensor<T>,
        rule: BackwardRule<T>,
    ) -> Result<NodeId> {
        let mut requires_grad = false;
        for &i in inputs {
            requires_grad |= self.node(i)?.requires_grad;
        }
        Ok(self.push(op, inputs.to_vec(), value, Some(rule), requires_grad))
    }

    pub fn node(&self, id: NodeId) -> Result<&Node<T>> {
        self.nodes.get(id.0).ok_or(Error::UnknownNode(id.0))
    }

    /// Panics on a foreign id; use [`Tape::node`] for a checked lookup.
    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn parameters(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.parameters.iter().copied()
    }

    pub fn is_parameter(&self, id: NodeId) -> bool {
        self.parameters.contains(&id)
    }

    /// Gradients of the scalar `output` with respect to every parameter
    /// node. Parameters the output does not depend on get all-zero
    /// gradients.
    pub fn backward(&self, output: NodeId) -> Result<BTreeMap<NodeId, Tensor<T>>> {
        let mut grads = self.backward_all(output)?;
        Ok(self
            .parameters
            .iter()
            .map(|&p| {
                let g = grads[p.0]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(self.nodes[p.0].value.dims()));
                (p, g)
            })
            .collect())
    }

    /// Gradients for every node that lies on a path from a parameter to
    /// `output`, indexed by node id. The output's own entry is 1.
    pub fn backward_all(&self, output: NodeId) -> Result<Vec<Option<Tensor<T>>>> {
        let out = self.node(output)?;
        if out.value.numel() != 1 {
            return Err(Error::NonScalarOutput(out.value.dims().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::ones(out.value.dims()));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(rule) = &node.rule else { continue };
            let Some(upstream) = grads[idx].as_ref() else { continue };
            let ctx = BackwardCtx {
                upstream,
                inputs: node.inputs.iter().map(|i| &self.nodes[i.0].value).collect(),
                output: &node.value,
            };
            let input_grads = rule(&ctx)?;
            if input_grads.len() != node.inputs.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{} backward produced {} gradients for {} inputs",
                    node.op,
                    input_grads.len(),
                    node.inputs.len()
                )));
            }
            if !self.parameters.contains(&node.id) && idx != output.0 {
                grads[idx] = None;
            }
            for (&input, g) in node.inputs.iter().zip(input_grads) {
                let target = &self.nodes[input.0];
                if !target.requires_grad {
                    continue;
                }
                if g.dims() != target.value.dims() {
                    return Err(Error::ShapeMismatch(format!(
                        "{} backward: gradient {} for input of shape {}",
                        node.op,
                        g.shape(),
                        target.value.shape()
                    )));
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&g)?,
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(grads)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.node(a)?.value.add(&self.node(b)?.value)?;
        self.record("add", &[a, b], v, Box::new(|c| Ok(vec![c.upstream.clone(), c.upstream.clone()])))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.node(a)?.value.sub(&self.node(b)?.value)?;
        self.record(
            "sub",
            &[a, b],
            v,
            Box::new(|c| Ok(vec![c.upstream.clone(), c.upstream.scale(-T::one())])),
        )
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.node(a)?.value.mul(&self.node(b)?.value)?;
        self.record(
            "mul",
            &[a, b],
            v,
            Box::new(|c| Ok(vec![c.upstream.mul(c.inputs[1])?, c.upstream.mul(c.inputs[0])?])),
        )
    }

    pub fn scale(&mut self, a: NodeId, s: T) -> Result<NodeId> {
        let v = self.node(a)?.value.scale(s);
        self.record("scale", &[a], v, Box::new(move |c| Ok(vec![c.upstream.scale(s)])))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let v = Tensor::scalar(self.node(a)?.value.sum());
        self.record(
            "sum",
            &[a],
            v,
            Box::new(|c| Ok(vec![Tensor::full(c.inputs[0].dims(), c.upstream.item()?)])),
        )
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let x = &self.node(a)?.value;
        let n = T::from_f64(x.numel() as f64);
        let v = Tensor::scalar(x.sum() / n);
        self.record(
            "mean",
            &[a],
            v,
            Box::new(move |c| Ok(vec![Tensor::full(c.inputs[0].dims(), c.upstream.item()? / n)])),
        )
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::matmul(&self.node(a)?.value, &self.node(b)?.value)?;
        self.record(
            "matmul",
            &[a, b],
            v,
            Box::new(|c| {
                Ok(vec![
                    tensor::matmul_t(c.upstream, false, c.inputs[1], true)?,
                    tensor::matmul_t(c.inputs[0], true, c.upstream, false)?,
                ])
            }),
        )
    }

    /// `x[N,K] + bias[K]`, adding the bias to every row.
    pub fn add_row_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (xv, bv) = (&self.node(x)?.value, &self.node(bias)?.value);
        let &[_, k] = xv.dims() else {
            return Err(Error::ShapeMismatch(format!("row bias on {}", xv.shape())));
        };
        if bv.dims() != [k] {
            return Err(Error::ShapeMismatch(format!(
                "row bias {} for {} columns",
                bv.shape(),
                k
            )));
        }
        let mut v = xv.clone();
        for row in v.data_mut().chunks_mut(k) {
            for (a, &b) in row.iter_mut().zip(bv.data()) {
                *a = *a + b;
            }
        }
        self.record(
            "add_row_bias",
            &[x, bias],
            v,
            Box::new(move |c| {
                let mut gb = vec![T::zero(); k];
                for row in c.upstream.data().chunks(k) {
                    for (g, &u) in gb.iter_mut().zip(row) {
                        *g = *g + u;
                    }
                }
                Ok(vec![c.upstream.clone(), Tensor::from_vec(&[k], gb)?])
            }),
        )
    }

    pub fn reshape(&mut self, a: NodeId, dims: &[usize]) -> Result<NodeId> {
        let v = self.node(a)?.value.clone().reshape(dims)?;
        self.record(
            "reshape",
            &[a],
            v,
            Box::new(|c| c.upstream.clone().reshape(c.inputs[0].dims()).map(|g| vec![g])),
        )
    }

    pub fn conv2d(
        &mut self,
        x: NodeId,
        kernels: NodeId,
        bias: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let v = tensor::conv2d(
            &self.node(x)?.value,
            &self.node(kernels)?.value,
            &self.node(bias)?.value,
            stride,
            padding,
        )?;
        self.record(
            "conv2d",
            &[x, kernels, bias],
            v,
            Box::new(move |c| {
                let (dx, dk, db) =
                    tensor::conv2d_backward(c.inputs[0], c.inputs[1], c.upstream, stride, padding)?;
                Ok(vec![dx, dk, db])
            }),
        )
    }

    pub fn maxpool2d(&mut self, x: NodeId, window: usize, stride: usize) -> Result<NodeId> {
        let (v, argmax) = tensor::maxpool2d(&self.node(x)?.value, window, stride)?;
        self.record(
            "maxpool2d",
            &[x],
            v,
            Box::new(move |c| {
                Ok(vec![tensor::maxpool2d_backward(
                    c.inputs[0].dims(),
                    &argmax,
                    c.upstream,
                )?])
            }),
        )
    }
}

/// Result of checking analytic gradients against central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Max over all coordinates of `|analytic - numeric| / max(1, |numeric|)`.
    pub max_rel_error: f64,
    /// The same maximum restricted to each input.
    pub per_input: Vec<f64>,
}

pub const DEFAULT_GRAD_CHECK_EPS: f64 = 1e-5;

/// Central-difference check of a scalar function of one tensor.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, NodeId) -> Result<NodeId>,
{
    grad_check_many(|tape, ids| f(tape, ids[0]), std::slice::from_ref(x), eps)
        .map(|r| r.max_rel_error)
}

/// Central-difference check of a scalar function of several tensors; every
/// coordinate of every input is perturbed by `±eps` in turn.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, &[NodeId]) -> Result<NodeId>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = values.iter().map(|v| tape.parameter(v.clone())).collect();
        let out = f(&mut tape, &ids)?;
        let y = scalar_output(&tape, out)?;
        if !y.is_finite() {
            return Err(Error::NonFiniteValue(format!("function value {y}")));
        }
        Ok(y)
    };

    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|v| tape.parameter(v.clone())).collect();
    let out = f(&mut tape, &ids)?;
    scalar_output(&tape, out)?;
    let grads = tape.backward(out)?;

    let mut work = inputs.to_vec();
    let mut per_input = Vec::with_capacity(inputs.len());
    for (k, id) in ids.iter().enumerate() {
        let analytic = &grads[id];
        analytic.ensure_finite("analytic gradient")?;
        let mut worst = 0.0f64;
        for i in 0..inputs[k].numel() {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + eps;
            let plus = eval(&work)?;
            work[k].data_mut()[i] = orig - eps;
            let minus = eval(&work)?;
            work[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = (analytic.data()[i] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
        per_input.push(worst);
    }
    Ok(GradCheck {
        max_rel_error: per_input.iter().copied().fold(0.0, f64::max),
        per_input,
    })
}

fn scalar_output(tape: &Tape<f64>, out: NodeId) -> Result<f64> {
    let v = &tape.node(out)?.value;
    if v.numel() != 1 {
        return Err(Error::NonScalarOutput(v.dims().to_vec()));
    }
    Ok(v.data()[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn vec64(v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(&[v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn record_appends_with_increasing_ids() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(vec64(&[1.0, 2.0]));
        let b = tape.constant(vec64(&[3.0, 4.0]));
        assert!(tape.node(a).unwrap().inputs().is_empty());
        let s1 = tape.add(a, b).unwrap();
        let s2 = tape.add(a, b).unwrap();
        assert_ne!(s1, s2);
        assert!(s2 > s1);
        assert_eq!(tape.value(s1).data(), &[4.0, 6.0]);
    }

    #[test]
    fn record_rejects_unknown_inputs() {
        let mut tape = Tape::<f64>::new();
        let mut other = Tape::<f64>::new();
        other.constant(vec64(&[0.0]));
        let foreign = other.constant(vec64(&[0.0]));
        let err = tape
            .record("id", &[foreign], vec64(&[0.0]), Box::new(|c| Ok(vec![c.upstream.clone()])))
            .unwrap_err();
        assert!(matches!(err, Error::UnknownNode(1)));
    }

    #[test]
    fn identity_gradient_is_one() {
        let mut tape = Tape::<f64>::new();
        let x = tape.parameter(Tensor::scalar(3.0));
        let g = tape.backward(x).unwrap();
        assert_eq!(g[&x].item().unwrap(), 1.0);
    }

    #[test]
    fn sum_of_squares() {
        let mut tape = Tape::<f64>::new();
        let x = tape.parameter(vec64(&[1.0, 2.0, 3.0]));
        let sq = tape.mul(x, x).unwrap();
        let y = tape.sum(sq).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g[&x].data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn dead_branch_gets_zero_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.parameter(vec64(&[1.0, 2.0]));
        let unused = tape.parameter(Tensor::zeros(&[2, 3]));
        let y = tape.sum(x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g[&unused], Tensor::zeros(&[2, 3]));
    }

    #[test]
    fn non_scalar_output_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.parameter(vec64(&[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::NonScalarOutput(_))));
    }

    #[test]
    fn fan_out_accumulates() {
        // y = sum(x*a) + sum(x*b): dy/dx = a + b
        let a = vec64(&[1.0, -2.0, 0.5]);
        let b = vec64(&[3.0, 1.0, 4.0]);
        let single = |coef: &Tensor<f64>| {
            let mut tape = Tape::<f64>::new();
            let x = tape.parameter(vec64(&[0.3, 0.2, 0.1]));
            let c = tape.constant(coef.clone());
            let p = tape.mul(x, c).unwrap();
            let y = tape.sum(p).unwrap();
            tape.backward(y).unwrap()[&x].clone()
        };
        let mut tape = Tape::<f64>::new();
        let x = tape.parameter(vec64(&[0.3, 0.2, 0.1]));
        let ca = tape.constant(a.clone());
        let cb = tape.constant(b.clone());
        let pa = tape.mul(x, ca).unwrap();
        let pb = tape.mul(x, cb).unwrap();
        let sa = tape.sum(pa).unwrap();
        let sb = tape.sum(pb).unwrap();
        let y = tape.add(sa, sb).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g[&x], single(&a).add(&single(&b)).unwrap());
    }

    #[test]
    fn backward_is_deterministic() {
        let build = || {
            let mut rng = Rng::new(9);
            let mut tape = Tape::<f32>::new();
            let x = tape.parameter(Tensor::uniform(&[2, 1, 6, 6], -1.0, 1.0, &mut rng));
            let k = tape.parameter(Tensor::uniform(&[3, 1, 3, 3], -1.0, 1.0, &mut rng));
            let b = tape.parameter(Tensor::uniform(&[3], -1.0, 1.0, &mut rng));
            let y = tape.conv2d(x, k, b, 1, 1).unwrap();
            let p = tape.maxpool2d(y, 2, 2).unwrap();
            let s = tape.mul(p, p).unwrap();
            let out = tape.mean(s).unwrap();
            tape.backward(out).unwrap()
        };
        assert_eq!(build(), build());
    }

    #[test]
    fn grad_check_sum_is_exact() {
        let mut rng = Rng::new(2);
        let x = Tensor::uniform(&[20], -5.0, 5.0, &mut rng);
        let err = grad_check(|t, x| t.sum(x), &x, DEFAULT_GRAD_CHECK_EPS).unwrap();
        assert!(err <= 1e-9, "{err}");
    }

    #[test]
    fn grad_check_composite_ops() {
        let mut rng = Rng::new(5);
        let x = Tensor::uniform(&[2, 2, 5, 5], -1.0, 1.0, &mut rng);
        let k = Tensor::uniform(&[3, 2, 3, 3], -1.0, 1.0, &mut rng);
        let b = Tensor::uniform(&[3], -1.0, 1.0, &mut rng);
        let w = Tensor::uniform(&[12, 4], -1.0, 1.0, &mut rng);
        let wb = Tensor::uniform(&[4], -1.0, 1.0, &mut rng);
        let report = grad_check_many(
            |t, ids| {
                let y = t.conv2d(ids[0], ids[1], ids[2], 1, 1)?;
                let p = t.maxpool2d(y, 2, 2)?;
                let f = t.reshape(p, &[2, 12])?;
                let d = t.matmul(f, ids[3])?;
                let d = t.add_row_bias(d, ids[4])?;
                let s = t.mul(d, d)?;
                let s = t.scale(s, 0.5)?;
                t.mean(s)
            },
            &[x, k, b, w, wb],
            DEFAULT_GRAD_CHECK_EPS,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn grad_check_reports_non_finite() {
        let x = vec64(&[1.0]);
        let r = grad_check(
            |t, x| {
                let v = t.value(x).map(|v| if v > 1.0 { f64::INFINITY } else { v });
                let id = t.record("blowup", &[x], v, Box::new(|c| Ok(vec![c.upstream.clone()])))?;
                t.sum(id)
            },
            &x,
            1e-5,
        );
        assert!(matches!(r, Err(Error::NonFiniteValue(_))));
    }
}
