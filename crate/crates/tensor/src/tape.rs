//! Reverse-mode differentiation over an append-only operation record.
//!
//! Every node stores its forward value. Inputs always precede the nodes that
//! consume them, so a single reverse sweep over the node list visits nodes in
//! reverse topological order.

use std::fmt;

use crate::error::{Result, TensorError};
use crate::float::Float;
use crate::kernels::conv;
use crate::kernels::norm::{self, BatchStats, BnSaved};
use crate::kernels::pointwise::{self, Activation};
use crate::tensor::{Shape, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for a fused operation defined outside this crate.
///
/// Receives the upstream gradient and the input values; returns one optional
/// gradient per input (same order, same extents).
pub type CustomBackward<F> = Box<dyn Fn(&Tensor<F>, &[&Tensor<F>]) -> Vec<Option<Tensor<F>>>>;

enum Op<F> {
    Leaf,
    Conv2d {
        input: Var,
        kernels: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    },
    ConvTranspose2d {
        input: Var,
        kernels: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    BatchNormTrain {
        input: Var,
        gamma: Var,
        beta: Var,
        saved: BnSaved<F>,
    },
    BatchNormInfer {
        input: Var,
        gamma: Var,
        beta: Var,
        saved: BnSaved<F>,
    },
    Activation {
        input: Var,
        kind: Activation,
    },
    SoftmaxChannels {
        input: Var,
    },
    Reshape {
        input: Var,
    },
    NarrowBatch {
        input: Var,
        start: usize,
    },
    Sum {
        input: Var,
    },
    Mean {
        input: Var,
    },
    Scale {
        input: Var,
        factor: F,
    },
    Add {
        lhs: Var,
        rhs: Var,
    },
    WeightedSum {
        input: Var,
        weights: Tensor<F>,
    },
    Custom {
        name: &'static str,
        inputs: Vec<Var>,
        backward: CustomBackward<F>,
    },
}

impl<F> Op<F> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv2d_transpose",
            Op::Linear { .. } => "linear",
            Op::BatchNormTrain { .. } => "batch_norm_train",
            Op::BatchNormInfer { .. } => "batch_norm_infer",
            Op::Activation { .. } => "activation",
            Op::SoftmaxChannels { .. } => "softmax_channels",
            Op::Reshape { .. } => "reshape",
            Op::NarrowBatch { .. } => "narrow_batch",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::Scale { .. } => "scale",
            Op::Add { .. } => "add",
            Op::WeightedSum { .. } => "weighted_sum",
            Op::Custom { name, .. } => name,
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d { input, kernels, bias, .. }
            | Op::ConvTranspose2d { input, kernels, bias, .. } => vec![*input, *kernels, *bias],
            Op::Linear { input, weight, bias } => vec![*input, *weight, *bias],
            Op::BatchNormTrain { input, gamma, beta, .. }
            | Op::BatchNormInfer { input, gamma, beta, .. } => vec![*input, *gamma, *beta],
            Op::Activation { input, .. }
            | Op::SoftmaxChannels { input }
            | Op::Reshape { input }
            | Op::NarrowBatch { input, .. }
            | Op::Sum { input }
            | Op::Mean { input }
            | Op::Scale { input, .. }
            | Op::WeightedSum { input, .. } => vec![*input],
            Op::Add { lhs, rhs } => vec![*lhs, *rhs],
            Op::Custom { inputs, .. } => inputs.clone(),
        }
    }
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Single-owner record of a forward computation.
pub struct Tape<F: Float = f32> {
    nodes: Vec<Node<F>>,
}

impl<F: Float> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Float> fmt::Debug for Tape<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.nodes.len()).finish()
    }
}

impl<F: Float> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Name of the operation that produced `v`.
    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    /// Input handles of the operation that produced `v`.
    pub fn inputs_of(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.inputs()
    }

    /// Smallest magnitude of any input reaching a ReLU or leaky ReLU, or
    /// `None` when the tape has no piecewise-linear activation. Gradient
    /// checks redraw their point when this is too close to a kink.
    pub fn kink_margin(&self) -> Option<f64> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Activation {
                    input,
                    kind: Activation::Relu | Activation::LeakyRelu(_),
                } => self.nodes[input.0].value.data().iter().map(|x| x.as_f64().abs()).reduce(f64::min),
                _ => None,
            })
            .reduce(f64::min)
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>) -> Var {
        let requires_grad = op.inputs().iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable leaf (a trainable parameter).
    pub fn param(&mut self, value: Tensor<F>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives no gradient (data, frozen weights).
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn conv2d(&mut self, input: Var, kernels: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let y = conv::conv2d_forward(self.value(input), self.value(kernels), self.value(bias), stride, pad)?;
        Ok(self.push(
            y,
            Op::Conv2d {
                input,
                kernels,
                bias,
                stride,
                pad,
            },
        ))
    }

    pub fn conv2d_transpose(&mut self, input: Var, kernels: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let y = conv::conv2d_transpose_forward(self.value(input), self.value(kernels), self.value(bias), stride, pad)?;
        Ok(self.push(
            y,
            Op::ConvTranspose2d {
                input,
                kernels,
                bias,
                stride,
                pad,
            },
        ))
    }

    /// `input [N, F] . weight[Out, F]^T + bias`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let y = pointwise::linear_forward(self.value(input), self.value(weight), self.value(bias))?;
        Ok(self.push(y, Op::Linear { input, weight, bias }))
    }

    /// Training-mode batch normalization. The returned statistics are for the
    /// caller to fold into running estimates (or not).
    pub fn batch_norm_train(&mut self, input: Var, gamma: Var, beta: Var) -> Result<(Var, BatchStats<F>)> {
        let (y, stats, saved) = norm::batch_norm_train(self.value(input), self.value(gamma), self.value(beta))?;
        let v = self.push(
            y,
            Op::BatchNormTrain {
                input,
                gamma,
                beta,
                saved,
            },
        );
        Ok((v, stats))
    }

    pub fn batch_norm_infer(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[F],
        running_var: &[F],
    ) -> Result<Var> {
        let (y, saved) = norm::batch_norm_infer(
            self.value(input),
            self.value(gamma),
            self.value(beta),
            running_mean,
            running_var,
        )?;
        Ok(self.push(
            y,
            Op::BatchNormInfer {
                input,
                gamma,
                beta,
                saved,
            },
        ))
    }

    pub fn activation(&mut self, input: Var, kind: Activation) -> Result<Var> {
        let y = pointwise::activation_forward(self.value(input), kind)?;
        Ok(self.push(y, Op::Activation { input, kind }))
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        self.activation(input, Activation::Relu)
    }

    pub fn leaky_relu(&mut self, input: Var, slope: f64) -> Result<Var> {
        self.activation(input, Activation::LeakyRelu(slope))
    }

    pub fn tanh(&mut self, input: Var) -> Result<Var> {
        self.activation(input, Activation::Tanh)
    }

    pub fn softmax_channels(&mut self, input: Var) -> Result<Var> {
        let y = pointwise::softmax_channels(self.value(input))?;
        Ok(self.push(y, Op::SoftmaxChannels { input }))
    }

    pub fn reshape(&mut self, input: Var, dims: &[usize]) -> Result<Var> {
        let y = self.value(input).reshape(dims)?;
        Ok(self.push(y, Op::Reshape { input }))
    }

    pub fn narrow_batch(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let y = self.value(input).narrow_batch(start, len)?;
        Ok(self.push(y, Op::NarrowBatch { input, start }))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let y = Tensor::scalar(self.value(input).sum());
        self.push(y, Op::Sum { input })
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let y = Tensor::scalar(x.sum() / F::from_f64(x.len() as f64));
        self.push(y, Op::Mean { input })
    }

    pub fn scale(&mut self, input: Var, factor: F) -> Var {
        let y = self.value(input).map(|v| v * factor);
        self.push(y, Op::Scale { input, factor })
    }

    pub fn add(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        let (a, b) = (self.value(lhs), self.value(rhs));
        if a.shape() != b.shape() {
            return Err(TensorError::shape("add", "numel", a.len(), b.len()));
        }
        let mut y = a.clone();
        y.add_assign(b);
        Ok(self.push(y, Op::Add { lhs, rhs }))
    }

    /// `sum(input * weights)` against a constant weight tensor.
    pub fn weighted_sum(&mut self, input: Var, weights: Tensor<F>) -> Result<Var> {
        let y = Tensor::scalar(self.value(input).dot(&weights)?);
        Ok(self.push(y, Op::WeightedSum { input, weights }))
    }

    /// Records a fused operation whose forward value was computed by the caller.
    pub fn custom(&mut self, name: &'static str, inputs: &[Var], value: Tensor<F>, backward: CustomBackward<F>) -> Var {
        self.push(
            value,
            Op::Custom {
                name,
                inputs: inputs.to_vec(),
                backward,
            },
        )
    }

    /// Propagates d(loss)/d(node) back to every leaf that requires a gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        let root = &self.nodes[loss.0];
        if !root.value.shape().is_scalar() {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got extents {}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_parts(root.value.shape().clone(), vec![F::one()]));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
        }

        let leaves = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| {
                if matches!(n.op, Op::Leaf) && n.requires_grad {
                    Some(grads[i].take().unwrap_or_else(|| n.value.zeros_like()))
                } else {
                    None
                }
            })
            .collect();
        Ok(Gradients { grads: leaves })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node<F>, g: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) -> Result<()> {
        let mut acc = |v: Var, t: Tensor<F>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernels,
                bias,
                stride,
                pad,
            } => {
                let need = [self.needs(*input), self.needs(*kernels), self.needs(*bias)];
                let r = conv::conv2d_backward(
                    self.value(*input),
                    self.value(*kernels),
                    self.value(*bias),
                    *stride,
                    *pad,
                    g,
                    need,
                )?;
                if let Some(t) = r.input { acc(*input, t) }
                if let Some(t) = r.kernels { acc(*kernels, t) }
                if let Some(t) = r.bias { acc(*bias, t) }
            }
            Op::ConvTranspose2d {
                input,
                kernels,
                bias,
                stride,
                pad,
            } => {
                let need = [self.needs(*input), self.needs(*kernels), self.needs(*bias)];
                let r = conv::conv2d_transpose_backward(
                    self.value(*input),
                    self.value(*kernels),
                    self.value(*bias),
                    *stride,
                    *pad,
                    g,
                    need,
                )?;
                if let Some(t) = r.input { acc(*input, t) }
                if let Some(t) = r.kernels { acc(*kernels, t) }
                if let Some(t) = r.bias { acc(*bias, t) }
            }
            Op::Linear { input, weight, bias } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let (n, f, out) = pointwise::linear_dims(x, w, self.value(*bias))?;
                if self.needs(*input) {
                    let mut dx = vec![F::zero(); n * f];
                    F::gemm(n, out, f, F::one(), g.data(), out, 1, w.data(), f, 1, F::zero(), &mut dx, f, 1);
                    acc(*input, Tensor::from_parts(x.shape().clone(), dx));
                }
                if self.needs(*weight) {
                    let mut dw = vec![F::zero(); out * f];
                    F::gemm(out, n, f, F::one(), g.data(), 1, out, x.data(), f, 1, F::zero(), &mut dw, f, 1);
                    acc(*weight, Tensor::from_parts(w.shape().clone(), dw));
                }
                if self.needs(*bias) {
                    let mut db = vec![F::zero(); out];
                    for row in g.data().chunks(out) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    acc(*bias, Tensor::from_parts(Shape::new(&[out])?, db));
                }
            }
            Op::BatchNormTrain {
                input,
                gamma,
                beta,
                saved,
            } => {
                let (dx, dg, db) = norm::batch_norm_train_backward(g, self.value(*gamma), saved);
                acc(*input, Tensor::from_parts(self.value(*input).shape().clone(), dx));
                acc(*gamma, Tensor::from_parts(self.value(*gamma).shape().clone(), dg));
                acc(*beta, Tensor::from_parts(self.value(*beta).shape().clone(), db));
            }
            Op::BatchNormInfer {
                input,
                gamma,
                beta,
                saved,
            } => {
                let (dx, dg, db) = norm::batch_norm_infer_backward(g, self.value(*gamma), saved);
                acc(*input, Tensor::from_parts(self.value(*input).shape().clone(), dx));
                acc(*gamma, Tensor::from_parts(self.value(*gamma).shape().clone(), dg));
                acc(*beta, Tensor::from_parts(self.value(*beta).shape().clone(), db));
            }
            Op::Activation { input, kind } => {
                let x = self.value(*input).data();
                let y = node.value.data();
                let dx = g
                    .data()
                    .iter()
                    .zip(x.iter().zip(y))
                    .map(|(&d, (&xi, &yi))| d * kind.derivative(xi, yi))
                    .collect();
                acc(*input, Tensor::from_parts(node.value.shape().clone(), dx));
            }
            Op::SoftmaxChannels { input } => {
                let dx = pointwise::softmax_channels_backward(&node.value, g);
                acc(*input, Tensor::from_parts(node.value.shape().clone(), dx));
            }
            Op::Reshape { input } => {
                let shape = self.value(*input).shape().clone();
                acc(*input, Tensor::from_parts(shape, g.data().to_vec()));
            }
            Op::NarrowBatch { input, start } => {
                let x = self.value(*input);
                let [_, c, h, w] = x.nchw();
                let per = c * h * w;
                let mut dx = x.zeros_like();
                dx.data_mut()[start * per..start * per + g.len()].copy_from_slice(g.data());
                acc(*input, dx);
            }
            Op::Sum { input } => {
                let x = self.value(*input);
                acc(*input, Tensor::from_parts(x.shape().clone(), vec![g.data()[0]; x.len()]));
            }
            Op::Mean { input } => {
                let x = self.value(*input);
                let v = g.data()[0] / F::from_f64(x.len() as f64);
                acc(*input, Tensor::from_parts(x.shape().clone(), vec![v; x.len()]));
            }
            Op::Scale { input, factor } => {
                acc(*input, g.map(|v| v * *factor));
            }
            Op::Add { lhs, rhs } => {
                acc(*lhs, g.clone());
                acc(*rhs, g.clone());
            }
            Op::WeightedSum { input, weights } => {
                let s = g.data()[0];
                acc(*input, weights.map(|w| w * s));
            }
            Op::Custom {
                name,
                inputs,
                backward,
            } => {
                let values: Vec<&Tensor<F>> = inputs.iter().map(|v| self.value(*v)).collect();
                let local = backward(g, &values);
                if local.len() != inputs.len() {
                    return Err(TensorError::Contract(format!(
                        "custom op `{name}` returned {} gradients for {} inputs",
                        local.len(),
                        inputs.len()
                    )));
                }
                for (v, t) in inputs.iter().zip(local) {
                    if let Some(t) = t {
                        if t.shape() != self.value(*v).shape() {
                            return Err(TensorError::Contract(format!(
                                "custom op `{name}` gradient extents {} differ from input {}",
                                t.shape(),
                                self.value(*v).shape()
                            )));
                        }
                        acc(*v, t);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Gradients of a scalar loss with respect to every differentiable leaf.
#[derive(Debug)]
pub struct Gradients<F: Float> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Float> Gradients<F> {
    /// Gradient for a leaf recorded with [`Tape::param`]; zeros if the loss
    /// does not depend on it. `None` for constants and interior nodes.
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<F>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kink_margin_ignores_tanh() {
        let mut t = Tape::<f64>::new();
        let x = t.param(Tensor::from_vec(&[3], vec![-0.5, 0.25, 2.0]).unwrap());
        assert_eq!(t.kink_margin(), None);
        t.tanh(x).unwrap();
        assert_eq!(t.kink_margin(), None);
        t.leaky_relu(x, 0.2).unwrap();
        assert_eq!(t.kink_margin(), Some(0.25));
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::<f64>::new();
        let theta = tape.param(Tensor::from_vec(&[3], vec![0.5, -2.0, 7.0]).unwrap());
        let loss = tape.sum(theta);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(theta).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn squared_sum_gradient() {
        // loss = sum(theta^2) via weighted_sum against theta's own value
        let mut tape = Tape::<f64>::new();
        let theta_val = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let theta = tape.param(theta_val.clone());
        let sq = tape.custom(
            "square",
            &[theta],
            theta_val.map(|v| v * v),
            Box::new(|g, x| vec![Some(Tensor::from_vec(x[0].dims(), x[0].data().iter().zip(g.data()).map(|(a, b)| 2.0 * a * b).collect()).unwrap())]),
        );
        let loss = tape.sum(sq);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(theta).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::<f32>::new();
        let x = tape.param(Tensor::zeros(&[2]).unwrap());
        assert!(matches!(tape.backward(x), Err(TensorError::Contract(_))));
    }

    #[test]
    fn unreachable_params_get_zero_gradient() {
        let mut tape = Tape::<f32>::new();
        let used = tape.param(Tensor::ones(&[2]).unwrap());
        let unused = tape.param(Tensor::ones(&[1, 3]).unwrap());
        let loss = tape.sum(used);
        let grads = tape.backward(loss).unwrap();
        let g = grads.get(unused).unwrap();
        assert_eq!(g.dims(), &[1, 3]);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constants_have_no_gradient() {
        let mut tape = Tape::<f32>::new();
        let c = tape.constant(Tensor::ones(&[2]).unwrap());
        let p = tape.param(Tensor::ones(&[2]).unwrap());
        let s = tape.add(c, p).unwrap();
        let loss = tape.sum(s);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(c).is_none());
        assert!(!tape.requires_grad(c));
        assert!(tape.requires_grad(s));
    }

    #[test]
    fn inputs_precede_consumers() {
        let mut tape = Tape::<f32>::new();
        let a = tape.param(Tensor::ones(&[1, 1, 2, 2]).unwrap());
        let b = tape.relu(a).unwrap();
        let c = tape.tanh(b).unwrap();
        let d = tape.add(b, c).unwrap();
        let _ = tape.mean(d);
        for i in 0..tape.len() {
            let v = Var(i);
            assert!(tape.inputs_of(v).iter().all(|inp| inp.index() < i));
        }
    }

    #[test]
    fn shared_input_accumulates() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::from_vec(&[2], vec![1.0, 3.0]).unwrap());
        let y = tape.add(x, x).unwrap();
        let loss = tape.sum(y);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 2.0]);
    }
}
