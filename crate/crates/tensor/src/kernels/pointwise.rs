use crate::error::{Result, TensorError};
use crate::float::Float;
use crate::tensor::{Shape, Tensor};

/// Elementwise nonlinearities used by the networks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    /// Negative-side slope in `(0, 1)`.
    LeakyRelu(f64),
    Tanh,
}

impl Activation {
    pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

    pub fn leaky() -> Self {
        Activation::LeakyRelu(Self::DEFAULT_LEAKY_SLOPE)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        match *self {
            Activation::LeakyRelu(a) if !(a > 0.0 && a < 1.0) => Err(TensorError::config(
                "activation",
                format!("leaky slope {a} outside (0, 1)"),
            )),
            _ => Ok(()),
        }
    }

    pub(crate) fn apply<F: Float>(&self, x: F) -> F {
        match *self {
            Activation::Relu => {
                if x > F::zero() {
                    x
                } else {
                    F::zero()
                }
            }
            Activation::LeakyRelu(a) => {
                if x > F::zero() {
                    x
                } else {
                    F::from_f64(a) * x
                }
            }
            // Clamped so the range stays open even where tanh rounds to +-1.
            Activation::Tanh => x.tanh().min(F::below_one()).max(-F::below_one()),
        }
    }

    /// Derivative given the input `x` and the output `y`. Kinks at zero take
    /// the negative-side slope: 0 for relu, the slope for leaky relu.
    pub(crate) fn derivative<F: Float>(&self, x: F, y: F) -> F {
        match *self {
            Activation::Relu => {
                if x > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
            Activation::LeakyRelu(a) => {
                if x > F::zero() {
                    F::one()
                } else {
                    F::from_f64(a)
                }
            }
            Activation::Tanh => F::one() - y * y,
        }
    }
}

pub(crate) fn activation_forward<F: Float>(input: &Tensor<F>, kind: Activation) -> Result<Tensor<F>> {
    kind.validate()?;
    Ok(input.map(|v| kind.apply(v)))
}

/// Per-pixel softmax over the channel axis of an NCHW tensor.
pub(crate) fn softmax_channels<F: Float>(logits: &Tensor<F>) -> Result<Tensor<F>> {
    let [n, k, h, w] = logits.nchw();
    if k < 2 {
        return Err(TensorError::config("softmax_channels", format!("need at least 2 channels, got {k}")));
    }
    let plane = h * w;
    let x = logits.data();
    let mut out = vec![F::zero(); x.len()];
    for b in 0..n {
        let base = b * k * plane;
        for p in 0..plane {
            let mut mx = F::neg_infinity();
            for c in 0..k {
                mx = mx.max(x[base + c * plane + p]);
            }
            let mut total = F::zero();
            for c in 0..k {
                let e = (x[base + c * plane + p] - mx).exp();
                out[base + c * plane + p] = e;
                total += e;
            }
            for c in 0..k {
                out[base + c * plane + p] /= total;
            }
        }
    }
    Ok(Tensor::from_parts(logits.shape().clone(), out))
}

pub(crate) fn softmax_channels_backward<F: Float>(probs: &Tensor<F>, grad_out: &Tensor<F>) -> Vec<F> {
    let [n, k, h, w] = probs.nchw();
    let plane = h * w;
    let (p, dy) = (probs.data(), grad_out.data());
    let mut dx = vec![F::zero(); p.len()];
    for b in 0..n {
        let base = b * k * plane;
        for px in 0..plane {
            let mut dot = F::zero();
            for c in 0..k {
                let i = base + c * plane + px;
                dot += dy[i] * p[i];
            }
            for c in 0..k {
                let i = base + c * plane + px;
                dx[i] = p[i] * (dy[i] - dot);
            }
        }
    }
    dx
}

/// Checks `input [N, F]`, `weight [Out, F]`, `bias [Out]`; returns (N, F, Out).
pub(crate) fn linear_dims<F: Float>(input: &Tensor<F>, weight: &Tensor<F>, bias: &Tensor<F>) -> Result<(usize, usize, usize)> {
    let n = input.dims()[0];
    let features = input.len() / n;
    if weight.shape().rank() != 2 {
        return Err(TensorError::config("linear", "weight must have 2 axes [Out, In]"));
    }
    let (out, w_in) = (weight.dims()[0], weight.dims()[1]);
    if w_in != features {
        return Err(TensorError::shape("linear", "features", w_in, features));
    }
    if bias.len() != out {
        return Err(TensorError::shape("linear", "bias", out, bias.len()));
    }
    Ok((n, features, out))
}

pub(crate) fn linear_forward<F: Float>(input: &Tensor<F>, weight: &Tensor<F>, bias: &Tensor<F>) -> Result<Tensor<F>> {
    let (n, f, out) = linear_dims(input, weight, bias)?;
    let mut y = vec![F::zero(); n * out];
    for row in y.chunks_mut(out) {
        row.copy_from_slice(bias.data());
    }
    // y += x W^T
    F::gemm(n, f, out, F::one(), input.data(), f, 1, weight.data(), 1, f, F::one(), &mut y, out, 1);
    Ok(Tensor::from_parts(Shape::new(&[n, out])?, y))
}
