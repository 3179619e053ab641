//! Tape-free forward operations, for inference and tests.

use crate::error::{Result, TensorError};
use crate::float::Float;
use crate::kernels::{conv, norm, pointwise};
use crate::tensor::Tensor;

pub use crate::kernels::norm::{BatchStats, BN_EPS, BN_MOMENTUM};
pub use crate::kernels::pointwise::Activation;

/// Cross-correlation (no kernel flip) of `input [N,Cin,H,W]` with
/// `kernels [Cout,Cin,kH,kW]`, plus a per-output-channel bias.
pub fn conv2d<F: Float>(input: &Tensor<F>, kernels: &Tensor<F>, bias: &Tensor<F>, stride: usize, pad: usize) -> Result<Tensor<F>> {
    conv::conv2d_forward(input, kernels, bias, stride, pad)
}

/// Adjoint of [`conv2d`] with `kernels [Cin,Cout,kH,kW]`; output extent is
/// `(H - 1) * stride - 2 * pad + kH`.
pub fn conv2d_transpose<F: Float>(
    input: &Tensor<F>,
    kernels: &Tensor<F>,
    bias: &Tensor<F>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<F>> {
    conv::conv2d_transpose_forward(input, kernels, bias, stride, pad)
}

pub fn linear<F: Float>(input: &Tensor<F>, weight: &Tensor<F>, bias: &Tensor<F>) -> Result<Tensor<F>> {
    pointwise::linear_forward(input, weight, bias)
}

pub fn activation<F: Float>(input: &Tensor<F>, kind: Activation) -> Result<Tensor<F>> {
    pointwise::activation_forward(input, kind)
}

pub fn softmax_channels<F: Float>(logits: &Tensor<F>) -> Result<Tensor<F>> {
    pointwise::softmax_channels(logits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Normalize with batch statistics and update the running estimates.
    Train,
    /// Normalize with the running estimates only.
    Infer,
}

/// Running per-channel estimates owned by a normalization layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<F> {
    pub mean: Vec<F>,
    pub var: Vec<F>,
}

impl<F: Float> RunningStats<F> {
    /// Mean 0, variance 1.
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![F::zero(); channels],
            var: vec![F::one(); channels],
        }
    }
}

pub fn batch_norm<F: Float>(
    input: &Tensor<F>,
    gamma: &Tensor<F>,
    beta: &Tensor<F>,
    running: &mut RunningStats<F>,
    mode: NormMode,
) -> Result<Tensor<F>> {
    match mode {
        NormMode::Train => {
            let (y, stats, _) = norm::batch_norm_train(input, gamma, beta)?;
            if stats.mean.len() != running.mean.len() {
                return Err(TensorError::shape("batch_norm", "running_mean", stats.mean.len(), running.mean.len()));
            }
            stats.update_running(&mut running.mean, &mut running.var);
            Ok(y)
        }
        NormMode::Infer => Ok(norm::batch_norm_infer(input, gamma, beta, &running.mean, &running.var)?.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(dims: &[usize], v: Vec<f32>) -> Tensor<f32> {
        Tensor::from_vec(dims, v).unwrap()
    }

    #[test]
    fn scalar_kernel_scales_input() {
        let x = t(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let y = conv2d(&x, &t(&[1, 1, 1, 1], vec![2.0]), &t(&[1], vec![0.0]), 1, 0).unwrap();
        assert_eq!(y.data(), &[2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn ones_kernel_over_ones_sums_window() {
        let x = Tensor::<f32>::ones(&[1, 1, 3, 3]).unwrap();
        let k = Tensor::<f32>::ones(&[1, 1, 3, 3]).unwrap();
        let y = conv2d(&x, &k, &t(&[1], vec![0.0]), 1, 0).unwrap();
        assert_eq!(y.dims(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn zero_input_yields_bias() {
        let x = Tensor::<f32>::zeros(&[2, 3, 5, 5]).unwrap();
        let k = Tensor::<f32>::full(&[2, 3, 3, 3], 0.7).unwrap();
        let y = conv2d(&x, &k, &t(&[2], vec![1.5, 1.5]), 2, 1).unwrap();
        assert!(y.data().iter().all(|&v| v == 1.5));
    }

    #[test]
    fn transpose_scatters_single_value() {
        let x = t(&[1, 1, 1, 1], vec![3.0]);
        let k = Tensor::<f32>::ones(&[1, 1, 2, 2]).unwrap();
        let y = conv2d_transpose(&x, &k, &t(&[1], vec![0.0]), 2, 0).unwrap();
        assert_eq!(y.dims(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[3.0; 4]);
    }

    #[test]
    fn transpose_of_zero_is_zero() {
        let x = Tensor::<f32>::zeros(&[1, 2, 3, 3]).unwrap();
        let k = Tensor::<f32>::full(&[2, 3, 4, 4], 0.3).unwrap();
        let y = conv2d_transpose(&x, &k, &Tensor::zeros(&[3]).unwrap(), 2, 1).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_channel_maps_to_beta() {
        let x = Tensor::<f32>::full(&[2, 1, 2, 2], 3.25).unwrap();
        let mut rs = RunningStats::new(1);
        let y = batch_norm(&x, &t(&[1], vec![1.0]), &t(&[1], vec![0.7]), &mut rs, NormMode::Train).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.7), "{y:?}");
    }

    #[test]
    fn two_point_channel_normalizes() {
        let x = Tensor::<f64>::from_vec(&[2, 1, 1, 1], vec![-1.0, 1.0]).unwrap();
        let one = Tensor::<f64>::ones(&[1]).unwrap();
        let zero = Tensor::<f64>::zeros(&[1]).unwrap();
        let mut rs = RunningStats::new(1);
        let y = batch_norm(&x, &one, &zero, &mut rs, NormMode::Train).unwrap();
        let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((y.data()[0] + expect).abs() < 1e-12);
        assert!((y.data()[1] - expect).abs() < 1e-12);
        assert!((expect - 0.999995).abs() < 1e-6);
        // momentum 0.9 toward mean 0 and unbiased variance 2
        assert_eq!(rs.mean, vec![0.0]);
        assert!((rs.var[0] - (0.9 + 0.1 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn infer_mode_uses_running_stats() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 1, 1], vec![4.0]).unwrap();
        let mut rs = RunningStats {
            mean: vec![2.0],
            var: vec![4.0],
        };
        let y = batch_norm(&x, &Tensor::ones(&[1]).unwrap(), &Tensor::zeros(&[1]).unwrap(), &mut rs, NormMode::Infer).unwrap();
        assert!((y.data()[0] - 2.0 / (4.0f64 + 1e-5).sqrt()).abs() < 1e-12);
        assert!((y.data()[0] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn single_value_channel_is_degenerate_in_train_mode() {
        let x = Tensor::<f32>::ones(&[1, 2, 1, 1]).unwrap();
        let mut rs = RunningStats::new(2);
        let err = batch_norm(&x, &Tensor::ones(&[2]).unwrap(), &Tensor::zeros(&[2]).unwrap(), &mut rs, NormMode::Train).unwrap_err();
        assert!(matches!(err, TensorError::DegenerateStatistics { population: 1, .. }));
    }

    #[test]
    fn activation_values() {
        let x = t(&[3], vec![-2.0, 0.0, 2.0]);
        assert_eq!(activation(&x, Activation::Relu).unwrap().data(), &[0.0, 0.0, 2.0]);
        let leaky = activation(&x, Activation::LeakyRelu(0.2)).unwrap();
        assert!((leaky.data()[0] + 0.4).abs() < 1e-7);
        assert_eq!(activation(&x, Activation::Tanh).unwrap().data()[1], 0.0);
        assert!(activation(&x, Activation::LeakyRelu(1.5)).is_err());
    }

    #[test]
    fn tanh_range_is_open() {
        let x = t(&[2], vec![-50.0, 50.0]);
        let y = activation(&x, Activation::Tanh).unwrap();
        assert!(y.data()[0] > -1.0 && y.data()[1] < 1.0);
    }

    #[test]
    fn softmax_fixtures() {
        let eq = Tensor::<f64>::full(&[1, 4, 1, 1], 0.3).unwrap();
        let p = softmax_channels(&eq).unwrap();
        assert!(p.data().iter().all(|&v| (v - 0.25).abs() < 1e-12));

        let two = Tensor::<f64>::from_vec(&[1, 2, 1, 1], vec![0.0, 3.0f64.ln()]).unwrap();
        let p = softmax_channels(&two).unwrap();
        assert!((p.data()[0] - 0.25).abs() < 1e-12);
        assert!((p.data()[1] - 0.75).abs() < 1e-12);

        assert!(softmax_channels(&Tensor::<f32>::zeros(&[1, 1, 2, 2]).unwrap()).is_err());
    }

    #[test]
    fn linear_matches_hand_product() {
        let x = t(&[2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0]);
        let w = t(&[2, 3], vec![1.0, 0.0, 1.0, 0.5, 0.5, 0.5]);
        let b = t(&[2], vec![10.0, 20.0]);
        let y = linear(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[14.0, 23.0, 10.0, 20.0]);
    }
}
