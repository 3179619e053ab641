//! Convolution kernels lowered to GEMM through im2col / col2im.
//!
//! Column buffers are laid out `[C * kH * kW, N * Ho * Wo]` so a whole batch
//! is a single matrix product.

use crate::error::{Result, TensorError};
use crate::float::Float;
use crate::tensor::{Shape, Tensor};

/// Geometry of a strided cross-correlation from an image of `channels x h x w`
/// to an output grid of `h_out x w_out`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.batch * self.h_out * self.w_out
    }
}

fn conv_out_extent(op: &'static str, axis: &'static str, size: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if size + 2 * pad < k {
        return Err(TensorError::config(
            op,
            format!("axis {axis}: padded extent {} is smaller than kernel {k}", size + 2 * pad),
        ));
    }
    Ok((size + 2 * pad - k) / stride + 1)
}

fn check_stride(op: &'static str, stride: usize) -> Result<()> {
    if stride == 0 {
        return Err(TensorError::config(op, "stride must be positive"));
    }
    Ok(())
}

fn check_bias<F: Float>(op: &'static str, bias: &Tensor<F>, channels: usize) -> Result<()> {
    if bias.len() != channels {
        return Err(TensorError::shape(op, "bias", channels, bias.len()));
    }
    Ok(())
}

/// Extents check for `conv2d`; returns the geometry on the input side.
pub fn conv2d_geom<F: Float>(
    input: &Tensor<F>,
    kernels: &Tensor<F>,
    bias: &Tensor<F>,
    stride: usize,
    pad: usize,
) -> Result<(ConvGeom, usize)> {
    const OP: &str = "conv2d";
    check_stride(OP, stride)?;
    if kernels.shape().rank() != 4 {
        return Err(TensorError::config(OP, "kernels must have 4 axes [Cout, Cin, kH, kW]"));
    }
    let [n, c, h, w] = input.nchw();
    let [c_out, c_in, kh, kw] = kernels.nchw();
    if c_in != c {
        return Err(TensorError::shape(OP, "C_in", c_in, c));
    }
    check_bias(OP, bias, c_out)?;
    let h_out = conv_out_extent(OP, "H", h, kh, stride, pad)?;
    let w_out = conv_out_extent(OP, "W", w, kw, stride, pad)?;
    Ok((
        ConvGeom {
            batch: n,
            channels: c,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            h_out,
            w_out,
        },
        c_out,
    ))
}

/// Extents check for `conv2d_transpose`; the returned geometry describes the
/// equivalent forward convolution from the (larger) output back to the input.
pub fn conv2d_transpose_geom<F: Float>(
    input: &Tensor<F>,
    kernels: &Tensor<F>,
    bias: &Tensor<F>,
    stride: usize,
    pad: usize,
) -> Result<(ConvGeom, usize)> {
    const OP: &str = "conv2d_transpose";
    check_stride(OP, stride)?;
    if kernels.shape().rank() != 4 {
        return Err(TensorError::config(OP, "kernels must have 4 axes [Cin, Cout, kH, kW]"));
    }
    let [n, c, h, w] = input.nchw();
    let [c_in, c_out, kh, kw] = kernels.nchw();
    if c_in != c {
        return Err(TensorError::shape(OP, "C_in", c_in, c));
    }
    check_bias(OP, bias, c_out)?;
    let out = |axis: &'static str, size: usize, k: usize| -> Result<usize> {
        let grown = (size - 1) * stride + k;
        if grown <= 2 * pad {
            return Err(TensorError::config(
                OP,
                format!("axis {axis}: computed output extent {} is not positive", grown as i64 - 2 * pad as i64),
            ));
        }
        Ok(grown - 2 * pad)
    };
    let h_big = out("H", h, kh)?;
    let w_big = out("W", w, kw)?;
    Ok((
        ConvGeom {
            batch: n,
            channels: c_out,
            h: h_big,
            w: w_big,
            kh,
            kw,
            stride,
            pad,
            h_out: h,
            w_out: w,
        },
        c_out,
    ))
}

pub fn im2col<F: Float>(image: &[F], g: &ConvGeom) -> Vec<F> {
    let cols = g.cols();
    let plane = g.h_out * g.w_out;
    let mut out = vec![F::zero(); g.rows() * cols];
    for c in 0..g.channels {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst_row = &mut out[row * cols..(row + 1) * cols];
                for n in 0..g.batch {
                    let src = &image[(n * g.channels + c) * g.h * g.w..][..g.h * g.w];
                    let dst = &mut dst_row[n * plane..(n + 1) * plane];
                    for oy in 0..g.h_out {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * g.w..][..g.w];
                        let dst_row = &mut dst[oy * g.w_out..(oy + 1) * g.w_out];
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Scatter-adds a column buffer back onto an image (adjoint of `im2col`).
pub fn col2im<F: Float>(col: &[F], g: &ConvGeom) -> Vec<F> {
    let cols = g.cols();
    let plane = g.h_out * g.w_out;
    let mut image = vec![F::zero(); g.batch * g.channels * g.h * g.w];
    for c in 0..g.channels {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src_row = &col[row * cols..(row + 1) * cols];
                for n in 0..g.batch {
                    let dst = &mut image[(n * g.channels + c) * g.h * g.w..][..g.h * g.w];
                    let src = &src_row[n * plane..(n + 1) * plane];
                    for oy in 0..g.h_out {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let dst_row = &mut dst[iy as usize * g.w..][..g.w];
                        let src_row = &src[oy * g.w_out..(oy + 1) * g.w_out];
                        for (ox, &s) in src_row.iter().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst_row[ix as usize] += s;
                            }
                        }
                    }
                }
            }
        }
    }
    image
}

/// `[N, C, P] -> [C, N, P]`.
pub fn batch_to_channel_major<F: Float>(data: &[F], n: usize, c: usize, plane: usize) -> Vec<F> {
    let mut out = vec![F::zero(); data.len()];
    for b in 0..n {
        for ch in 0..c {
            out[(ch * n + b) * plane..][..plane].copy_from_slice(&data[(b * c + ch) * plane..][..plane]);
        }
    }
    out
}

/// `[C, N, P] -> [N, C, P]`.
pub fn channel_to_batch_major<F: Float>(data: &[F], n: usize, c: usize, plane: usize) -> Vec<F> {
    let mut out = vec![F::zero(); data.len()];
    for ch in 0..c {
        for b in 0..n {
            out[(b * c + ch) * plane..][..plane].copy_from_slice(&data[(ch * n + b) * plane..][..plane]);
        }
    }
    out
}

fn add_channel_bias<F: Float>(data: &mut [F], bias: &[F], plane: usize) {
    for (chunk_idx, chunk) in data.chunks_mut(plane).enumerate() {
        let b = bias[chunk_idx % bias.len()];
        for v in chunk {
            *v += b;
        }
    }
}

/// Per-channel sum of an NCHW gradient.
fn channel_sums<F: Float>(grad: &[F], channels: usize, plane: usize) -> Vec<F> {
    let mut out = vec![F::zero(); channels];
    for (chunk_idx, chunk) in grad.chunks(plane).enumerate() {
        out[chunk_idx % channels] += chunk.iter().copied().sum::<F>();
    }
    out
}

pub fn conv2d_forward<F: Float>(
    input: &Tensor<F>,
    kernels: &Tensor<F>,
    bias: &Tensor<F>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<F>> {
    let (g, c_out) = conv2d_geom(input, kernels, bias, stride, pad)?;
    let col = im2col(input.data(), &g);
    let k = g.rows();
    let np = g.cols();
    let mut y2 = vec![F::zero(); c_out * np];
    F::gemm(c_out, k, np, F::one(), kernels.data(), k, 1, &col, np, 1, F::zero(), &mut y2, np, 1);
    let plane = g.h_out * g.w_out;
    let mut y = channel_to_batch_major(&y2, g.batch, c_out, plane);
    add_channel_bias(&mut y, bias.data(), plane);
    Ok(Tensor::from_parts(
        Shape::new(&[g.batch, c_out, g.h_out, g.w_out])?,
        y,
    ))
}

pub struct ConvGrads<F> {
    pub input: Option<Tensor<F>>,
    pub kernels: Option<Tensor<F>>,
    pub bias: Option<Tensor<F>>,
}

pub fn conv2d_backward<F: Float>(
    input: &Tensor<F>,
    kernels: &Tensor<F>,
    bias: &Tensor<F>,
    stride: usize,
    pad: usize,
    grad_out: &Tensor<F>,
    need: [bool; 3],
) -> Result<ConvGrads<F>> {
    let (g, c_out) = conv2d_geom(input, kernels, bias, stride, pad)?;
    let k = g.rows();
    let np = g.cols();
    let plane = g.h_out * g.w_out;
    let dy2 = batch_to_channel_major(grad_out.data(), g.batch, c_out, plane);

    let d_input = if need[0] {
        let mut dcol = vec![F::zero(); k * np];
        // dcol = W^T dy2
        F::gemm(k, c_out, np, F::one(), kernels.data(), 1, k, &dy2, np, 1, F::zero(), &mut dcol, np, 1);
        Some(Tensor::from_parts(input.shape().clone(), col2im(&dcol, &g)))
    } else {
        None
    };
    let d_kernels = if need[1] {
        let col = im2col(input.data(), &g);
        let mut dw = vec![F::zero(); c_out * k];
        // dW = dy2 col^T
        F::gemm(c_out, np, k, F::one(), &dy2, np, 1, &col, 1, np, F::zero(), &mut dw, k, 1);
        Some(Tensor::from_parts(kernels.shape().clone(), dw))
    } else {
        None
    };
    let d_bias = need[2].then(|| {
        Tensor::from_parts(
            bias.shape().clone(),
            channel_sums(grad_out.data(), c_out, plane),
        )
    });
    Ok(ConvGrads {
        input: d_input,
        kernels: d_kernels,
        bias: d_bias,
    })
}

pub fn conv2d_transpose_forward<F: Float>(
    input: &Tensor<F>,
    kernels: &Tensor<F>,
    bias: &Tensor<F>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<F>> {
    let (g, c_out) = conv2d_transpose_geom(input, kernels, bias, stride, pad)?;
    let c_in = input.nchw()[1];
    let k = g.rows();
    let np = g.cols();
    let x2 = batch_to_channel_major(input.data(), g.batch, c_in, g.h_out * g.w_out);
    let mut cols = vec![F::zero(); k * np];
    // cols = Wmat^T x2, Wmat is [Cin, Cout*kH*kW]
    F::gemm(k, c_in, np, F::one(), kernels.data(), 1, k, &x2, np, 1, F::zero(), &mut cols, np, 1);
    let mut y = col2im(&cols, &g);
    add_channel_bias(&mut y, bias.data(), g.h * g.w);
    Ok(Tensor::from_parts(Shape::new(&[g.batch, c_out, g.h, g.w])?, y))
}

pub fn conv2d_transpose_backward<F: Float>(
    input: &Tensor<F>,
    kernels: &Tensor<F>,
    bias: &Tensor<F>,
    stride: usize,
    pad: usize,
    grad_out: &Tensor<F>,
    need: [bool; 3],
) -> Result<ConvGrads<F>> {
    let (g, c_out) = conv2d_transpose_geom(input, kernels, bias, stride, pad)?;
    let c_in = input.nchw()[1];
    let k = g.rows();
    let np = g.cols();
    let plane = g.h_out * g.w_out;
    let dcols = if need[0] || need[1] {
        im2col(grad_out.data(), &g)
    } else {
        Vec::new()
    };
    let d_input = if need[0] {
        let mut dx2 = vec![F::zero(); c_in * np];
        F::gemm(c_in, k, np, F::one(), kernels.data(), k, 1, &dcols, np, 1, F::zero(), &mut dx2, np, 1);
        Some(Tensor::from_parts(
            input.shape().clone(),
            channel_to_batch_major(&dx2, g.batch, c_in, plane),
        ))
    } else {
        None
    };
    let d_kernels = if need[1] {
        let x2 = batch_to_channel_major(input.data(), g.batch, c_in, plane);
        let mut dw = vec![F::zero(); c_in * k];
        // dW = x2 dcols^T
        F::gemm(c_in, np, k, F::one(), &x2, np, 1, &dcols, 1, np, F::zero(), &mut dw, k, 1);
        Some(Tensor::from_parts(kernels.shape().clone(), dw))
    } else {
        None
    };
    let d_bias = need[2].then(|| {
        Tensor::from_parts(
            bias.shape().clone(),
            channel_sums(grad_out.data(), c_out, g.h * g.w),
        )
    });
    Ok(ConvGrads {
        input: d_input,
        kernels: d_kernels,
        bias: d_bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(dims: &[usize], v: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(dims, v).unwrap()
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        let g = ConvGeom {
            batch: 2,
            channels: 2,
            h: 5,
            w: 4,
            kh: 3,
            kw: 2,
            stride: 2,
            pad: 1,
            h_out: 3,
            w_out: 3,
        };
        let img: Vec<f64> = (0..g.batch * g.channels * g.h * g.w).map(|i| (i as f64 * 0.37).sin()).collect();
        let col: Vec<f64> = (0..g.rows() * g.cols()).map(|i| (i as f64 * 0.11).cos()).collect();
        let lhs: f64 = im2col(&img, &g).iter().zip(&col).map(|(a, b)| a * b).sum();
        let rhs: f64 = img.iter().zip(col2im(&col, &g)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn transpose_output_extent() {
        let x = Tensor::<f64>::zeros(&[1, 3, 4, 5]).unwrap();
        let k = Tensor::<f64>::zeros(&[3, 2, 4, 4]).unwrap();
        let b = Tensor::<f64>::zeros(&[2]).unwrap();
        let y = conv2d_transpose_forward(&x, &k, &b, 2, 1).unwrap();
        assert_eq!(y.dims(), &[1, 2, 8, 10]);
    }

    #[test]
    fn channel_mismatch_names_axis() {
        let x = t(&[1, 2, 3, 3], vec![0.0; 18]);
        let k = t(&[1, 3, 1, 1], vec![0.0; 3]);
        let b = t(&[1], vec![0.0]);
        let err = conv2d_forward(&x, &k, &b, 1, 0).unwrap_err();
        assert!(matches!(err, TensorError::Shape { axis: "C_in", .. }), "{err}");
    }

    #[test]
    fn kernel_larger_than_padded_input_is_config_error() {
        let x = t(&[1, 1, 2, 2], vec![0.0; 4]);
        let k = t(&[1, 1, 3, 3], vec![0.0; 9]);
        let b = t(&[1], vec![0.0]);
        assert!(matches!(
            conv2d_forward(&x, &k, &b, 1, 0),
            Err(TensorError::Config { .. })
        ));
    }

    #[test]
    fn transpose_rejects_nonpositive_output() {
        let x = t(&[1, 1, 1, 1], vec![1.0]);
        let k = t(&[1, 1, 2, 2], vec![1.0; 4]);
        let b = t(&[1], vec![0.0]);
        assert!(conv2d_transpose_forward(&x, &k, &b, 1, 1).is_err());
    }
}
