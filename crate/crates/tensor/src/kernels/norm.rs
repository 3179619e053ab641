use crate::error::{Result, TensorError};
use crate::float::Float;
use crate::tensor::Tensor;

/// Variance stabilizer added before the square root.
pub const BN_EPS: f64 = 1e-5;
/// Weight kept on the old running statistic at each update.
pub const BN_MOMENTUM: f64 = 0.9;

/// Per-channel statistics of one training-mode batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<F> {
    pub mean: Vec<F>,
    /// Biased (population) variance used for normalization.
    pub var: Vec<F>,
    /// Number of values per channel.
    pub population: usize,
}

impl<F: Float> BatchStats<F> {
    /// Folds these statistics into running estimates with momentum 0.9.
    /// The running variance receives the unbiased estimate.
    pub fn update_running(&self, running_mean: &mut [F], running_var: &mut [F]) {
        let keep = F::from_f64(BN_MOMENTUM);
        let take = F::one() - keep;
        let m = F::from_f64(self.population as f64);
        let unbias = m / (m - F::one());
        for (c, (rm, rv)) in running_mean.iter_mut().zip(running_var.iter_mut()).enumerate() {
            *rm = keep * *rm + take * self.mean[c];
            *rv = keep * *rv + take * self.var[c] * unbias;
        }
    }
}

pub(crate) struct BnSaved<F> {
    pub x_hat: Vec<F>,
    pub inv_std: Vec<F>,
}

fn check_affine<F: Float>(input: &Tensor<F>, gamma: &Tensor<F>, beta: &Tensor<F>) -> Result<[usize; 4]> {
    let dims = input.nchw();
    if gamma.len() != dims[1] {
        return Err(TensorError::shape("batch_norm", "gamma", dims[1], gamma.len()));
    }
    if beta.len() != dims[1] {
        return Err(TensorError::shape("batch_norm", "beta", dims[1], beta.len()));
    }
    Ok(dims)
}

pub(crate) fn batch_norm_train<F: Float>(
    input: &Tensor<F>,
    gamma: &Tensor<F>,
    beta: &Tensor<F>,
) -> Result<(Tensor<F>, BatchStats<F>, BnSaved<F>)> {
    let [n, c, h, w] = check_affine(input, gamma, beta)?;
    let plane = h * w;
    let m = n * plane;
    if m < 2 {
        return Err(TensorError::DegenerateStatistics {
            channel: 0,
            population: m,
        });
    }
    let x = input.data();
    let mf = F::from_f64(m as f64);
    let eps = F::from_f64(BN_EPS);
    let mut mean = vec![F::zero(); c];
    let mut var = vec![F::zero(); c];
    for ch in 0..c {
        let mut s = F::zero();
        for b in 0..n {
            s += x[(b * c + ch) * plane..][..plane].iter().copied().sum::<F>();
        }
        let mu = s / mf;
        let mut ss = F::zero();
        for b in 0..n {
            for &v in &x[(b * c + ch) * plane..][..plane] {
                let d = v - mu;
                ss += d * d;
            }
        }
        mean[ch] = mu;
        var[ch] = ss / mf;
    }
    let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
    let mut x_hat = vec![F::zero(); x.len()];
    let mut y = vec![F::zero(); x.len()];
    let (g, bt) = (gamma.data(), beta.data());
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * plane;
            for i in off..off + plane {
                let xh = (x[i] - mean[ch]) * inv_std[ch];
                x_hat[i] = xh;
                y[i] = g[ch] * xh + bt[ch];
            }
        }
    }
    Ok((
        Tensor::from_parts(input.shape().clone(), y),
        BatchStats {
            mean,
            var,
            population: m,
        },
        BnSaved { x_hat, inv_std },
    ))
}

/// Returns (d_input, d_gamma, d_beta).
pub(crate) fn batch_norm_train_backward<F: Float>(
    grad_out: &Tensor<F>,
    gamma: &Tensor<F>,
    saved: &BnSaved<F>,
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let [n, c, h, w] = grad_out.nchw();
    let plane = h * w;
    let mf = F::from_f64((n * plane) as f64);
    let dy = grad_out.data();
    let mut d_gamma = vec![F::zero(); c];
    let mut d_beta = vec![F::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * plane;
            for i in off..off + plane {
                d_beta[ch] += dy[i];
                d_gamma[ch] += dy[i] * saved.x_hat[i];
            }
        }
    }
    let mut dx = vec![F::zero(); dy.len()];
    let g = gamma.data();
    for b in 0..n {
        for ch in 0..c {
            let scale = g[ch] * saved.inv_std[ch] / mf;
            let off = (b * c + ch) * plane;
            for i in off..off + plane {
                dx[i] = scale * (mf * dy[i] - d_beta[ch] - saved.x_hat[i] * d_gamma[ch]);
            }
        }
    }
    (dx, d_gamma, d_beta)
}

/// Normalizes with fixed running statistics. Returns (output, x_hat, inv_std).
pub(crate) fn batch_norm_infer<F: Float>(
    input: &Tensor<F>,
    gamma: &Tensor<F>,
    beta: &Tensor<F>,
    running_mean: &[F],
    running_var: &[F],
) -> Result<(Tensor<F>, BnSaved<F>)> {
    let [n, c, h, w] = check_affine(input, gamma, beta)?;
    if running_mean.len() != c {
        return Err(TensorError::shape("batch_norm", "running_mean", c, running_mean.len()));
    }
    if running_var.len() != c {
        return Err(TensorError::shape("batch_norm", "running_var", c, running_var.len()));
    }
    let plane = h * w;
    let eps = F::from_f64(BN_EPS);
    let inv_std: Vec<F> = running_var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
    let x = input.data();
    let mut x_hat = vec![F::zero(); x.len()];
    let mut y = vec![F::zero(); x.len()];
    let (g, bt) = (gamma.data(), beta.data());
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * plane;
            for i in off..off + plane {
                let xh = (x[i] - running_mean[ch]) * inv_std[ch];
                x_hat[i] = xh;
                y[i] = g[ch] * xh + bt[ch];
            }
        }
    }
    Ok((Tensor::from_parts(input.shape().clone(), y), BnSaved { x_hat, inv_std }))
}

pub(crate) fn batch_norm_infer_backward<F: Float>(
    grad_out: &Tensor<F>,
    gamma: &Tensor<F>,
    saved: &BnSaved<F>,
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let [n, c, h, w] = grad_out.nchw();
    let plane = h * w;
    let dy = grad_out.data();
    let g = gamma.data();
    let mut dx = vec![F::zero(); dy.len()];
    let mut d_gamma = vec![F::zero(); c];
    let mut d_beta = vec![F::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * plane;
            for i in off..off + plane {
                dx[i] = dy[i] * g[ch] * saved.inv_std[ch];
                d_gamma[ch] += dy[i] * saved.x_hat[i];
                d_beta[ch] += dy[i];
            }
        }
    }
    (dx, d_gamma, d_beta)
}
