//! Semi-supervised adversarial objective over per-pixel (n+1)-class logits.
//!
//! Every term is a mean of per-pixel negative log-probabilities. Log
//! probabilities are floored at `ln(1e-7)` so saturated pixels stay finite;
//! a floored pixel contributes no gradient.

use serde::{Deserialize, Serialize};
use ssgan_tensor::{Float, Tape, Tensor, Var};

use crate::error::{Error, Result};
use crate::models::{FAKE_CLASS, NUM_CLASSES, NUM_LOGITS};

pub const PROB_FLOOR: f64 = 1e-7;
/// Mask value for pixels without a label.
pub const IGNORE: u8 = 255;

/// Per-step loss values, all finite and non-negative.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub sup: f32,
    pub unsup_real: f32,
    pub unsup_fake: f32,
    pub d_total: f32,
    pub g_loss: f32,
}

impl LossBreakdown {
    /// Name of the first non-finite component, if any.
    pub fn non_finite(&self) -> Option<&'static str> {
        [
            ("sup", self.sup),
            ("unsup_real", self.unsup_real),
            ("unsup_fake", self.unsup_fake),
            ("d_total", self.d_total),
            ("g_loss", self.g_loss),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

/// `sup + lambda_u * (unsup_real + unsup_fake)`.
pub fn discriminator_loss(sup: f32, unsup_real: f32, unsup_fake: f32, lambda_u: f32) -> Result<f32> {
    for (name, v) in [("sup", sup), ("unsup_real", unsup_real), ("unsup_fake", unsup_fake), ("lambda_u", lambda_u)] {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                step: 0,
                component: name.into(),
            });
        }
    }
    if lambda_u < 0.0 {
        return Err(Error::Config(format!("lambda_u must be >= 0, got {lambda_u}")));
    }
    Ok(sup + lambda_u * (unsup_real + unsup_fake))
}

#[derive(Clone, Copy)]
enum Target<'a> {
    /// Cross-entropy to the mask class; `IGNORE` pixels are skipped.
    Labels(&'a [u8]),
    /// `-log(1 - p_fake)`.
    Real,
    /// `-log(p_fake)`.
    Fake,
}

fn check_logits<F: Float>(logits: &Tensor<F>) -> Result<(usize, usize)> {
    let dims = logits.dims();
    if dims.len() != 4 || dims[1] != NUM_LOGITS {
        return Err(Error::Extent(format!(
            "expected logits [N, {NUM_LOGITS}, H, W], got {dims:?}"
        )));
    }
    Ok((dims[0], dims[2] * dims[3]))
}

/// Log-sum-exp over all channels and over the real channels.
fn log_partitions<F: Float>(x: &[F; NUM_LOGITS]) -> (F, F) {
    let lse = |xs: &[F]| {
        let m = xs.iter().copied().fold(F::neg_infinity(), F::max);
        m + xs.iter().map(|&v| (v - m).exp()).sum::<F>().ln()
    };
    (lse(&x[..]), lse(&x[..NUM_CLASSES]))
}

/// Mean loss and its gradient with respect to the logits.
fn fused<F: Float>(logits: &Tensor<F>, target: Target<'_>) -> Result<(F, Vec<F>)> {
    let (n, plane) = check_logits(logits)?;
    if let Target::Labels(labels) = target {
        if labels.len() != n * plane {
            return Err(Error::Extent(format!(
                "mask holds {} pixels, logits {}",
                labels.len(),
                n * plane
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&v| v > 2 && v != IGNORE) {
            return Err(Error::Data(format!("mask value {bad} outside {{0, 1, 2, 255}}")));
        }
    }
    let floor = F::from_f64(PROB_FLOOR.ln());
    let x = logits.data();
    let mut grad = vec![F::zero(); x.len()];
    let mut total = 0.0f64;
    let mut count = 0usize;
    for b in 0..n {
        let base = b * NUM_LOGITS * plane;
        for p in 0..plane {
            let idx = |c: usize| base + c * plane + p;
            let label = match target {
                Target::Labels(l) => {
                    let v = l[b * plane + p];
                    if v == IGNORE {
                        continue;
                    }
                    Some(v as usize)
                }
                _ => None,
            };
            let xs: [F; NUM_LOGITS] = std::array::from_fn(|c| x[idx(c)]);
            let (lse_all, lse_real) = log_partitions(&xs);
            let log_p = match (target, label) {
                (Target::Labels(_), Some(y)) => xs[y] - lse_all,
                (Target::Real, _) => lse_real - lse_all,
                _ => xs[FAKE_CLASS] - lse_all,
            };
            count += 1;
            total += -log_p.max(floor).as_f64();
            if log_p < floor {
                continue;
            }
            for c in 0..NUM_LOGITS {
                let p_c = (xs[c] - lse_all).exp();
                let sub = match (target, label) {
                    (Target::Labels(_), Some(y)) => {
                        if c == y {
                            F::one()
                        } else {
                            F::zero()
                        }
                    }
                    (Target::Real, _) => {
                        if c < NUM_CLASSES {
                            (xs[c] - lse_real).exp()
                        } else {
                            F::zero()
                        }
                    }
                    _ => {
                        if c == FAKE_CLASS {
                            F::one()
                        } else {
                            F::zero()
                        }
                    }
                };
                grad[idx(c)] = p_c - sub;
            }
        }
    }
    if count == 0 {
        return Err(Error::Contract("empty supervision: every pixel is ignored".into()));
    }
    let inv = F::from_f64(1.0 / count as f64);
    for g in &mut grad {
        *g *= inv;
    }
    Ok((F::from_f64(total / count as f64), grad))
}

fn record<F: Float>(tape: &mut Tape<F>, name: &'static str, logits: Var, target: Target<'_>) -> Result<Var> {
    let value = tape.value(logits);
    let (loss, g) = fused(value, target)?;
    let grad = Tensor::from_vec(value.dims(), g)?;
    Ok(tape.custom(
        name,
        &[logits],
        Tensor::scalar(loss),
        Box::new(move |up, _| {
            let s = up.data()[0];
            vec![Some(grad.map(|v| v * s))]
        }),
    ))
}

/// `1 - p_fake` per pixel, as `exp(lse(real) - lse(all))`. Extents `[N, H, W]`.
pub fn real_prob<F: Float>(logits: &Tensor<F>) -> Result<Tensor<F>> {
    per_pixel(logits, |xs| {
        let (all, real) = log_partitions(xs);
        (real - all).exp()
    })
}

/// Softmax mass on the fake channel. Extents `[N, H, W]`.
pub fn p_fake<F: Float>(logits: &Tensor<F>) -> Result<Tensor<F>> {
    per_pixel(logits, |xs| {
        let (all, _) = log_partitions(xs);
        (xs[FAKE_CLASS] - all).exp()
    })
}

fn per_pixel<F: Float>(logits: &Tensor<F>, f: impl Fn(&[F; NUM_LOGITS]) -> F) -> Result<Tensor<F>> {
    let (n, plane) = check_logits(logits)?;
    let x = logits.data();
    let mut out = Vec::with_capacity(n * plane);
    for b in 0..n {
        let base = b * NUM_LOGITS * plane;
        for p in 0..plane {
            out.push(f(&std::array::from_fn(|c| x[base + c * plane + p])));
        }
    }
    let d = logits.dims();
    Ok(Tensor::from_vec(&[d[0], d[2], d[3]], out)?)
}

/// Mean cross-entropy over labeled pixels. `labels` is `[N, H, W]` flattened.
pub fn supervised_loss<F: Float>(logits: &Tensor<F>, labels: &[u8]) -> Result<F> {
    Ok(fused(logits, Target::Labels(labels))?.0)
}

/// `-mean log(1 - p_fake)` on real images.
pub fn unsupervised_real_loss<F: Float>(logits: &Tensor<F>) -> Result<F> {
    Ok(fused(logits, Target::Real)?.0)
}

/// `-mean log p_fake` on generated images.
pub fn unsupervised_fake_loss<F: Float>(logits: &Tensor<F>) -> Result<F> {
    Ok(fused(logits, Target::Fake)?.0)
}

/// Non-saturating generator objective: `-mean log(1 - p_fake)` on generated images.
pub fn generator_loss<F: Float>(logits: &Tensor<F>) -> Result<F> {
    Ok(fused(logits, Target::Real)?.0)
}

pub fn supervised_loss_on<F: Float>(tape: &mut Tape<F>, logits: Var, labels: &[u8]) -> Result<Var> {
    record(tape, "supervised_loss", logits, Target::Labels(labels))
}

pub fn unsupervised_real_loss_on<F: Float>(tape: &mut Tape<F>, logits: Var) -> Result<Var> {
    record(tape, "unsupervised_real_loss", logits, Target::Real)
}

pub fn unsupervised_fake_loss_on<F: Float>(tape: &mut Tape<F>, logits: Var) -> Result<Var> {
    record(tape, "unsupervised_fake_loss", logits, Target::Fake)
}

pub fn generator_loss_on<F: Float>(tape: &mut Tape<F>, logits: Var) -> Result<Var> {
    record(tape, "generator_loss", logits, Target::Real)
}
