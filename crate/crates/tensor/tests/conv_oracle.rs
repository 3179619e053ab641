//! Convolution kernels against a direct quadruple-loop evaluation.

use proptest::prelude::*;
use ssgan_tensor::{ops, Prng, Tensor};

/// Direct evaluation of the strided, zero-padded cross-correlation.
fn naive_conv2d(x: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    let [n, cin, h, w] = x.nchw();
    let [cout, _, kh, kw] = k.nchw();
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * cout * ho * wo];
    for bi in 0..n {
        for co in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b.data()[co];
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = x.data()[((bi * cin + ci) * h + iy as usize) * w + ix as usize];
                                let kv = k.data()[((co * cin + ci) * kh + ky) * kw + kx];
                                acc += xv * kv;
                            }
                        }
                    }
                    out[((bi * cout + co) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    Tensor::from_vec(&[n, cout, ho, wo], out).unwrap()
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-12))
        .fold(0.0, f64::max)
}

#[test]
fn conv2d_matches_naive_loops_on_random_cases() {
    let mut rng = Prng::new(0xC0_4E);
    for case in 0..200 {
        let n = 1 + rng.below(2);
        let cin = 1 + rng.below(3);
        let cout = 1 + rng.below(3);
        let h = 3 + rng.below(6);
        let w = 3 + rng.below(6);
        let kh = 1 + rng.below(h.min(4));
        let kw = 1 + rng.below(w.min(4));
        let stride = 1 + rng.below(2);
        let pad = rng.below(2);
        let x: Tensor<f64> = rng.uniform(&[n, cin, h, w], -1.0, 1.0).unwrap();
        let k: Tensor<f64> = rng.uniform(&[cout, cin, kh, kw], -1.0, 1.0).unwrap();
        let b: Tensor<f64> = rng.uniform(&[cout], -1.0, 1.0).unwrap();
        let fast = ops::conv2d(&x, &k, &b, stride, pad).unwrap();
        let slow = naive_conv2d(&x, &k, &b, stride, pad);
        assert_eq!(fast.dims(), slow.dims(), "case {case}");
        let err = max_rel(fast.data(), slow.data());
        assert!(err < 1e-6, "case {case}: relative error {err}");
    }
}

#[test]
fn conv2d_f32_matches_f64_oracle() {
    let mut rng = Prng::new(17);
    let x: Tensor<f64> = rng.uniform(&[2, 3, 8, 8], -1.0, 1.0).unwrap();
    let k: Tensor<f64> = rng.uniform(&[3, 3, 4, 4], -1.0, 1.0).unwrap();
    let b: Tensor<f64> = rng.uniform(&[3], -1.0, 1.0).unwrap();
    let fast = ops::conv2d(&x.cast::<f32>(), &k.cast(), &b.cast(), 2, 1).unwrap();
    let slow = naive_conv2d(&x, &k, &b, 2, 1);
    for (a, e) in fast.data().iter().zip(slow.data()) {
        assert!((*a as f64 - e).abs() < 1e-5 * e.abs().max(1.0));
    }
}

fn adjoint_gap(seed: u64, n: usize, cin: usize, cout: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Option<f64> {
    let mut rng = Prng::new(seed);
    let a: Tensor<f64> = rng.uniform(&[n, cin, h, w], -1.0, 1.0).unwrap();
    let kernels: Tensor<f64> = rng.uniform(&[cout, cin, k, k], -1.0, 1.0).unwrap();
    let zero_out = Tensor::zeros(&[cout]).unwrap();
    let zero_in = Tensor::zeros(&[cin]).unwrap();
    let fwd = ops::conv2d(&a, &kernels, &zero_out, stride, pad).ok()?;
    let b: Tensor<f64> = rng.uniform(fwd.dims(), -1.0, 1.0).unwrap();
    // conv2d's [Cout, Cin, k, k] kernel is the transpose op's [Cin', Cout'] with roles swapped.
    let back = ops::conv2d_transpose(&b, &kernels, &zero_in, stride, pad).ok()?;
    if back.dims() != a.dims() {
        // Output extent is only recovered when (H + 2p - k) is a multiple of the stride.
        return None;
    }
    let lhs = fwd.dot(&b).unwrap();
    let rhs = a.dot(&back).unwrap();
    Some((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-12))
}

#[test]
fn transpose_is_adjoint_on_4x4() {
    let gap = adjoint_gap(5, 1, 1, 1, 4, 4, 2, 2, 0).unwrap();
    assert!(gap < 1e-5, "{gap}");
}

#[test]
fn transpose_is_adjoint_on_largest_listed_extents() {
    let gap = adjoint_gap(11, 2, 4, 3, 8, 8, 4, 2, 1).unwrap();
    assert!(gap < 1e-5, "{gap}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adjoint_identity_holds(
        seed in any::<u64>(),
        n in 1usize..=2,
        cin in 1usize..=4,
        cout in 1usize..=3,
        h in 4usize..=8,
        w in 4usize..=8,
        k in 1usize..=4,
        stride in 1usize..=2,
        pad in 0usize..=1,
    ) {
        if let Some(gap) = adjoint_gap(seed, n, cin, cout, h, w, k, stride, pad) {
            prop_assert!(gap < 1e-5, "gap {}", gap);
        }
    }

    #[test]
    fn softmax_sums_to_one_and_ignores_shifts(seed in any::<u64>(), shift in -50.0f64..50.0) {
        let mut rng = Prng::new(seed);
        let logits: Tensor<f32> = rng.uniform(&[2, 4, 3, 3], -8.0, 8.0).unwrap();
        let p = ops::softmax_channels(&logits).unwrap();
        let shifted = ops::softmax_channels(&logits.map(|v| v + shift as f32)).unwrap();
        let plane = 9;
        for b in 0..2 {
            for px in 0..plane {
                let s: f32 = (0..4).map(|c| p.data()[(b * 4 + c) * plane + px]).sum();
                prop_assert!((s - 1.0).abs() < 1e-6);
            }
        }
        for (a, b) in p.data().iter().zip(shifted.data()) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn forward_passes_stay_finite(seed in any::<u64>()) {
        let mut rng = Prng::new(seed);
        let x: Tensor<f32> = rng.uniform(&[2, 3, 8, 8], -10.0, 10.0).unwrap();
        let k: Tensor<f32> = rng.uniform(&[4, 3, 4, 4], -1.0, 1.0).unwrap();
        let y = ops::conv2d(&x, &k, &Tensor::zeros(&[4]).unwrap(), 2, 1).unwrap();
        prop_assert!(y.all_finite());
        let kt: Tensor<f32> = rng.uniform(&[4, 2, 4, 4], -1.0, 1.0).unwrap();
        let z = ops::conv2d_transpose(&y, &kt, &Tensor::zeros(&[2]).unwrap(), 2, 1).unwrap();
        prop_assert!(z.all_finite());
        let t = ops::activation(&z, ssgan_tensor::Activation::Tanh).unwrap();
        prop_assert!(t.all_finite());
    }
}
