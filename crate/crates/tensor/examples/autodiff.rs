//! Fits a two-layer convolutional edge detector with Adam, then checks the
//! tape gradients of the fitted model against central differences in f64.
//!
//! `cargo run --release -p ssgan-tensor --example autodiff`

use std::collections::BTreeMap;

use ssgan_tensor::{finite_diff_check, ops, Adam, AdamConfig, Prng, Result, Tape, Tensor, Var};

fn model(t: &mut Tape<f32>, x: Var, p: &BTreeMap<String, Var>) -> Result<Var> {
    let h = t.conv2d(x, p["k1"], p["b1"], 1, 1)?;
    let h = t.leaky_relu(h, 0.2)?;
    t.conv2d(h, p["k2"], p["b2"], 1, 1)
}

fn main() -> Result<()> {
    let mut rng = Prng::new(3);
    // Target: a fixed horizontal-gradient filter applied to random images.
    let sobel = Tensor::from_vec(&[1, 1, 3, 3], vec![-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0])?;
    let zero = Tensor::zeros(&[1])?;
    let mut params = BTreeMap::from([
        ("k1".to_string(), rng.normal_tensor(&[4, 1, 3, 3], 0.0, 0.3)?),
        ("b1".to_string(), Tensor::zeros(&[4])?),
        ("k2".to_string(), rng.normal_tensor(&[1, 4, 3, 3], 0.0, 0.3)?),
        ("b2".to_string(), Tensor::zeros(&[1])?),
    ]);
    let mut adam = Adam::new(AdamConfig { lr: 0.01, ..AdamConfig::default() });

    for step in 0..=300 {
        let x = rng.uniform(&[8, 1, 12, 12], -1.0, 1.0)?;
        let y = ops::conv2d(&x, &sobel, &zero, 1, 1)?;
        let mut t = Tape::new();
        let vars: BTreeMap<String, Var> = params.iter().map(|(k, v)| (k.clone(), t.param(v.clone()))).collect();
        let xv = t.constant(x);
        let pred = model(&mut t, xv, &vars)?;
        let neg = t.constant(y.map(|v| -v));
        let diff = t.add(pred, neg)?;
        let sq = t.custom(
            "square",
            &[diff],
            t.value(diff).map(|v| v * v),
            Box::new(|g, xs| vec![Some(Tensor::from_vec(xs[0].dims(), xs[0].data().iter().zip(g.data()).map(|(a, b)| 2.0 * a * b).collect()).unwrap())]),
        );
        let loss = t.mean(sq);
        if step % 50 == 0 {
            println!("step {step:3}  mse {:.5}", t.value(loss).item()?);
        }
        let grads = t.backward(loss)?;
        let named = vars.iter().map(|(k, v)| (k.clone(), grads.get(*v).expect("param").clone())).collect();
        adam.step(&mut params, &named)?;
    }

    // The fitted weights in f64, with tanh in place of the leaky ReLU so no
    // difference step straddles a kink. Map order: b1, b2, k1, k2.
    let x = rng.uniform::<f64>(&[1, 1, 6, 6], -1.0, 1.0)?;
    let p64: Vec<Tensor<f64>> = params.values().map(|p| p.cast()).collect();
    let report = finite_diff_check(
        |t, v| {
            let xv = t.constant(x.clone());
            let h = t.conv2d(xv, v[2], v[0], 1, 1)?;
            let h = t.tanh(h)?;
            let o = t.conv2d(h, v[3], v[1], 1, 1)?;
            let w = Tensor::from_vec(&[1, 1, 6, 6], (0..36).map(|i| (i as f64 * 0.37).sin()).collect())?;
            t.weighted_sum(o, w)
        },
        &p64,
        1e-5,
    )?;
    println!("finite differences: max rel error {:.2e} over {} coordinates", report.max_rel_error, report.coordinates);
    Ok(())
}
