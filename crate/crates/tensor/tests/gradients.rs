//! Tape gradients against central finite differences, in f64.

use ssgan_tensor::{finite_diff_check, Activation, Prng, Tape, Tensor, Var};

const TOL: f64 = 1e-3;
const EPS: f64 = 1e-5;

fn rand(rng: &mut Prng, dims: &[usize]) -> Tensor<f64> {
    rng.uniform(dims, -1.0, 1.0).unwrap()
}

/// Uniform draws with every magnitude at least `gap`, so kinks at zero are
/// never straddled by a finite-difference step.
fn rand_away_from_zero(rng: &mut Prng, dims: &[usize], gap: f64) -> Tensor<f64> {
    let mut t = rand(rng, dims);
    for v in t.data_mut() {
        while v.abs() < gap {
            *v = rng.next_f64() * 2.0 - 1.0;
        }
    }
    t
}

/// Random projection to a scalar so no gradient is degenerate by symmetry.
fn project(tape: &mut Tape<f64>, v: Var, seed: u64) -> ssgan_tensor::Result<Var> {
    let dims = tape.value(v).dims().to_vec();
    let w = Prng::new(seed).uniform(&dims, -1.0, 1.0).unwrap();
    tape.weighted_sum(v, w)
}

#[test]
fn conv2d_gradients() {
    let mut rng = Prng::new(1);
    let params = [rand(&mut rng, &[2, 2, 5, 5]), rand(&mut rng, &[3, 2, 3, 3]), rand(&mut rng, &[3])];
    let r = finite_diff_check(
        |t, v| {
            let y = t.conv2d(v[0], v[1], v[2], 2, 1)?;
            project(t, y, 99)
        },
        &params,
        EPS,
    )
    .unwrap();
    assert!(r.passes(TOL), "{r:?}");
}

#[test]
fn conv2d_transpose_gradients() {
    let mut rng = Prng::new(2);
    let params = [rand(&mut rng, &[2, 3, 3, 3]), rand(&mut rng, &[3, 2, 4, 4]), rand(&mut rng, &[2])];
    let r = finite_diff_check(
        |t, v| {
            let y = t.conv2d_transpose(v[0], v[1], v[2], 2, 1)?;
            project(t, y, 98)
        },
        &params,
        EPS,
    )
    .unwrap();
    assert!(r.passes(TOL), "{r:?}");
}

#[test]
fn conv2d_tanh_chain_gradients() {
    let mut rng = Prng::new(3);
    let params = [rand(&mut rng, &[1, 2, 6, 6]), rand(&mut rng, &[2, 2, 3, 3]), rand(&mut rng, &[2])];
    let r = finite_diff_check(
        |t, v| {
            let y = t.conv2d(v[0], v[1], v[2], 1, 1)?;
            let z = t.tanh(y)?;
            let s = t.sum(z);
            Ok(s)
        },
        &params,
        EPS,
    )
    .unwrap();
    assert!(r.passes(TOL), "{r:?}");
}

#[test]
fn linear_gradients() {
    let mut rng = Prng::new(4);
    let params = [rand(&mut rng, &[3, 5]), rand(&mut rng, &[4, 5]), rand(&mut rng, &[4])];
    let r = finite_diff_check(
        |t, v| {
            let y = t.linear(v[0], v[1], v[2])?;
            project(t, y, 97)
        },
        &params,
        EPS,
    )
    .unwrap();
    assert!(r.passes(TOL), "{r:?}");
}

#[test]
fn batch_norm_train_gradients_batch_of_eight() {
    let mut rng = Prng::new(5);
    let params = [rand(&mut rng, &[8, 3, 2, 2]), rand(&mut rng, &[3]), rand(&mut rng, &[3])];
    let r = finite_diff_check(
        |t, v| {
            let (y, _) = t.batch_norm_train(v[0], v[1], v[2])?;
            project(t, y, 96)
        },
        &params,
        EPS,
    )
    .unwrap();
    assert!(r.passes(TOL), "{r:?}");
}

#[test]
fn batch_norm_infer_gradients() {
    let mut rng = Prng::new(6);
    let params = [rand(&mut rng, &[2, 3, 2, 2]), rand(&mut rng, &[3]), rand(&mut rng, &[3])];
    let r = finite_diff_check(
        |t, v| {
            let y = t.batch_norm_infer(v[0], v[1], v[2], &[0.1, -0.2, 0.3], &[0.5, 1.5, 2.0])?;
            project(t, y, 95)
        },
        &params,
        EPS,
    )
    .unwrap();
    assert!(r.passes(TOL), "{r:?}");
}

#[test]
fn activation_gradients() {
    for (i, kind) in [Activation::Relu, Activation::LeakyRelu(0.2), Activation::Tanh].into_iter().enumerate() {
        let mut rng = Prng::new(10 + i as u64);
        let params = [rand_away_from_zero(&mut rng, &[2, 3, 4, 4], 1e-4)];
        let r = finite_diff_check(
            |t, v| {
                let y = t.activation(v[0], kind)?;
                project(t, y, 94)
            },
            &params,
            EPS,
        )
        .unwrap();
        assert!(r.passes(TOL), "{kind:?}: {r:?}");
    }
}

#[test]
fn softmax_gradients() {
    let mut rng = Prng::new(7);
    let params = [rand(&mut rng, &[2, 4, 3, 3]).map(|v| 3.0 * v)];
    let r = finite_diff_check(
        |t, v| {
            let y = t.softmax_channels(v[0])?;
            project(t, y, 93)
        },
        &params,
        EPS,
    )
    .unwrap();
    assert!(r.passes(TOL), "{r:?}");
}

#[test]
fn structural_op_gradients() {
    let mut rng = Prng::new(8);
    let params = [rand(&mut rng, &[3, 2, 2, 2]), rand(&mut rng, &[2, 2, 2, 2])];
    let r = finite_diff_check(
        |t, v| {
            let part = t.narrow_batch(v[0], 1, 2)?;
            let both = t.add(part, v[1])?;
            let flat = t.reshape(both, &[2, 8])?;
            let scaled = t.scale(flat, 1.7);
            let m = t.mean(scaled);
            let w = project(t, flat, 92)?;
            t.add(m, w)
        },
        &params,
        EPS,
    )
    .unwrap();
    assert!(r.passes(TOL), "{r:?}");
}
