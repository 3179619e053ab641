//! The finite-difference suite behind `ssgan gradcheck`: every
//! differentiable primitive, every loss, and a reduced generator plus
//! discriminator stack, all in f64.

use std::time::Instant;

use serde::Serialize;
use ssgan_tensor::{finite_diff_check, finite_diff_check_with, Activation, Coordinates, GradCheckReport, Prng, Tape, Tensor, Var};

use crate::error::Result;
use crate::loss;
use crate::models::{Bound, Discriminator, DiscriminatorSpec, Generator, GeneratorSpec, Mode};

pub const TOLERANCE: f64 = 1e-3;
pub const EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    /// Relative error, or an absolute one when `absolute` is set.
    pub max_rel_error: f64,
    pub absolute: bool,
    pub coordinates: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub tolerance: f64,
    pub checks: Vec<CheckResult>,
    pub seconds: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn text(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            s.push_str(&format!(
                "{:<4} {:<30} max {} err {:.2e} over {} coords\n",
                if c.passed { "ok" } else { "FAIL" },
                c.name,
                if c.absolute { "abs" } else { "rel" },
                c.max_rel_error,
                c.coordinates
            ));
        }
        s.push_str(&format!(
            "{} of {} checks passed at {:.0e} in {:.1} s\n",
            self.checks.iter().filter(|c| c.passed).count(),
            self.checks.len(),
            self.tolerance,
            self.seconds
        ));
        s
    }
}

fn uniform(rng: &mut Prng, dims: &[usize], scale: f64) -> Result<Tensor<f64>> {
    Ok(rng.uniform(dims, -scale, scale)?)
}

/// Keeps every value at least `gap` from zero so no step straddles a kink.
fn away_from_zero(rng: &mut Prng, dims: &[usize], gap: f64) -> Result<Tensor<f64>> {
    let mut t = uniform(rng, dims, 1.0)?;
    for v in t.data_mut() {
        while v.abs() < gap {
            *v = rng.next_f64() * 2.0 - 1.0;
        }
    }
    Ok(t)
}

/// Random projection to a scalar.
fn project(tape: &mut Tape<f64>, v: Var, rng_seed: u64) -> ssgan_tensor::Result<Var> {
    let dims = tape.value(v).dims().to_vec();
    let w = Prng::new(rng_seed).uniform(&dims, -1.0, 1.0)?;
    tape.weighted_sum(v, w)
}

fn record(out: &mut Vec<CheckResult>, name: &str, r: GradCheckReport) {
    out.push(CheckResult {
        name: name.to_string(),
        max_rel_error: r.max_rel_error,
        absolute: false,
        coordinates: r.coordinates,
        passed: r.passes(TOLERANCE),
    });
}

fn primitives(seed: u64, out: &mut Vec<CheckResult>) -> Result<()> {
    let mut rng = Prng::new(seed);
    let p = [uniform(&mut rng, &[2, 2, 5, 5], 1.0)?, uniform(&mut rng, &[3, 2, 3, 3], 1.0)?, uniform(&mut rng, &[3], 1.0)?];
    let r = finite_diff_check(|t, v| { let y = t.conv2d(v[0], v[1], v[2], 2, 1)?; project(t, y, seed ^ 1) }, &p, EPSILON)?;
    record(out, "conv2d", r);

    let p = [uniform(&mut rng, &[2, 3, 3, 3], 1.0)?, uniform(&mut rng, &[3, 2, 4, 4], 1.0)?, uniform(&mut rng, &[2], 1.0)?];
    let r = finite_diff_check(|t, v| { let y = t.conv2d_transpose(v[0], v[1], v[2], 2, 1)?; project(t, y, seed ^ 2) }, &p, EPSILON)?;
    record(out, "conv2d_transpose", r);

    let p = [uniform(&mut rng, &[3, 5], 1.0)?, uniform(&mut rng, &[4, 5], 1.0)?, uniform(&mut rng, &[4], 1.0)?];
    let r = finite_diff_check(|t, v| { let y = t.linear(v[0], v[1], v[2])?; project(t, y, seed ^ 3) }, &p, EPSILON)?;
    record(out, "linear", r);

    let p = [uniform(&mut rng, &[8, 3, 2, 2], 1.0)?, uniform(&mut rng, &[3], 1.0)?, uniform(&mut rng, &[3], 1.0)?];
    let r = finite_diff_check(|t, v| { let (y, _) = t.batch_norm_train(v[0], v[1], v[2])?; project(t, y, seed ^ 4) }, &p, EPSILON)?;
    record(out, "batch_norm (train)", r);

    let p = [uniform(&mut rng, &[2, 3, 2, 2], 1.0)?, uniform(&mut rng, &[3], 1.0)?, uniform(&mut rng, &[3], 1.0)?];
    let r = finite_diff_check(
        |t, v| { let y = t.batch_norm_infer(v[0], v[1], v[2], &[0.1, -0.2, 0.3], &[0.5, 1.5, 2.0])?; project(t, y, seed ^ 5) },
        &p,
        EPSILON,
    )?;
    record(out, "batch_norm (infer)", r);

    for (name, kind) in [("relu", Activation::Relu), ("leaky_relu", Activation::LeakyRelu(0.2)), ("tanh", Activation::Tanh)] {
        let p = [away_from_zero(&mut rng, &[2, 3, 4, 4], 1e-4)?];
        let r = finite_diff_check(|t, v| { let y = t.activation(v[0], kind)?; project(t, y, seed ^ 6) }, &p, EPSILON)?;
        record(out, name, r);
    }

    let p = [uniform(&mut rng, &[2, 4, 3, 3], 3.0)?];
    let r = finite_diff_check(|t, v| { let y = t.softmax_channels(v[0])?; project(t, y, seed ^ 7) }, &p, EPSILON)?;
    record(out, "softmax_channels", r);

    let p = [uniform(&mut rng, &[3, 2, 2, 2], 1.0)?, uniform(&mut rng, &[2, 2, 2, 2], 1.0)?];
    let r = finite_diff_check(
        |t, v| {
            let part = t.narrow_batch(v[0], 1, 2)?;
            let both = t.add(part, v[1])?;
            let flat = t.reshape(both, &[2, 8])?;
            let scaled = t.scale(flat, 1.7);
            let m = t.mean(scaled);
            let w = project(t, flat, seed ^ 8)?;
            t.add(m, w)
        },
        &p,
        EPSILON,
    )?;
    record(out, "narrow/add/reshape/scale", r);
    Ok(())
}

fn losses(seed: u64, out: &mut Vec<CheckResult>) -> Result<()> {
    let mut rng = Prng::new(seed ^ 0x10);
    let labels: Vec<u8> = (0..16).map(|i| [0, 1, 2, 255][(i * 7 + seed as usize) % 4]).collect();
    let labels = if labels.iter().all(|&l| l == 255) { vec![0; 16] } else { labels };
    let p = [uniform(&mut rng, &[1, 4, 4, 4], 2.0)?];
    let r = finite_diff_check(|t, v| loss::supervised_loss_on(t, v[0], &labels).map_err(to_tensor_err), &p, EPSILON)?;
    record(out, "supervised_loss", r);
    let r = finite_diff_check(|t, v| loss::unsupervised_real_loss_on(t, v[0]).map_err(to_tensor_err), &p, EPSILON)?;
    record(out, "unsupervised_real_loss", r);
    let r = finite_diff_check(|t, v| loss::unsupervised_fake_loss_on(t, v[0]).map_err(to_tensor_err), &p, EPSILON)?;
    record(out, "unsupervised_fake_loss", r);
    let r = finite_diff_check(|t, v| loss::generator_loss_on(t, v[0]).map_err(to_tensor_err), &p, EPSILON)?;
    record(out, "generator_loss", r);
    Ok(())
}

fn to_tensor_err(e: crate::Error) -> ssgan_tensor::TensorError {
    match e {
        crate::Error::Tensor(t) => t,
        other => ssgan_tensor::TensorError::Contract(other.to_string()),
    }
}

/// Reduced networks on 32x32 tiles: the full semi-supervised objective
/// differentiated with respect to every generator and discriminator
/// parameter, on a sample of coordinates per tensor.
/// Closest a ReLU input may sit to zero at the checked point.
pub const KINK_MARGIN: f64 = 1e-4;
/// Smallest analytic gradient the stack check samples.
pub const RESOLVABLE: f64 = 1e-6;
const DEAD: f64 = 1e-14;
/// Bound on the difference quotient of a zero-gradient coordinate.
pub const DEAD_TOLERANCE: f64 = 1e-9;
const MAX_DRAWS: u64 = 10_000;

struct StackPoint {
    g: Generator<f64>,
    d: Discriminator<f64>,
    noise: Tensor<f64>,
    real: Tensor<f64>,
    labels: Vec<u8>,
}

impl StackPoint {
    fn draw(rng: &mut Prng) -> Result<Self> {
        let gspec = GeneratorSpec {
            base_maps: 8,
            up_maps: vec![4, 2, 1],
            ..GeneratorSpec::new(1, 32, 32)
        };
        let dspec = DiscriminatorSpec {
            encoder_maps: vec![2, 2, 4, 4],
            decoder_maps: vec![4, 2, 2],
            ..DiscriminatorSpec::new(1)
        };
        // The 0.02 init leaves the first discriminator layer nearly flat on
        // fakes, crowding its inputs around the kink; any point will do.
        let mut g = Generator::<f32>::build(gspec, rng)?.cast::<f64>();
        let mut d = Discriminator::<f32>::build(dspec, rng)?.cast::<f64>();
        for p in g.state.params.values_mut().chain(d.state.params.values_mut()) {
            *p = uniform(rng, p.dims(), 1.0)?;
        }
        let noise = g.sample_noise(1, rng)?;
        let real = uniform(rng, &[1, 1, 32, 32], 1.0)?;
        let labels = (0..32 * 32).map(|_| rng.below(3) as u8).collect();
        Ok(StackPoint { g, d, noise, real, labels })
    }

    fn params(&self) -> Vec<Tensor<f64>> {
        self.g.state.params.values().chain(self.d.state.params.values()).cloned().collect()
    }

    /// All four losses summed, real and fake through D in train mode.
    fn loss(&self, t: &mut Tape<f64>, v: &[Var]) -> ssgan_tensor::Result<Var> {
        let n_g = self.g.state.params.len();
        let gv = Bound::from_vars(self.g.state.params.keys().cloned().zip(v[..n_g].iter().copied()));
        let dv = Bound::from_vars(self.d.state.params.keys().cloned().zip(v[n_g..].iter().copied()));
        let z = t.constant(self.noise.clone());
        let (fake, _) = self.g.forward_on(t, &gv, z, Mode::Train).map_err(to_tensor_err)?;
        let x = t.constant(self.real.clone());
        let (real_logits, _) = self.d.forward_on(t, &dv, x, Mode::Train).map_err(to_tensor_err)?;
        let (fake_logits, _) = self.d.forward_on(t, &dv, fake, Mode::Train).map_err(to_tensor_err)?;
        let sup = loss::supervised_loss_on(t, real_logits, &self.labels).map_err(to_tensor_err)?;
        let ur = loss::unsupervised_real_loss_on(t, real_logits).map_err(to_tensor_err)?;
        let uf = loss::unsupervised_fake_loss_on(t, fake_logits).map_err(to_tensor_err)?;
        let gl = loss::generator_loss_on(t, fake_logits).map_err(to_tensor_err)?;
        let a = t.add(sup, ur)?;
        let b = t.add(uf, gl)?;
        t.add(a, b)
    }

    fn eval(&self, params: &[Tensor<f64>]) -> Result<f64> {
        let mut t = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| t.param(p.clone())).collect();
        let l = self.loss(&mut t, &vars)?;
        Ok(t.value(l).item()?)
    }

    fn kink_margin(&self) -> Result<f64> {
        let mut t = Tape::new();
        let vars: Vec<Var> = self.params().into_iter().map(|p| t.param(p)).collect();
        self.loss(&mut t, &vars)?;
        Ok(t.kink_margin().unwrap_or(f64::INFINITY))
    }
}

/// Redraws weights and inputs until no ReLU input lies within
/// [`KINK_MARGIN`] of zero, then checks a sample of every parameter.
///
/// Biases feeding a train-mode batch norm have an exactly zero gradient, and
/// a handful of other coordinates sit below what a central difference can
/// resolve in f64 (round-off near 1e-10 on a loss of order one). Sampled
/// coordinates are drawn among those with `|gradient| >= RESOLVABLE`; the
/// zero-gradient parameters get a separate absolute check.
fn stack(seed: u64, out: &mut Vec<CheckResult>) -> Result<()> {
    let mut rng = Prng::new(seed ^ 0x20);
    let mut draws = 0;
    let point = loop {
        draws += 1;
        let p = StackPoint::draw(&mut rng)?;
        if p.kink_margin()? >= KINK_MARGIN {
            break p;
        }
        if draws == MAX_DRAWS {
            return Err(crate::Error::GradCheck(format!("no kink-free point in {MAX_DRAWS} draws")));
        }
    };
    let params = point.params();
    let grads = {
        let mut t = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| t.param(p.clone())).collect();
        let l = point.loss(&mut t, &vars)?;
        let g = t.backward(l)?;
        vars.iter().map(|v| g.get(*v).expect("parameter gradient").clone()).collect::<Vec<_>>()
    };
    let mut pick = Prng::new(seed ^ 0x21);
    let mut lists = Vec::new();
    let mut dead = Vec::new();
    for (pi, g) in grads.iter().enumerate() {
        let mut idx: Vec<usize> = (0..g.len()).filter(|&i| g.data()[i].abs() >= RESOLVABLE).collect();
        pick.shuffle(&mut idx);
        idx.truncate(4);
        idx.sort_unstable();
        lists.push(idx);
        if g.data().iter().all(|v| v.abs() < DEAD) {
            dead.push(pi);
        }
    }
    let r = finite_diff_check_with(|t, v| point.loss(t, v), &params, EPSILON, Coordinates::Listed(lists))?;
    record(out, "generator+discriminator", r);

    // Absolute check: the difference quotient must also vanish.
    let mut worst: f64 = 0.0;
    let mut coords = 0;
    for &pi in &dead {
        for i in 0..params[pi].len() {
            let mut w = params.clone();
            w[pi].data_mut()[i] += EPSILON;
            let plus = point.eval(&w)?;
            w[pi].data_mut()[i] -= 2.0 * EPSILON;
            let minus = point.eval(&w)?;
            worst = worst.max(((plus - minus) / (2.0 * EPSILON)).abs());
            coords += 1;
        }
    }
    out.push(CheckResult {
        name: "pre-normalization biases (abs)".to_string(),
        max_rel_error: worst,
        absolute: true,
        coordinates: coords,
        passed: worst <= DEAD_TOLERANCE,
    });
    Ok(())
}

pub fn run_suite(seed: u64) -> Result<SuiteReport> {
    let started = Instant::now();
    let mut checks = Vec::new();
    primitives(seed, &mut checks)?;
    losses(seed, &mut checks)?;
    stack(seed, &mut checks)?;
    Ok(SuiteReport {
        seed,
        tolerance: TOLERANCE,
        checks,
        seconds: started.elapsed().as_secs_f64(),
    })
}
