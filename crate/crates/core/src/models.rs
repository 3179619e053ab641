//! Generator and fully convolutional (n+1)-class discriminator.
//!
//! The generator projects a 100-dimensional noise vector to `base_maps`
//! feature maps at `1/16` of the tile size, then upsamples four times with
//! 4x4 stride-2 transposed convolutions (ReLU and batch norm in between,
//! tanh at the output). With one output channel the feature-map sequence is
//! 256, 128, 64, 32, 1.
//!
//! The discriminator is an encoder-decoder: four 4x4 stride-2 convolutions
//! (32, 64, 128, 256 maps), three 4x4 stride-2 transposed convolutions
//! (128, 64, 32 maps), and a 4x4 stride-2 transposed-convolution head that
//! restores the input resolution with one logit per class: background, crop,
//! weed, and fake. LeakyReLU(0.2) follows every hidden layer; batch norm is
//! skipped on the first encoder layer and on the head.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use ssgan_tensor::{BatchStats, Float, Prng, RunningStats, Tape, Tensor, Var};

use crate::error::{Error, Result};

pub const NOISE_DIM: usize = 100;
/// Real classes: background, crop, weed.
pub const NUM_CLASSES: usize = 3;
/// Index of the extra class marking generated pixels.
pub const FAKE_CLASS: usize = 3;
pub const NUM_LOGITS: usize = NUM_CLASSES + 1;
pub const CLASS_NAMES: [&str; NUM_LOGITS] = ["background", "crop", "weed", "fake"];

pub const KERNEL: usize = 4;
pub const STRIDE: usize = 2;
pub const PAD: usize = 1;
pub const INIT_STD: f64 = 0.02;
pub const LEAKY_SLOPE: f64 = 0.2;

pub type Params<F> = BTreeMap<String, Tensor<F>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Batch statistics; running estimates may be updated by the caller.
    Train,
    /// Running statistics only.
    Infer,
}

/// Batch statistics gathered by a training-mode forward pass, keyed by
/// normalization layer.
#[derive(Debug, Clone, Default)]
pub struct NormUpdates<F>(pub Vec<(String, BatchStats<F>)>);

/// Trainable tensors plus the running statistics of every normalization layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NetState<F = f32> {
    pub params: Params<F>,
    pub running: BTreeMap<String, RunningStats<F>>,
}

impl<F: Float> NetState<F> {
    fn new() -> Self {
        NetState {
            params: BTreeMap::new(),
            running: BTreeMap::new(),
        }
    }

    /// Records every parameter on the tape, as differentiable leaves or as
    /// constants.
    pub fn bind(&self, tape: &mut Tape<F>, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(name, t)| {
                let v = if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                };
                (name.clone(), v)
            })
            .collect();
        Bound { vars }
    }

    /// Folds training-mode batch statistics into the running estimates.
    pub fn absorb(&mut self, updates: &NormUpdates<F>) -> Result<()> {
        for (name, stats) in &updates.0 {
            let rs = self
                .running
                .get_mut(name)
                .ok_or_else(|| Error::Contract(format!("no normalization layer named `{name}`")))?;
            stats.update_running(&mut rs.mean, &mut rs.var);
        }
        Ok(())
    }

    pub fn cast<G: Float>(&self) -> NetState<G> {
        NetState {
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            running: self
                .running
                .iter()
                .map(|(k, v)| {
                    let conv = |xs: &[F]| xs.iter().map(|x| G::from_f64(x.as_f64())).collect();
                    (
                        k.clone(),
                        RunningStats {
                            mean: conv(&v.mean),
                            var: conv(&v.var),
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().all(|t| t.all_finite())
            && self
                .running
                .values()
                .all(|r| r.mean.iter().chain(&r.var).all(|v| v.is_finite()))
    }

    pub fn num_params(&self) -> usize {
        self.params.values().map(|t| t.len()).sum()
    }

    fn add_weight(&mut self, rng: &mut Prng, name: &str, dims: &[usize]) -> Result<()> {
        let w = rng.normal_tensor(dims, 0.0, INIT_STD)?;
        self.insert(format!("{name}.weight"), w)
    }

    fn add_bias(&mut self, name: &str, channels: usize) -> Result<()> {
        self.insert(format!("{name}.bias"), Tensor::zeros(&[channels])?)
    }

    fn add_norm(&mut self, name: &str, channels: usize) -> Result<()> {
        let bn = format!("{name}.bn");
        self.insert(format!("{bn}.gamma"), Tensor::ones(&[channels])?)?;
        self.insert(format!("{bn}.beta"), Tensor::zeros(&[channels])?)?;
        self.running.insert(bn, RunningStats::new(channels));
        Ok(())
    }

    fn insert(&mut self, name: String, t: Tensor<F>) -> Result<()> {
        if self.params.insert(name.clone(), t).is_some() {
            return Err(Error::Spec(format!("duplicate parameter name `{name}`")));
        }
        Ok(())
    }
}

/// Tape handles for one network's parameters.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    /// Pairs parameter names with handles the caller already recorded.
    pub fn from_vars(vars: impl IntoIterator<Item = (String, Var)>) -> Self {
        Bound {
            vars: vars.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("parameter `{name}` is not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

/// Threads the tape, bindings and normalization mode through a forward pass.
struct Pass<'a, F: Float> {
    tape: &'a mut Tape<F>,
    vars: &'a Bound,
    running: &'a BTreeMap<String, RunningStats<F>>,
    mode: Mode,
    updates: NormUpdates<F>,
}

impl<F: Float> Pass<'_, F> {
    fn conv(&mut self, name: &str, x: Var) -> Result<Var> {
        let w = self.vars.get(&format!("{name}.weight"))?;
        let b = self.vars.get(&format!("{name}.bias"))?;
        Ok(self.tape.conv2d(x, w, b, STRIDE, PAD)?)
    }

    fn up(&mut self, name: &str, x: Var) -> Result<Var> {
        let w = self.vars.get(&format!("{name}.weight"))?;
        let b = self.vars.get(&format!("{name}.bias"))?;
        Ok(self.tape.conv2d_transpose(x, w, b, STRIDE, PAD)?)
    }

    fn norm(&mut self, name: &str, x: Var) -> Result<Var> {
        let bn = format!("{name}.bn");
        let gamma = self.vars.get(&format!("{bn}.gamma"))?;
        let beta = self.vars.get(&format!("{bn}.beta"))?;
        match self.mode {
            Mode::Train => {
                let (y, stats) = self.tape.batch_norm_train(x, gamma, beta)?;
                self.updates.0.push((bn, stats));
                Ok(y)
            }
            Mode::Infer => {
                let rs = self
                    .running
                    .get(&bn)
                    .ok_or_else(|| Error::Contract(format!("missing running statistics `{bn}`")))?;
                Ok(self.tape.batch_norm_infer(x, gamma, beta, &rs.mean, &rs.var)?)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub noise_dim: usize,
    pub base_maps: usize,
    pub up_maps: Vec<usize>,
    pub out_channels: usize,
    pub tile_h: usize,
    pub tile_w: usize,
}

impl GeneratorSpec {
    pub fn new(out_channels: usize, tile_h: usize, tile_w: usize) -> Self {
        GeneratorSpec {
            noise_dim: NOISE_DIM,
            base_maps: 256,
            up_maps: vec![128, 64, 32],
            out_channels,
            tile_h,
            tile_w,
        }
    }

    /// Total spatial growth from the projected grid to the tile.
    pub fn upsample_factor(&self) -> usize {
        1 << (self.up_maps.len() + 1)
    }

    /// Feature maps per layer, projection first, output last.
    pub fn feature_maps(&self) -> Vec<usize> {
        let mut maps = vec![self.base_maps];
        maps.extend(&self.up_maps);
        maps.push(self.out_channels);
        maps
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.upsample_factor();
        if self.tile_h == 0 || self.tile_w == 0 || !self.tile_h.is_multiple_of(f) || !self.tile_w.is_multiple_of(f) {
            return Err(Error::Spec(format!(
                "generator tile {}x{} must be a positive multiple of {f}",
                self.tile_h, self.tile_w
            )));
        }
        if self.noise_dim == 0 || self.out_channels == 0 || self.base_maps == 0 || self.up_maps.contains(&0) {
            return Err(Error::Spec("generator layer widths must be positive".into()));
        }
        Ok(())
    }

    fn grid(&self) -> (usize, usize) {
        let f = self.upsample_factor();
        (self.tile_h / f, self.tile_w / f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator<F = f32> {
    pub spec: GeneratorSpec,
    pub state: NetState<F>,
}

impl<F: Float> Generator<F> {
    /// Weights ~ N(0, 0.02), biases 0, gamma 1, beta 0.
    pub fn build(spec: GeneratorSpec, rng: &mut Prng) -> Result<Self> {
        spec.validate()?;
        let mut st = NetState::new();
        let (gh, gw) = spec.grid();
        let proj_out = spec.base_maps * gh * gw;
        st.add_weight(rng, "proj", &[proj_out, spec.noise_dim])?;
        st.add_bias("proj", proj_out)?;
        st.add_norm("proj", spec.base_maps)?;
        let mut c_in = spec.base_maps;
        for (i, &c_out) in spec.up_maps.iter().enumerate() {
            let name = format!("up{}", i + 1);
            st.add_weight(rng, &name, &[c_in, c_out, KERNEL, KERNEL])?;
            st.add_bias(&name, c_out)?;
            st.add_norm(&name, c_out)?;
            c_in = c_out;
        }
        st.add_weight(rng, "out", &[c_in, spec.out_channels, KERNEL, KERNEL])?;
        st.add_bias("out", spec.out_channels)?;
        Ok(Generator { spec, state: st })
    }

    pub fn cast<G: Float>(&self) -> Generator<G> {
        Generator {
            spec: self.spec.clone(),
            state: self.state.cast(),
        }
    }

    /// Records the forward pass for `noise [N, noise_dim]`; output is
    /// `[N, C, tile_h, tile_w]` with values in (-1, 1).
    pub fn forward_on(&self, tape: &mut Tape<F>, vars: &Bound, noise: Var, mode: Mode) -> Result<(Var, NormUpdates<F>)> {
        let dims = tape.value(noise).dims().to_vec();
        if dims.len() != 2 || dims[1] != self.spec.noise_dim {
            return Err(Error::Extent(format!(
                "generator expects noise [N, {}], got {:?}",
                self.spec.noise_dim, dims
            )));
        }
        let n = dims[0];
        let (gh, gw) = self.spec.grid();
        let mut pass = Pass {
            tape,
            vars,
            running: &self.state.running,
            mode,
            updates: NormUpdates::default(),
        };
        let w = vars.get("proj.weight")?;
        let b = vars.get("proj.bias")?;
        let mut h = pass.tape.linear(noise, w, b)?;
        h = pass.tape.reshape(h, &[n, self.spec.base_maps, gh, gw])?;
        h = pass.norm("proj", h)?;
        h = pass.tape.relu(h)?;
        for i in 1..=self.spec.up_maps.len() {
            let name = format!("up{i}");
            h = pass.up(&name, h)?;
            h = pass.norm(&name, h)?;
            h = pass.tape.relu(h)?;
        }
        h = pass.up("out", h)?;
        h = pass.tape.tanh(h)?;
        Ok((h, pass.updates))
    }

    /// Tape-free forward pass. Statistics are returned, not absorbed.
    pub fn generate(&self, noise: &Tensor<F>, mode: Mode) -> Result<(Tensor<F>, NormUpdates<F>)> {
        let mut tape = Tape::new();
        let vars = self.state.bind(&mut tape, false);
        let z = tape.constant(noise.clone());
        let (out, updates) = self.forward_on(&mut tape, &vars, z, mode)?;
        Ok((tape.value(out).clone(), updates))
    }

    /// Uniform noise on [-1, 1) for a batch of `n` samples.
    pub fn sample_noise(&self, n: usize, rng: &mut Prng) -> Result<Tensor<F>> {
        Ok(rng.uniform(&[n, self.spec.noise_dim], -1.0, 1.0)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub in_channels: usize,
    pub encoder_maps: Vec<usize>,
    pub decoder_maps: Vec<usize>,
    /// Logit channels: the real classes plus the fake class.
    pub num_logits: usize,
    pub leaky_slope: f64,
}

impl DiscriminatorSpec {
    pub fn new(in_channels: usize) -> Self {
        DiscriminatorSpec {
            in_channels,
            encoder_maps: vec![32, 64, 128, 256],
            decoder_maps: vec![128, 64, 32],
            num_logits: NUM_LOGITS,
            leaky_slope: LEAKY_SLOPE,
        }
    }

    /// Input extents must be multiples of this.
    pub fn downsample_factor(&self) -> usize {
        1 << self.encoder_maps.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_maps.is_empty() || self.encoder_maps.len() != self.decoder_maps.len() + 1 {
            return Err(Error::Spec(format!(
                "encoder depth ({}) must equal decoder depth ({}) + 1",
                self.encoder_maps.len(),
                self.decoder_maps.len()
            )));
        }
        if self.in_channels == 0 || self.encoder_maps.contains(&0) || self.decoder_maps.contains(&0) {
            return Err(Error::Spec("discriminator layer widths must be positive".into()));
        }
        if self.num_logits < 2 {
            return Err(Error::Spec("discriminator needs at least 2 logit channels".into()));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::Spec(format!("leaky slope {} outside (0, 1)", self.leaky_slope)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator<F = f32> {
    pub spec: DiscriminatorSpec,
    pub state: NetState<F>,
}

impl<F: Float> Discriminator<F> {
    pub fn build(spec: DiscriminatorSpec, rng: &mut Prng) -> Result<Self> {
        spec.validate()?;
        let mut st = NetState::new();
        let mut c_in = spec.in_channels;
        for (i, &c_out) in spec.encoder_maps.iter().enumerate() {
            let name = format!("enc{}", i + 1);
            st.add_weight(rng, &name, &[c_out, c_in, KERNEL, KERNEL])?;
            st.add_bias(&name, c_out)?;
            if i > 0 {
                st.add_norm(&name, c_out)?;
            }
            c_in = c_out;
        }
        for (i, &c_out) in spec.decoder_maps.iter().enumerate() {
            let name = format!("dec{}", i + 1);
            st.add_weight(rng, &name, &[c_in, c_out, KERNEL, KERNEL])?;
            st.add_bias(&name, c_out)?;
            st.add_norm(&name, c_out)?;
            c_in = c_out;
        }
        st.add_weight(rng, "head", &[c_in, spec.num_logits, KERNEL, KERNEL])?;
        st.add_bias("head", spec.num_logits)?;
        Ok(Discriminator { spec, state: st })
    }

    pub fn cast<G: Float>(&self) -> Discriminator<G> {
        Discriminator {
            spec: self.spec.clone(),
            state: self.state.cast(),
        }
    }

    pub fn check_input(&self, dims: &[usize]) -> Result<()> {
        if dims.len() != 4 {
            return Err(Error::Extent(format!("discriminator expects [N, C, H, W], got {dims:?}")));
        }
        if dims[1] != self.spec.in_channels {
            return Err(Error::Extent(format!(
                "discriminator built for {} channel(s), got {}",
                self.spec.in_channels, dims[1]
            )));
        }
        let f = self.spec.downsample_factor();
        if !dims[2].is_multiple_of(f) || !dims[3].is_multiple_of(f) {
            return Err(Error::Extent(format!(
                "image extents {}x{} must be multiples of {f}",
                dims[2], dims[3]
            )));
        }
        Ok(())
    }

    /// Records the forward pass; logits are `[N, num_logits, H, W]`.
    pub fn forward_on(&self, tape: &mut Tape<F>, vars: &Bound, images: Var, mode: Mode) -> Result<(Var, NormUpdates<F>)> {
        self.check_input(tape.value(images).dims())?;
        let slope = self.spec.leaky_slope;
        let mut pass = Pass {
            tape,
            vars,
            running: &self.state.running,
            mode,
            updates: NormUpdates::default(),
        };
        let mut h = images;
        for i in 1..=self.spec.encoder_maps.len() {
            let name = format!("enc{i}");
            h = pass.conv(&name, h)?;
            if i > 1 {
                h = pass.norm(&name, h)?;
            }
            h = pass.tape.leaky_relu(h, slope)?;
        }
        for i in 1..=self.spec.decoder_maps.len() {
            let name = format!("dec{i}");
            h = pass.up(&name, h)?;
            h = pass.norm(&name, h)?;
            h = pass.tape.leaky_relu(h, slope)?;
        }
        h = pass.up("head", h)?;
        Ok((h, pass.updates))
    }

    /// Tape-free forward pass. Statistics are returned, not absorbed.
    pub fn logits(&self, images: &Tensor<F>, mode: Mode) -> Result<(Tensor<F>, NormUpdates<F>)> {
        let mut tape = Tape::new();
        let vars = self.state.bind(&mut tape, false);
        let x = tape.constant(images.clone());
        let (out, updates) = self.forward_on(&mut tape, &vars, x, mode)?;
        Ok((tape.value(out).clone(), updates))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ssgan_tensor::ops;

    fn bits(t: &Tensor<f32>) -> Vec<u32> {
        t.data().iter().map(|v| v.to_bits()).collect()
    }

    fn small_gen_spec(c: usize) -> GeneratorSpec {
        GeneratorSpec {
            base_maps: 16,
            up_maps: vec![8, 8, 4],
            ..GeneratorSpec::new(c, 32, 32)
        }
    }

    fn small_disc_spec(c: usize) -> DiscriminatorSpec {
        DiscriminatorSpec {
            encoder_maps: vec![4, 8, 8, 16],
            decoder_maps: vec![8, 8, 4],
            ..DiscriminatorSpec::new(c)
        }
    }

    #[test]
    fn single_channel_generator_reproduces_layer_widths() {
        let g = Generator::<f32>::build(GeneratorSpec::new(1, 32, 32), &mut Prng::new(1)).unwrap();
        assert_eq!(g.spec.feature_maps(), vec![256, 128, 64, 32, 1]);
        let p = &g.state.params;
        assert_eq!(p["proj.weight"].dims(), &[256 * 2 * 2, 100]);
        assert_eq!(p["up1.weight"].dims(), &[256, 128, 4, 4]);
        assert_eq!(p["up2.weight"].dims(), &[128, 64, 4, 4]);
        assert_eq!(p["up3.weight"].dims(), &[64, 32, 4, 4]);
        assert_eq!(p["out.weight"].dims(), &[32, 1, 4, 4]);
        assert!(!p.contains_key("out.bn.gamma"));
    }

    #[test]
    fn tile_must_divide_by_sixteen() {
        let err = Generator::<f32>::build(GeneratorSpec::new(1, 40, 32), &mut Prng::new(1)).unwrap_err();
        assert!(matches!(err, Error::Spec(_)));
    }

    #[test]
    fn build_is_deterministic_per_seed() {
        let a = Generator::<f32>::build(small_gen_spec(2), &mut Prng::new(9)).unwrap();
        let b = Generator::<f32>::build(small_gen_spec(2), &mut Prng::new(9)).unwrap();
        for (k, t) in &a.state.params {
            assert_eq!(bits(t), bits(&b.state.params[k]), "{k}");
        }
        let c = Discriminator::<f32>::build(small_disc_spec(2), &mut Prng::new(9)).unwrap();
        let d = Discriminator::<f32>::build(small_disc_spec(2), &mut Prng::new(9)).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn init_stddev_near_point_zero_two() {
        let g = Generator::<f32>::build(GeneratorSpec::new(1, 32, 32), &mut Prng::new(3)).unwrap();
        let w: Vec<f64> = g.state.params["up3.weight"].data().iter().take(10_000).map(|&v| v as f64).collect();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (w.len() - 1) as f64;
        let sd = var.sqrt();
        assert!((sd - 0.02).abs() < 0.02 * 0.15, "stddev {sd}");
        assert!(g.state.params["up3.bias"].data().iter().all(|&v| v == 0.0));
        assert!(g.state.params["up3.bn.gamma"].data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn generator_shape_and_range_grid() {
        for c in 1..=3 {
            for tile in [32, 48] {
                let spec = GeneratorSpec {
                    tile_h: tile,
                    tile_w: tile,
                    ..small_gen_spec(c)
                };
                let g = Generator::<f32>::build(spec, &mut Prng::new(c as u64)).unwrap();
                for n in [1, 2, 32] {
                    let z = g.sample_noise(n, &mut Prng::new(n as u64)).unwrap();
                    for mode in [Mode::Train, Mode::Infer] {
                        let (y, _) = g.generate(&z, mode).unwrap();
                        assert_eq!(y.dims(), &[n, c, tile, tile]);
                        assert!(y.data().iter().all(|&v| v > -1.0 && v < 1.0));
                    }
                }
            }
        }
    }

    #[test]
    fn generator_rejects_wrong_noise() {
        let g = Generator::<f32>::build(small_gen_spec(1), &mut Prng::new(1)).unwrap();
        let z = Tensor::zeros(&[2, 99]).unwrap();
        assert!(matches!(g.generate(&z, Mode::Infer), Err(Error::Extent(_))));
    }

    #[test]
    fn infer_mode_generation_is_bitwise_repeatable() {
        let g = Generator::<f32>::build(small_gen_spec(2), &mut Prng::new(5)).unwrap();
        let z = g.sample_noise(2, &mut Prng::new(6)).unwrap();
        let (a, _) = g.generate(&z, Mode::Infer).unwrap();
        let (b, _) = g.generate(&z, Mode::Infer).unwrap();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn discriminator_head_has_four_logits_at_full_resolution() {
        let d = Discriminator::<f32>::build(DiscriminatorSpec::new(2), &mut Prng::new(2)).unwrap();
        assert_eq!(d.state.params["head.weight"].dims(), &[32, 4, 4, 4]);
        assert!(!d.state.params.contains_key("enc1.bn.gamma"));
        assert!(d.state.params.contains_key("enc2.bn.gamma"));
        let x: Tensor<f32> = Prng::new(4).uniform(&[3, 2, 32, 32], -1.0, 1.0).unwrap();
        let (logits, updates) = d.logits(&x, Mode::Train).unwrap();
        assert_eq!(logits.dims(), &[3, 4, 32, 32]);
        assert!(logits.all_finite());
        assert_eq!(updates.0.len(), 6);
        let p = ops::softmax_channels(&logits).unwrap();
        for px in 0..32 * 32 {
            let s: f32 = (0..4).map(|c| p.data()[c * 1024 + px]).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn discriminator_preserves_resolution() {
        let d = Discriminator::<f32>::build(small_disc_spec(1), &mut Prng::new(2)).unwrap();
        for (h, w) in [(16, 16), (32, 48), (64, 32)] {
            let x = Tensor::zeros(&[2, 1, h, w]).unwrap();
            let (y, _) = d.logits(&x, Mode::Infer).unwrap();
            assert_eq!(y.dims(), &[2, 4, h, w]);
        }
    }

    #[test]
    fn discriminator_extent_errors() {
        let d = Discriminator::<f32>::build(small_disc_spec(2), &mut Prng::new(2)).unwrap();
        assert!(matches!(d.logits(&Tensor::zeros(&[1, 3, 32, 32]).unwrap(), Mode::Infer), Err(Error::Extent(_))));
        assert!(matches!(d.logits(&Tensor::zeros(&[1, 2, 40, 32]).unwrap(), Mode::Infer), Err(Error::Extent(_))));
    }

    #[test]
    fn infer_mode_is_per_sample() {
        let d = Discriminator::<f32>::build(small_disc_spec(2), &mut Prng::new(8)).unwrap();
        let x: Tensor<f32> = Prng::new(1).uniform(&[3, 2, 16, 16], -1.0, 1.0).unwrap();
        let parts: Vec<Tensor<f32>> = (0..3).map(|i| x.narrow_batch(i, 1).unwrap()).collect();
        let permuted = Tensor::concat_batch(&[&parts[2], &parts[0], &parts[1]]).unwrap();
        let (a, _) = d.logits(&x, Mode::Infer).unwrap();
        let (b, _) = d.logits(&permuted, Mode::Infer).unwrap();
        assert_eq!(bits(&b.narrow_batch(0, 1).unwrap()), bits(&a.narrow_batch(2, 1).unwrap()));
        assert_eq!(bits(&b.narrow_batch(1, 1).unwrap()), bits(&a.narrow_batch(0, 1).unwrap()));
    }

    #[test]
    fn spec_validation() {
        let bad = DiscriminatorSpec {
            decoder_maps: vec![8],
            ..DiscriminatorSpec::new(1)
        };
        assert!(bad.validate().is_err());
        assert!(DiscriminatorSpec::new(1).validate().is_ok());
    }

    #[test]
    fn running_stats_absorb() {
        let mut d = Discriminator::<f32>::build(small_disc_spec(1), &mut Prng::new(2)).unwrap();
        let x: Tensor<f32> = Prng::new(1).uniform(&[4, 1, 16, 16], -1.0, 1.0).unwrap();
        let before = d.state.running.clone();
        let (_, updates) = d.logits(&x, Mode::Train).unwrap();
        d.state.absorb(&updates).unwrap();
        assert_ne!(before, d.state.running);
    }
}
