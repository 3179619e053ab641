//! One adversarial iteration: a discriminator update on labeled, unlabeled
//! and generated tiles, then a generator update on fresh noise.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use ssgan_tensor::{Adam, Gradients, Prng, Tape, Tensor, TensorError};

use super::checkpoint::{save_checkpoint, Checkpoint};
use super::config::{TrainConfig, TrainMode};
use crate::data::{Batch, BatchQueue, Dataset, DatasetSplit, Pool, Pools};
use crate::error::{Error, Result};
use crate::loss::{self, LossBreakdown};
use crate::models::{Bound, Discriminator, Generator, Mode};

/// Independent random streams derived from the run seed. The derivation
/// order is the same in every mode, so a baseline and an adversarial run
/// with one seed see the same discriminator init and the same batches.
#[derive(Debug, Clone)]
pub struct Streams {
    pub labeled: Prng,
    pub unlabeled: Prng,
}

#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    /// Absent for the supervised baseline.
    pub generator: Option<Generator>,
    pub discriminator: Discriminator,
    pub adam_g: Adam,
    pub adam_d: Adam,
    /// Completed steps.
    pub step: u64,
    pub noise_rng: Prng,
}

fn named_grads(bound: &Bound, grads: &Gradients<f32>) -> BTreeMap<String, Tensor<f32>> {
    bound
        .iter()
        .filter_map(|(name, var)| grads.get(*var).map(|g| (name.clone(), g.clone())))
        .collect()
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<(Self, Streams)> {
        config.validate()?;
        let mut root = Prng::new(config.seed);
        let mut g_init = root.split();
        let mut d_init = root.split();
        let noise_rng = root.split();
        let streams = Streams {
            labeled: root.split(),
            unlabeled: root.split(),
        };
        let generator = match config.mode {
            TrainMode::Ssgan => Some(Generator::build(config.generator_spec(), &mut g_init)?),
            TrainMode::SupervisedBaseline => None,
        };
        let discriminator = Discriminator::build(config.discriminator_spec(), &mut d_init)?;
        let trainer = Trainer {
            adam_g: Adam::new(config.adam()),
            adam_d: Adam::new(config.adam()),
            config,
            generator,
            discriminator,
            step: 0,
            noise_rng,
        };
        Ok((trainer, streams))
    }

    fn non_finite(&self, component: impl Into<String>) -> Error {
        Error::NonFinite {
            step: self.step + 1,
            component: component.into(),
        }
    }

    fn optimizer_error(&self, net: &str, e: TensorError) -> Error {
        match e {
            TensorError::NonFiniteGradient { name } => self.non_finite(format!("{net} gradient `{name}`")),
            other => other.into(),
        }
    }

    /// Runs one iteration. `unlabeled` may be absent when every training
    /// image is labeled.
    pub fn train_step(&mut self, labeled: &Batch, unlabeled: Option<&Batch>) -> Result<LossBreakdown> {
        let masks = labeled
            .masks
            .as_ref()
            .ok_or_else(|| Error::Contract("labeled batch without masks".into()))?;
        let n_lab = labeled.images.dims()[0];
        let bs = self.config.batch_size;
        let lambda = self.config.lambda_u as f32;
        let adversarial = self.generator.is_some() && lambda > 0.0;

        let fakes = match self.generator.as_mut() {
            Some(g) => {
                let z = g.sample_noise(bs, &mut self.noise_rng)?;
                let (fake, updates) = g.generate(&z, Mode::Train)?;
                g.state.absorb(&updates)?;
                Some(fake)
            }
            None => None,
        };

        // Discriminator: one train-mode pass over the joint batch.
        let mut parts = vec![&labeled.images];
        let n_unl = match unlabeled {
            Some(u) if adversarial => {
                parts.push(&u.images);
                u.images.dims()[0]
            }
            _ => 0,
        };
        if adversarial {
            parts.push(fakes.as_ref().expect("adversarial runs have a generator"));
        }
        let joint = Tensor::concat_batch(&parts)?;
        let d = &self.discriminator;
        let mut tape = Tape::new();
        let vars = d.state.bind(&mut tape, true);
        let x = tape.constant(joint);
        let (logits, d_updates) = d.forward_on(&mut tape, &vars, x, Mode::Train)?;
        let lab_logits = tape.narrow_batch(logits, 0, n_lab)?;
        let sup = loss::supervised_loss_on(&mut tape, lab_logits, masks)?;
        let mut out = LossBreakdown {
            sup: tape.value(sup).item()?,
            ..Default::default()
        };
        let total = if adversarial {
            let start = if self.config.labeled_in_unsup { 0 } else { n_lab };
            let fake_logits = tape.narrow_batch(logits, n_lab + n_unl, bs)?;
            let uf = loss::unsupervised_fake_loss_on(&mut tape, fake_logits)?;
            out.unsup_fake = tape.value(uf).item()?;
            let unsup = if n_lab + n_unl > start {
                let real_logits = tape.narrow_batch(logits, start, n_lab + n_unl - start)?;
                let ur = loss::unsupervised_real_loss_on(&mut tape, real_logits)?;
                out.unsup_real = tape.value(ur).item()?;
                tape.add(ur, uf)?
            } else {
                uf
            };
            let weighted = tape.scale(unsup, lambda);
            tape.add(sup, weighted)?
        } else {
            // Reported only; nothing unsupervised is recorded.
            out.unsup_real = loss::unsupervised_real_loss(tape.value(lab_logits))?;
            if let Some(f) = &fakes {
                let (fl, _) = d.logits(f, Mode::Train)?;
                out.unsup_fake = loss::unsupervised_fake_loss(&fl)?;
            }
            sup
        };
        out.d_total = tape.value(total).item()?;
        if let Some(c) = [("sup", out.sup), ("unsup_real", out.unsup_real), ("unsup_fake", out.unsup_fake), ("d_total", out.d_total)]
            .iter()
            .find(|(_, v)| !v.is_finite())
        {
            return Err(self.non_finite(c.0));
        }
        let grads = named_grads(&vars, &tape.backward(total)?);
        drop(tape);
        let d_step = self.adam_d.step(&mut self.discriminator.state.params, &grads);
        d_step.map_err(|e| self.optimizer_error("discriminator", e))?;
        self.discriminator.state.absorb(&d_updates)?;
        if !self.discriminator.state.all_finite() {
            return Err(self.non_finite("discriminator parameters"));
        }

        // Generator: fresh noise through G and the just-updated D.
        if let Some(g) = &self.generator {
            let z = g.sample_noise(bs, &mut self.noise_rng)?;
            let mut tape = Tape::new();
            let g_vars = g.state.bind(&mut tape, true);
            let d_vars = self.discriminator.state.bind(&mut tape, false);
            let zv = tape.constant(z);
            let (fake, g_updates) = g.forward_on(&mut tape, &g_vars, zv, Mode::Train)?;
            let (logits, _) = self.discriminator.forward_on(&mut tape, &d_vars, fake, Mode::Train)?;
            let gl = loss::generator_loss_on(&mut tape, logits)?;
            out.g_loss = tape.value(gl).item()?;
            if !out.g_loss.is_finite() {
                return Err(self.non_finite("g_loss"));
            }
            let grads = named_grads(&g_vars, &tape.backward(gl)?);
            drop(tape);
            let g = self.generator.as_mut().expect("checked above");
            let g_step = self.adam_g.step(&mut g.state.params, &grads);
            if let Err(e) = g_step {
                return Err(self.optimizer_error("generator", e));
            }
            let g = self.generator.as_mut().expect("checked above");
            g.state.absorb(&g_updates)?;
            if !g.state.all_finite() {
                return Err(self.non_finite("generator parameters"));
            }
        }
        self.step += 1;
        Ok(out)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            step: self.step,
            config: self.config.clone(),
            generator: self.generator.clone(),
            discriminator: self.discriminator.clone(),
            adam_g: self.adam_g.states().clone(),
            adam_d: self.adam_d.states().clone(),
            noise_rng_state: self.noise_rng.state(),
        }
    }

    /// Resumes from a checkpoint; batch streams restart from `seed` mixed
    /// with the completed step count.
    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<(Self, Streams)> {
        let config = ckpt.config;
        config.validate()?;
        let mut root = Prng::new(config.seed ^ ckpt.step.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let streams = Streams {
            labeled: root.split(),
            unlabeled: root.split(),
        };
        // The state is the whole generator, so this resumes the noise stream.
        let noise_rng = Prng::new(ckpt.noise_rng_state);
        let trainer = Trainer {
            adam_g: Adam::restore(config.adam(), ckpt.adam_g),
            adam_d: Adam::restore(config.adam(), ckpt.adam_d),
            config,
            generator: ckpt.generator,
            discriminator: ckpt.discriminator,
            step: ckpt.step,
            noise_rng,
        };
        Ok((trainer, streams))
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsLine {
    pub step: u64,
    pub sup: f32,
    pub unsup_real: f32,
    pub unsup_fake: f32,
    pub d_total: f32,
    pub g_loss: f32,
    pub wall_ms: f64,
}

impl MetricsLine {
    /// Equality ignoring wall-clock time.
    pub fn same_values(&self, other: &MetricsLine) -> bool {
        let bits = |m: &MetricsLine| {
            [m.sup, m.unsup_real, m.unsup_fake, m.d_total, m.g_loss].map(f32::to_bits)
        };
        self.step == other.step && bits(self) == bits(other)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub trainer: Trainer,
    pub metrics: Vec<MetricsLine>,
    /// Final checkpoint path when an output directory was given.
    pub checkpoint: Option<PathBuf>,
}

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const FINAL_CHECKPOINT: &str = "final.ssgk";

/// Trains on prepared pools. With `out_dir`, writes the metrics log, the
/// periodic checkpoints and the final checkpoint there.
pub fn train_on(config: &TrainConfig, pools: Arc<Pools>, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    let (trainer, streams) = Trainer::new(config.clone())?;
    continue_training(trainer, streams, pools, out_dir)
}

pub fn continue_training(mut trainer: Trainer, streams: Streams, pools: Arc<Pools>, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    let config = trainer.config.clone();
    if pools.selection != config.selection {
        return Err(Error::Config(format!(
            "pools hold {} but the config selects {}",
            pools.selection, config.selection
        )));
    }
    // Dataset problems surface before step 0.
    let mut probe = streams.labeled.clone();
    crate::data::sample_batch(&pools, Pool::Labeled, 1, config.tile_h, config.tile_w, &mut probe)?;
    let use_unlabeled = config.mode == TrainMode::Ssgan && !pools.unlabeled.is_empty();

    let mut log = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(METRICS_FILE);
            let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
            Some((path, BufWriter::new(file)))
        }
        None => None,
    };

    let labeled_q = BatchQueue::spawn(pools.clone(), Pool::Labeled, config.batch_size, config.tile_h, config.tile_w, streams.labeled);
    let unlabeled_q = use_unlabeled
        .then(|| BatchQueue::spawn(pools.clone(), Pool::Unlabeled, config.batch_size, config.tile_h, config.tile_w, streams.unlabeled));

    let total = config.total_steps();
    let mut metrics = Vec::new();
    while trainer.step < total {
        let started = Instant::now();
        let lab = labeled_q.next_batch()?;
        let unl = unlabeled_q.as_ref().map(|q| q.next_batch()).transpose()?;
        let l = trainer.train_step(&lab, unl.as_ref())?;
        let line = MetricsLine {
            step: trainer.step,
            sup: l.sup,
            unsup_real: l.unsup_real,
            unsup_fake: l.unsup_fake,
            d_total: l.d_total,
            g_loss: l.g_loss,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        if let Some((path, w)) = log.as_mut() {
            let text = serde_json::to_string(&line).expect("metrics serialize");
            writeln!(w, "{text}").map_err(|e| Error::io(path.as_path(), e))?;
        }
        if trainer.step.is_multiple_of(50) || trainer.step == total {
            log::info!(
                "step {}/{}: sup {:.4} unsup_real {:.4} unsup_fake {:.4} g {:.4}",
                trainer.step,
                total,
                l.sup,
                l.unsup_real,
                l.unsup_fake,
                l.g_loss
            );
        }
        metrics.push(line);
        if let Some(dir) = out_dir {
            let every = config.checkpoint_every as u64;
            if every > 0 && trainer.step.is_multiple_of(every) && trainer.step < total {
                let ckpt_dir = dir.join("checkpoints");
                fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
                save_checkpoint(&ckpt_dir.join(format!("step_{:06}.ssgk", trainer.step)), &trainer.checkpoint())?;
            }
        }
    }
    let mut checkpoint = None;
    if let Some((path, mut w)) = log {
        w.flush().map_err(|e| Error::io(&path, e))?;
        let dir = out_dir.expect("log implies out_dir");
        let p = dir.join(FINAL_CHECKPOINT);
        save_checkpoint(&p, &trainer.checkpoint())?;
        checkpoint = Some(p);
    }
    Ok(TrainOutcome {
        trainer,
        metrics,
        checkpoint,
    })
}

/// The split used for a run: `split.json` relabeled at the configured
/// fraction, or a fresh split from the config seed when none exists.
pub fn split_for(dataset_dir: &Path, config: &TrainConfig, test_fraction: f64) -> Result<DatasetSplit> {
    if crate::data::dataset::split_path(dataset_dir).exists() {
        let split = crate::data::dataset::read_split(dataset_dir)?;
        if split.labeled_fraction == config.labeled_fraction {
            return Ok(split);
        }
        return split.with_labeled_fraction(config.labeled_fraction);
    }
    let ids: Vec<String> = crate::data::dataset::read_images(dataset_dir)?.into_keys().collect();
    crate::data::make_split(&ids, config.labeled_fraction, test_fraction, config.seed)
}

/// Loads the dataset and trains; see [`train_on`].
pub fn train(config: &TrainConfig, dataset_dir: &Path, out_dir: Option<&Path>) -> Result<(TrainOutcome, Dataset)> {
    config.validate()?;
    let split = split_for(dataset_dir, config, crate::data::SyntheticFieldConfig::default().test_fraction)?;
    let dataset = Dataset::load_with_split(dataset_dir, split)?;
    let pools = Arc::new(dataset.pools(config.selection)?);
    Ok((train_on(config, pools, out_dir)?, dataset))
}

/// The supervised baseline: same loop with no generator and no
/// unsupervised terms.
pub fn train_supervised_baseline(config: &TrainConfig, dataset_dir: &Path, out_dir: Option<&Path>) -> Result<(TrainOutcome, Dataset)> {
    let config = TrainConfig {
        mode: TrainMode::SupervisedBaseline,
        ..config.clone()
    };
    train(&config, dataset_dir, out_dir)
}
