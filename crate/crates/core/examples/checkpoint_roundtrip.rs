//! Trains a few steps, writes a checkpoint, reloads it, and confirms the
//! reloaded networks reproduce the original outputs bit for bit.
//!
//! `cargo run --release --example checkpoint_roundtrip -- [steps]`

use std::sync::Arc;

use ssgan::data::dataset::synthesize;
use ssgan::data::{Dataset, SyntheticFieldConfig};
use ssgan::models::Mode;
use ssgan::train::{load_checkpoint, save_checkpoint, train_on, TrainConfig};
use ssgan_tensor::Prng;

fn main() -> ssgan::Result<()> {
    let steps: usize = std::env::args().nth(1).map_or(5, |s| s.parse().expect("steps"));
    let dir = tempfile::tempdir().expect("temp dir");
    let synth = SyntheticFieldConfig { num_images: 12, ..Default::default() };
    let config = TrainConfig { epochs: 1, steps_per_epoch: steps, batch_size: 8, ..Default::default() };
    synthesize(dir.path(), &synth, config.labeled_fraction)?;
    let pools = Arc::new(Dataset::load(dir.path())?.pools(config.selection)?);
    let trainer = train_on(&config, pools.clone(), None)?.trainer;

    let path = dir.path().join("run.ssgk");
    save_checkpoint(&path, &trainer.checkpoint())?;
    let bytes = std::fs::metadata(&path).map_err(|e| ssgan::Error::Data(e.to_string()))?.len();
    let back = load_checkpoint(&path)?;
    println!("{} bytes, step {}, config {}", bytes, back.step, &back.config.hash()[..12]);

    let g = trainer.generator.as_ref().expect("adversarial run");
    let noise = g.sample_noise(2, &mut Prng::new(1))?;
    let (a, _) = g.generate(&noise, Mode::Infer)?;
    let (b, _) = back.generator.as_ref().expect("stored").generate(&noise, Mode::Infer)?;
    let (da, _) = trainer.discriminator.logits(&a, Mode::Infer)?;
    let (db, _) = back.discriminator.logits(&b, Mode::Infer)?;
    println!("generator outputs identical: {}", a == b);
    println!("discriminator logits identical: {}", da == db);
    println!("full state identical: {}", back == trainer.checkpoint());
    Ok(())
}
