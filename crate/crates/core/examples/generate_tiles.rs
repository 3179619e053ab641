//! Trains briefly and writes generated tiles, one PGM per channel, next to
//! real tiles of the same size for comparison.
//!
//! `cargo run --release --example generate_tiles -- [out_dir] [steps]`

use std::path::PathBuf;
use std::sync::Arc;

use ssgan::cli::to_gray_level;
use ssgan::data::codec::{save_pgm, Gray};
use ssgan::data::dataset::synthesize;
use ssgan::data::{sample_batch, Dataset, Pool, SyntheticFieldConfig};
use ssgan::models::Mode;
use ssgan::train::{train_on, TrainConfig};
use ssgan_tensor::{Prng, Tensor};

fn write_tiles(t: &Tensor<f32>, prefix: &str, out: &std::path::Path) -> ssgan::Result<()> {
    let [n, c, h, w] = t.nchw();
    for i in 0..n {
        for ch in 0..c {
            let start = (i * c + ch) * h * w;
            let data = t.data()[start..start + h * w].iter().map(|&v| to_gray_level(v)).collect();
            save_pgm(&out.join(format!("{prefix}_{i}_c{ch}.pgm")), &Gray { height: h, width: w, data })?;
        }
    }
    Ok(())
}

fn main() -> ssgan::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "generated_tiles".into()));
    let steps: usize = args.next().map_or(200, |s| s.parse().expect("steps"));

    let data = tempfile::tempdir().expect("temp dir");
    let synth = SyntheticFieldConfig { num_images: 24, ..Default::default() };
    let config = TrainConfig { epochs: 1, steps_per_epoch: steps, ..Default::default() };
    synthesize(data.path(), &synth, config.labeled_fraction)?;
    let pools = Arc::new(Dataset::load(data.path())?.pools(config.selection)?);
    let trainer = train_on(&config, pools.clone(), None)?.trainer;

    std::fs::create_dir_all(&out).map_err(|e| ssgan::Error::Data(e.to_string()))?;
    let g = trainer.generator.as_ref().expect("adversarial run");
    let (fake, _) = g.generate(&g.sample_noise(4, &mut Prng::new(7))?, Mode::Infer)?;
    let real = sample_batch(&pools, Pool::Unlabeled, 4, config.tile_h, config.tile_w, &mut Prng::new(7))?.images;
    write_tiles(&fake, "fake", &out)?;
    write_tiles(&real, "real", &out)?;
    let mean = |t: &Tensor<f32>| t.data().iter().sum::<f32>() / t.len() as f32;
    println!("mean level: generated {:.3}, real {:.3}", mean(&fake), mean(&real));
    println!("written to {}", out.display());
    Ok(())
}
