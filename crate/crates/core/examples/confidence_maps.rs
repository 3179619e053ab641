//! Trains briefly, then writes per-class confidence maps and an argmax map
//! for every test image as 8-bit PGM.
//!
//! `cargo run --release --example confidence_maps -- [out_dir] [steps]`

use std::path::PathBuf;
use std::sync::Arc;

use ssgan::data::dataset::synthesize;
use ssgan::data::{Dataset, SyntheticFieldConfig};
use ssgan::train::{render_maps, train_on, TrainConfig};

fn main() -> ssgan::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "confidence_maps".into()));
    let steps: usize = args.next().map_or(100, |s| s.parse().expect("steps"));

    let data = tempfile::tempdir().expect("temp dir");
    let synth = SyntheticFieldConfig { num_images: 24, ..Default::default() };
    let config = TrainConfig { epochs: 1, steps_per_epoch: steps, ..Default::default() };
    synthesize(data.path(), &synth, config.labeled_fraction)?;
    let pools = Arc::new(Dataset::load(data.path())?.pools(config.selection)?);
    let trainer = train_on(&config, pools.clone(), None)?.trainer;

    for item in &pools.test {
        let files = render_maps(&trainer.discriminator, &item.id, &item.pixels, config.tile_h, config.tile_w, &out)?;
        println!("{}: {} maps", item.id, files.len());
    }
    println!("written to {}", out.display());
    Ok(())
}
