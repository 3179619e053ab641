//! Writes a synthetic field dataset and prints the class mix and band
//! statistics of each plot.
//!
//! `cargo run --release --example synth_dataset -- [out_dir] [seed]`

use std::path::PathBuf;

use ssgan::data::dataset::{read_images, read_mask, synthesize};
use ssgan::data::{Band, SyntheticFieldConfig};

fn main() -> ssgan::Result<()> {
    let mut args = std::env::args().skip(1);
    let tmp = tempfile::tempdir().expect("temp dir");
    let out = args.next().map_or_else(|| tmp.path().to_path_buf(), PathBuf::from);
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));

    let cfg = SyntheticFieldConfig { num_images: 8, seed, ..Default::default() };
    let split = synthesize(&out, &cfg, 0.5)?;
    println!(
        "{} images in {}: labeled {:?}, test {:?}",
        cfg.num_images,
        out.display(),
        split.labeled_train,
        split.test
    );
    println!("{:<10}{:>8}{:>8}{:>8}{:>10}{:>10}", "id", "soil", "crop", "weed", "mean red", "mean nir");
    for (id, image) in read_images(&out)? {
        let mask = read_mask(&out, &id)?;
        let n = mask.data.len() as f64;
        let share = |c: u8| mask.data.iter().filter(|&&l| l == c).count() as f64 / n;
        let mean = |b: Band| {
            let r = image.band(b).expect("band written");
            r.data.iter().map(|&v| v as f64).sum::<f64>() / r.data.len() as f64
        };
        println!(
            "{id:<10}{:>8.3}{:>8.3}{:>8.3}{:>10.3}{:>10.3}",
            share(0),
            share(1),
            share(2),
            mean(Band::Red),
            mean(Band::Nir)
        );
    }
    Ok(())
}
