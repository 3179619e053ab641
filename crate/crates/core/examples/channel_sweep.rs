//! A reduced sweep: a few channel selections by labeled fraction, printed
//! in the F1 table layout.
//!
//! `cargo run --release --example channel_sweep -- [steps] [seed]`

use ssgan::data::dataset::synthesize;
use ssgan::data::{ChannelSelection, SyntheticFieldConfig};
use ssgan::train::{run_sweep, TrainConfig};

fn main() -> ssgan::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map_or(60, |s| s.parse().expect("steps"));
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));

    let dir = tempfile::tempdir().expect("temp dir");
    let synth = SyntheticFieldConfig { num_images: 24, seed, ..Default::default() };
    synthesize(dir.path(), &synth, 0.5)?;
    let base = TrainConfig { epochs: 1, steps_per_epoch: steps, batch_size: 16, seed, ..Default::default() };
    let selections = [ChannelSelection::Red, ChannelSelection::Nir, ChannelSelection::RedNir];
    let report = run_sweep(&base, &selections, &[0.5, 0.3], dir.path(), synth.test_fraction, None)?;
    print!("{}", report.text());
    Ok(())
}
