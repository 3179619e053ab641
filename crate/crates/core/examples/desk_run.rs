//! Synthesizes a field dataset, trains the adversarial model and the
//! supervised baseline on Red+NIR, and prints test-pool F1 for both.
//!
//! `cargo run --release --example desk_run -- [steps] [seed]`

use std::sync::Arc;

use ssgan::data::dataset::synthesize;
use ssgan::data::{Dataset, Pool, SyntheticFieldConfig};
use ssgan::train::{evaluate_pools, train_on, TrainConfig, TrainMode};

fn main() -> ssgan::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map_or(500, |s| s.parse().expect("steps"));
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));

    let dir = tempfile::tempdir().expect("temp dir");
    let synth = SyntheticFieldConfig { seed, ..Default::default() };
    let config = TrainConfig {
        epochs: 1,
        steps_per_epoch: steps,
        seed,
        ..Default::default()
    };
    synthesize(dir.path(), &synth, config.labeled_fraction)?;
    let dataset = Dataset::load(dir.path())?;
    let pools = Arc::new(dataset.pools(config.selection)?);

    for mode in [TrainMode::Ssgan, TrainMode::SupervisedBaseline] {
        let config = TrainConfig { mode, ..config.clone() };
        let started = std::time::Instant::now();
        let outcome = train_on(&config, pools.clone(), None)?;
        let t = &outcome.trainer;
        let report = evaluate_pools(&t.discriminator, &config, t.step, &pools, Pool::Test)?;
        println!("{mode:?} ({:.0} s)", started.elapsed().as_secs_f64());
        print!("{}", report.text());
    }
    Ok(())
}
