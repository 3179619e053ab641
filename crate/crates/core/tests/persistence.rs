//! Run logs, checkpoints and on-disk fixtures.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ssgan::data::codec::{load_pgm, Gray};
use ssgan::data::dataset::synthesize;
use ssgan::data::{load_raster, Dataset, Pools, Raster, SyntheticFieldConfig};
use ssgan::models::Mode;
use ssgan::train::checkpoint::decode_checkpoint;
use ssgan::train::{load_checkpoint, train_on, MetricsLine, TrainConfig, TrainMode};
use ssgan_tensor::{Prng, Tensor};

fn small_pools(root: &Path, config: &TrainConfig) -> Arc<Pools> {
    let synth = SyntheticFieldConfig {
        num_images: 10,
        width: 64,
        height: 64,
        seed: 21,
        ..Default::default()
    };
    synthesize(root, &synth, 0.5).unwrap();
    Arc::new(Dataset::load(root).unwrap().pools(config.selection).unwrap())
}

fn tiny(steps: usize) -> TrainConfig {
    TrainConfig {
        epochs: 1,
        steps_per_epoch: steps,
        batch_size: 4,
        seed: 21,
        ..Default::default()
    }
}

fn read_log(p: &Path) -> Vec<MetricsLine> {
    fs::read_to_string(p).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn bits(t: &Tensor<f32>) -> Vec<u32> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn same_seed_writes_the_same_first_ten_log_lines() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny(10);
    let pools = small_pools(&dir.path().join("d"), &config);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    train_on(&config, pools.clone(), Some(&a)).unwrap();
    train_on(&config, pools.clone(), Some(&b)).unwrap();
    let (la, lb) = (read_log(&a.join("metrics.jsonl")), read_log(&b.join("metrics.jsonl")));
    assert_eq!(la.len(), 10);
    assert!(la.iter().zip(&lb).all(|(x, y)| x.same_values(y)));
    assert_eq!(la.iter().map(|l| l.step).collect::<Vec<_>>(), (1..=10).collect::<Vec<_>>());

    let other = TrainConfig { seed: 22, ..config };
    let c = train_on(&other, pools, None).unwrap();
    assert!(!la.iter().zip(&c.metrics).all(|(x, y)| x.same_values(y)));
}

#[test]
fn checkpoints_reproduce_forward_outputs_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let config = TrainConfig {
        checkpoint_every: 2,
        ..tiny(5)
    };
    let pools = small_pools(&dir.path().join("d"), &config);
    let out = dir.path().join("run");
    let outcome = train_on(&config, pools, Some(&out)).unwrap();
    let saved: Vec<PathBuf> = {
        let mut v: Vec<PathBuf> = fs::read_dir(out.join("checkpoints")).unwrap().map(|e| e.unwrap().path()).collect();
        v.sort();
        v
    };
    assert_eq!(saved.len(), 2, "steps 2 and 4");

    let back = load_checkpoint(outcome.checkpoint.as_ref().unwrap()).unwrap();
    assert_eq!(back.step, 5);
    assert_eq!(back, outcome.trainer.checkpoint());
    let mut rng = Prng::new(3);
    let images: Tensor<f32> = rng.uniform(&[3, 2, 32, 32], -1.0, 1.0).unwrap();
    for mode in [Mode::Infer, Mode::Train] {
        let want = outcome.trainer.discriminator.logits(&images, mode).unwrap().0;
        let got = back.discriminator.logits(&images, mode).unwrap().0;
        assert_eq!(bits(&want), bits(&got));
    }
    let g = outcome.trainer.generator.as_ref().unwrap();
    let noise = g.sample_noise(3, &mut rng).unwrap();
    let want = g.generate(&noise, Mode::Infer).unwrap().0;
    let got = back.generator.as_ref().unwrap().generate(&noise, Mode::Infer).unwrap().0;
    assert_eq!(bits(&want), bits(&got));
}

#[test]
fn baseline_checkpoints_carry_no_generator() {
    let dir = tempfile::tempdir().unwrap();
    let config = TrainConfig {
        mode: TrainMode::SupervisedBaseline,
        ..tiny(2)
    };
    let pools = small_pools(&dir.path().join("d"), &config);
    let out = dir.path().join("run");
    let outcome = train_on(&config, pools, Some(&out)).unwrap();
    let back = load_checkpoint(outcome.checkpoint.as_ref().unwrap()).unwrap();
    assert!(back.generator.is_none());
    assert_eq!(back.config.mode, TrainMode::SupervisedBaseline);
}

#[test]
fn truncated_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny(1);
    let pools = small_pools(&dir.path().join("d"), &config);
    let out = dir.path().join("run");
    let outcome = train_on(&config, pools, Some(&out)).unwrap();
    let bytes = fs::read(outcome.checkpoint.unwrap()).unwrap();
    let p = Path::new("cut");
    for n in [0, 3, 4, 11, 12, 40, bytes.len() / 2, bytes.len() - 1] {
        assert!(decode_checkpoint(&bytes[..n], p).is_err(), "prefix {n}");
    }
    let mut bad = bytes.clone();
    bad[0] ^= 0xFF;
    assert!(decode_checkpoint(&bad, p).is_err());
    let mut long = bytes;
    long.push(0);
    assert!(decode_checkpoint(&long, p).is_err());
}

#[test]
fn golden_fixture_files_load_exactly() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let r = load_raster(&dir.join("golden_2x2.msr")).unwrap();
    assert_eq!(r, Raster::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let g = load_pgm(&dir.join("golden_2x2.pgm")).unwrap();
    assert_eq!(
        g,
        Gray {
            height: 2,
            width: 2,
            data: vec![0, 1, 2, 255]
        }
    );
}
