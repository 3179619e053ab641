//! The `ssgan` binary end to end on small synthetic datasets.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ssgan::data::dataset::read_split;
use ssgan::train::{EvalReport, SweepReport};

fn ssgan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssgan")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(out: &Path, seed: &str) -> Output {
    ssgan(&[
        "synth",
        "--out",
        s(out),
        "--seed",
        seed,
        "--images",
        "12",
        "--set",
        "synth.width=64",
        "--set",
        "synth.height=64",
    ])
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

const TINY: [&str; 6] = ["--epochs", "1", "--steps-per-epoch", "2", "--batch-size", "2"];

#[test]
fn synth_is_byte_identical_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for (p, seed) in [(&a, "3"), (&b, "3"), (&c, "4")] {
        let o = synth(p, seed);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let (ta, tb) = (tree(&a), tree(&b));
    assert!(ta.len() > 12 * 4);
    assert_eq!(ta, tb);
    assert_ne!(ta, tree(&c));
}

#[test]
fn synth_needs_a_seed_and_refuses_to_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let o = ssgan(&["synth", "--out", s(&out)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--seed"));
    assert!(!out.exists());

    assert_eq!(code(&synth(&out, "1")), 0);
    let foreign = out.join("notes.txt");
    fs::write(&foreign, "keep").unwrap();
    let o = synth(&out, "2");
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--force"));

    let mut args = vec!["synth", "--out", s(&out), "--seed", "2", "--images", "8", "--force"];
    args.extend(["--set", "synth.width=64", "--set", "synth.height=64"]);
    assert_eq!(code(&ssgan(&args)), 0);
    assert_eq!(fs::read_to_string(&foreign).unwrap(), "keep");
    assert_eq!(fs::read_dir(out.join("masks")).unwrap().count(), 8);
}

#[test]
fn prepare_splits_and_fills_in_ndvi() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    assert_eq!(code(&synth(&data, "5")), 0);
    let ndvi: Vec<PathBuf> = fs::read_dir(data.join("images"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.to_str().unwrap().ends_with(".ndvi.msr"))
        .collect();
    assert_eq!(ndvi.len(), 12);
    for p in &ndvi {
        fs::remove_file(p).unwrap();
    }

    let o = ssgan(&["prepare", "--dataset", s(&data), "--seed", "9"]);
    assert_eq!(code(&o), 1, "split.json exists");
    let o = ssgan(&["prepare", "--dataset", s(&data), "--seed", "9", "--labeled-fraction", "0.3", "--force"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(ndvi.iter().all(|p| p.exists()));
    let split = read_split(&data).unwrap();
    assert_eq!(split.test.len(), 2);
    assert_eq!(split.labeled_train.len(), 3);
    assert_eq!(split.unlabeled_train.len(), 7);
}

#[test]
fn train_then_eval_and_the_failure_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    let run = dir.path().join("run");
    assert_eq!(code(&synth(&data, "6")), 0);

    let mut args = vec!["train", "--dataset", s(&data), "--out", s(&run), "--seed", "1", "--channels", "NIR"];
    args.extend(TINY);
    let o = ssgan(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ckpt = run.join("final.ssgk");
    assert!(ckpt.exists());
    assert_eq!(fs::read_to_string(run.join("metrics.jsonl")).unwrap().lines().count(), 2);
    let trained: EvalReport = serde_json::from_str(&fs::read_to_string(run.join("eval.json")).unwrap()).unwrap();

    // A second run into the same directory is refused.
    assert_eq!(code(&ssgan(&args)), 1);

    let o = ssgan(&["eval", "--checkpoint", s(&ckpt), "--dataset", s(&data)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains(&trained.config_hash[..12]));
    assert!(stdout.contains("NIR"));

    let o = ssgan(&["eval", "--checkpoint", s(&ckpt), "--dataset", s(&data), "--channels", "Red+NIR"]);
    assert_ne!(code(&o), 0);

    let o = ssgan(&["train", "--dataset", s(&data), "--out", s(&dir.path().join("x")), "--seed", "1", "--channels", "SWIR"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("Red+NIR+NDVI"), "{}", stderr(&o));

    let o = ssgan(&["eval", "--checkpoint", s(&dir.path().join("missing.ssgk")), "--dataset", s(&data)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn resume_continues_and_rejects_config_changes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    assert_eq!(code(&synth(&data, "7")), 0);
    let first = dir.path().join("first");
    let mut args = vec!["train", "--dataset", s(&data), "--out", s(&first), "--seed", "2"];
    args.extend(TINY);
    assert_eq!(code(&ssgan(&args)), 0);
    let ckpt = first.join("final.ssgk");

    let second = dir.path().join("second");
    let o = ssgan(&["train", "--dataset", s(&data), "--out", s(&second), "--resume", s(&ckpt), "--steps-per-epoch", "4"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let steps: Vec<u64> = fs::read_to_string(second.join("metrics.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["step"].as_u64().unwrap())
        .collect();
    assert_eq!(steps, [3, 4]);

    let o = ssgan(&["train", "--dataset", s(&data), "--out", s(&dir.path().join("third")), "--resume", s(&ckpt), "--lr", "0.1"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn sample_writes_one_pgm_per_tile_and_band() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("samples");
    let o = ssgan(&["sample", "--n", "4", "--seed", "3", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let pgms = fs::read_dir(&out).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "pgm")).count();
    assert_eq!(pgms, 8);
    assert!(out.join("samples.json").exists());
    assert_eq!(code(&ssgan(&["sample", "--n", "4", "--out", s(&dir.path().join("y"))])), 1);
}

#[test]
fn gradcheck_subcommand_passes() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("g.json");
    let o = ssgan(&["gradcheck", "--seed", "0", "--json", s(&json)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(json).unwrap()).unwrap();
    assert!(v["checks"].as_array().unwrap().iter().all(|c| c["passed"] == true));
}

#[test]
fn sweep_fills_every_cell() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    let out = dir.path().join("sweep");
    assert_eq!(code(&synth(&data, "8")), 0);
    let mut args = vec!["sweep", "--dataset", s(&data), "--out", s(&out), "--seed", "4", "--channels", "Red,NDVI", "--fractions", "0.5,0.3"];
    args.extend(TINY);
    let o = ssgan(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: SweepReport = serde_json::from_str(&fs::read_to_string(out.join("sweep.json")).unwrap()).unwrap();
    assert_eq!(report.cells.len(), 4);
    assert!(report.cells.iter().all(|c| c.crop_f1.is_some() && c.weed_f1.is_some() && c.error.is_none()));
    assert_eq!(fs::read_to_string(out.join("sweep.txt")).unwrap(), report.text());
    assert_eq!(fs::read_dir(out.join("runs")).unwrap().count(), 4);
    assert_eq!(code(&ssgan(&args)), 1, "refuses a filled output directory");
}

#[test]
fn help_exits_zero_and_unknown_flags_exit_one() {
    assert_eq!(code(&ssgan(&["--help"])), 0);
    assert_eq!(code(&ssgan(&["train", "--bogus"])), 1);
}
