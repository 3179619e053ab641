//! Channel selection × labeled fraction grid, reported as crop and weed F1.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::{TrainConfig, TrainMode};
use super::eval::{evaluate_pools, EvalReport};
use super::trainer::{split_for, train_on};
use crate::data::{ChannelSelection, Dataset, Pool};
use crate::error::{Error, Result};

pub const DEFAULT_FRACTIONS: [f64; 3] = [0.5, 0.4, 0.3];
pub const SWEEP_JSON: &str = "sweep.json";
pub const SWEEP_TXT: &str = "sweep.txt";

const LABEL_WIDTH: usize = 14;
const CELL_WIDTH: usize = 8;

/// Seed for one cell: the base seed offset by table row and percentage, so
/// a partial sweep reuses the seeds of the full one.
pub fn cell_seed(base: u64, selection: ChannelSelection, fraction: f64) -> u64 {
    base + 1000 * selection.index() as u64 + percent(fraction) as u64
}

fn percent(fraction: f64) -> u32 {
    (fraction * 100.0).round() as u32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub selection: ChannelSelection,
    pub labeled_fraction: f64,
    pub seed: u64,
    pub crop_f1: Option<f64>,
    pub weed_f1: Option<f64>,
    pub background_f1: Option<f64>,
    pub macro_f1: Option<f64>,
    /// Set when the run failed; the scores are then absent.
    pub error: Option<String>,
}

impl SweepCell {
    fn from_report(selection: ChannelSelection, fraction: f64, seed: u64, r: &EvalReport) -> Self {
        SweepCell {
            selection,
            labeled_fraction: fraction,
            seed,
            crop_f1: Some(r.crop().f1),
            weed_f1: Some(r.weed().f1),
            background_f1: Some(r.scores[0].f1),
            macro_f1: Some(r.macro_f1),
            error: None,
        }
    }

    fn failed(selection: ChannelSelection, fraction: f64, seed: u64, e: &Error) -> Self {
        SweepCell {
            selection,
            labeled_fraction: fraction,
            seed,
            crop_f1: None,
            weed_f1: None,
            background_f1: None,
            macro_f1: None,
            error: Some(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub base_config: TrainConfig,
    pub config_hash: String,
    pub selections: Vec<ChannelSelection>,
    pub fractions: Vec<f64>,
    /// Row-major: selections outer, fractions inner.
    pub cells: Vec<SweepCell>,
}

impl SweepReport {
    pub fn cell(&self, selection: ChannelSelection, fraction: f64) -> Option<&SweepCell> {
        self.cells
            .iter()
            .find(|c| c.selection == selection && percent(c.labeled_fraction) == percent(fraction))
    }

    /// Fixed-width table: one row per selection, a Crop and Weed column pair
    /// per labeled fraction. Failed cells print as `-`.
    pub fn text(&self) -> String {
        let title = match self.base_config.mode {
            TrainMode::Ssgan => "Semi-supervised GAN",
            TrainMode::SupervisedBaseline => "Supervised baseline",
        };
        let mut s = String::new();
        let _ = writeln!(s, "{:<LABEL_WIDTH$}{title}", "F1 Score");
        let mut line = format!("{:<LABEL_WIDTH$}", "");
        for &f in &self.fractions {
            let _ = write!(line, "{:<w$}", format!("{}%", percent(f)), w = 2 * CELL_WIDTH);
        }
        let _ = writeln!(s, "{}", line.trim_end());
        let mut line = format!("{:<LABEL_WIDTH$}", "Labeled Data");
        for _ in &self.fractions {
            let _ = write!(line, "{:<CELL_WIDTH$}{:<CELL_WIDTH$}", "Crop", "Weed");
        }
        let _ = writeln!(s, "{}", line.trim_end());
        let _ = writeln!(s, "Channel");
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
        for &sel in &self.selections {
            let mut line = format!("{:<LABEL_WIDTH$}", sel.name());
            for &f in &self.fractions {
                let c = self.cell(sel, f);
                let _ = write!(
                    line,
                    "{:<CELL_WIDTH$}{:<CELL_WIDTH$}",
                    fmt(c.and_then(|c| c.crop_f1)),
                    fmt(c.and_then(|c| c.weed_f1))
                );
            }
            let _ = writeln!(s, "{}", line.trim_end());
        }
        s
    }

    pub fn write(&self, out_dir: &Path) -> Result<()> {
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let json = serde_json::to_string_pretty(self).expect("sweep serializes");
        let p = out_dir.join(SWEEP_JSON);
        fs::write(&p, json).map_err(|e| Error::io(&p, e))?;
        let p = out_dir.join(SWEEP_TXT);
        fs::write(&p, self.text()).map_err(|e| Error::io(&p, e))
    }
}

fn run_dir(out_dir: Option<&Path>, selection: ChannelSelection, fraction: f64) -> Option<std::path::PathBuf> {
    out_dir.map(|d| {
        let name = selection.name().to_lowercase().replace('+', "_");
        d.join("runs").join(format!("{name}_{:02}", percent(fraction)))
    })
}

/// Trains and evaluates one cell per (selection, fraction). Every fraction
/// relabels the same base split, so the test pool is shared and the labeled
/// sets are nested. A failing cell is recorded and the sweep continues.
pub fn run_sweep(
    base: &TrainConfig,
    selections: &[ChannelSelection],
    fractions: &[f64],
    dataset_dir: &Path,
    test_fraction: f64,
    out_dir: Option<&Path>,
) -> Result<SweepReport> {
    base.validate()?;
    if selections.is_empty() || fractions.is_empty() {
        return Err(Error::Config("sweep needs at least one selection and one fraction".into()));
    }
    let base_split = split_for(dataset_dir, base, test_fraction)?;
    let mut cells = Vec::new();
    for &f in fractions {
        let dataset = base_split
            .with_labeled_fraction(f)
            .and_then(|split| Dataset::load_with_split(dataset_dir, split));
        for &sel in selections {
            let seed = cell_seed(base.seed, sel, f);
            let config = TrainConfig {
                selection: sel,
                labeled_fraction: f,
                seed,
                ..base.clone()
            };
            let run = || -> Result<EvalReport> {
                let dataset = dataset.as_ref().map_err(|e| Error::Data(e.to_string()))?;
                let pools = Arc::new(dataset.pools(sel)?);
                let dir = run_dir(out_dir, sel, f);
                let outcome = train_on(&config, pools.clone(), dir.as_deref())?;
                let t = &outcome.trainer;
                evaluate_pools(&t.discriminator, &config, t.step, &pools, Pool::Test)
            };
            let cell = match run() {
                Ok(r) => {
                    log::info!("{sel} at {}%: crop {:.3} weed {:.3}", percent(f), r.crop().f1, r.weed().f1);
                    SweepCell::from_report(sel, f, seed, &r)
                }
                Err(e) => {
                    log::warn!("{sel} at {}% failed: {e}", percent(f));
                    SweepCell::failed(sel, f, seed, &e)
                }
            };
            cells.push(cell);
        }
    }
    // Row-major by selection for the report.
    cells.sort_by_key(|c| {
        let row = selections.iter().position(|&s| s == c.selection).unwrap();
        let col = fractions.iter().position(|&f| percent(f) == percent(c.labeled_fraction)).unwrap();
        (row, col)
    });
    let report = SweepReport {
        base_config: base.clone(),
        config_hash: base.hash(),
        selections: selections.to_vec(),
        fractions: fractions.to_vec(),
        cells,
    };
    if let Some(dir) = out_dir {
        report.write(dir)?;
    }
    Ok(report)
}
