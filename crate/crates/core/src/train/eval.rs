//! Pixel-wise evaluation: tiled inference, confusion matrix, per-class F1.

use std::path::Path;

use serde::{Deserialize, Serialize};
use ssgan_tensor::Tensor;

use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::trainer::split_for;
use crate::data::{ChannelSelection, Dataset, Item, Pool, Pools, SyntheticFieldConfig};
use crate::error::{Error, Result};
use crate::loss::IGNORE;
use crate::models::{Discriminator, Mode, CLASS_NAMES, NUM_CLASSES};

/// Rows are the true class, columns the prediction, over background, crop
/// and weed. Ignored pixels are not counted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn from_rasters(pred: &[u8], truth: &[u8]) -> Result<Self> {
        let mut m = Self::default();
        m.accumulate(pred, truth)?;
        Ok(m)
    }

    pub fn accumulate(&mut self, pred: &[u8], truth: &[u8]) -> Result<()> {
        if pred.len() != truth.len() {
            return Err(Error::Extent(format!(
                "{} predictions for {} labels",
                pred.len(),
                truth.len()
            )));
        }
        for (&p, &t) in pred.iter().zip(truth) {
            if t == IGNORE {
                continue;
            }
            if p as usize >= NUM_CLASSES || t as usize >= NUM_CLASSES {
                return Err(Error::Data(format!("class pair ({t}, {p}) outside 0..{NUM_CLASSES}")));
            }
            self.counts[t as usize][p as usize] += 1;
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn true_positives(&self, class: usize) -> u64 {
        self.counts[class][class]
    }

    pub fn false_positives(&self, class: usize) -> u64 {
        (0..NUM_CLASSES).filter(|&t| t != class).map(|t| self.counts[t][class]).sum()
    }

    pub fn false_negatives(&self, class: usize) -> u64 {
        (0..NUM_CLASSES).filter(|&p| p != class).map(|p| self.counts[class][p]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f1_undefined: bool,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// Precision, recall and F1 per class; a 0/0 score is reported as 0 and
/// flagged. F1 uses `2TP / (2TP + FP + FN)`, which equals `2PR / (P + R)`
/// whenever the latter is defined.
pub fn f1_scores(conf: &ConfusionMatrix) -> [ClassScore; NUM_CLASSES] {
    std::array::from_fn(|c| {
        let (tp, fp, fn_) = (conf.true_positives(c), conf.false_positives(c), conf.false_negatives(c));
        let (precision, precision_undefined) = ratio(tp, tp + fp);
        let (recall, recall_undefined) = ratio(tp, tp + fn_);
        let (f1, f1_undefined) = ratio(2 * tp, 2 * tp + fp + fn_);
        ClassScore {
            class: CLASS_NAMES[c].to_string(),
            precision,
            recall,
            f1,
            precision_undefined,
            recall_undefined,
            f1_undefined,
        }
    })
}

/// Non-overlapping tile origins along one axis; a remainder is covered by a
/// last tile shifted back inside the image.
pub fn tile_origins(extent: usize, tile: usize) -> Result<Vec<usize>> {
    if tile == 0 || tile > extent {
        return Err(Error::Extent(format!("tile {tile} does not fit extent {extent}")));
    }
    let mut v: Vec<usize> = (0..extent / tile).map(|i| i * tile).collect();
    if !extent.is_multiple_of(tile) {
        v.push(extent - tile);
    }
    Ok(v)
}

/// Infer-mode logits `[K, H, W]` for one `[C, H, W]` image, stitched from
/// tiles. Overlapping edge pixels take the later tile's value.
pub fn predict_logits(disc: &Discriminator, pixels: &Tensor<f32>, tile_h: usize, tile_w: usize) -> Result<Tensor<f32>> {
    let [c, h, w] = match *pixels.dims() {
        [c, h, w] => [c, h, w],
        ref d => return Err(Error::Extent(format!("expected [C, H, W], got {d:?}"))),
    };
    let ys = tile_origins(h, tile_h)?;
    let xs = tile_origins(w, tile_w)?;
    let origins: Vec<(usize, usize)> = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (y, x))).collect();
    let src = pixels.data();
    let mut batch = Vec::with_capacity(origins.len() * c * tile_h * tile_w);
    for &(y0, x0) in &origins {
        for ch in 0..c {
            for y in y0..y0 + tile_h {
                let row = (ch * h + y) * w + x0;
                batch.extend_from_slice(&src[row..row + tile_w]);
            }
        }
    }
    let batch = Tensor::from_vec(&[origins.len(), c, tile_h, tile_w], batch)?;
    let (logits, _) = disc.logits(&batch, Mode::Infer)?;
    let k = logits.dims()[1];
    let l = logits.data();
    let mut out = vec![0f32; k * h * w];
    for (i, &(y0, x0)) in origins.iter().enumerate() {
        for ch in 0..k {
            for ty in 0..tile_h {
                let s = ((i * k + ch) * tile_h + ty) * tile_w;
                let d = (ch * h + y0 + ty) * w + x0;
                out[d..d + tile_w].copy_from_slice(&l[s..s + tile_w]);
            }
        }
    }
    Ok(Tensor::from_vec(&[k, h, w], out)?)
}

/// Argmax over the real classes only; ties go to the lower index.
pub fn argmax_real(logits: &Tensor<f32>) -> Vec<u8> {
    let d = logits.dims();
    let plane = d[1] * d[2];
    let l = logits.data();
    (0..plane)
        .map(|p| {
            let mut best = 0;
            for c in 1..NUM_CLASSES {
                if l[c * plane + p] > l[best * plane + p] {
                    best = c;
                }
            }
            best as u8
        })
        .collect()
}

pub fn predict_image(disc: &Discriminator, pixels: &Tensor<f32>, tile_h: usize, tile_w: usize) -> Result<Vec<u8>> {
    Ok(argmax_real(&predict_logits(disc, pixels, tile_h, tile_w)?))
}

/// Confusion matrix over a pool of masked images.
pub fn confusion_on(disc: &Discriminator, items: &[Item], tile_h: usize, tile_w: usize) -> Result<ConfusionMatrix> {
    if items.is_empty() {
        return Err(Error::Data("evaluation pool is empty".into()));
    }
    let mut m = ConfusionMatrix::default();
    for item in items {
        let pred = predict_image(disc, &item.pixels, tile_h, tile_w)?;
        let truth = item
            .mask
            .as_ref()
            .ok_or_else(|| Error::Contract(format!("{} has no mask", item.id)))?;
        m.accumulate(&pred, truth)?;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: TrainConfig,
    pub config_hash: String,
    pub step: u64,
    pub selection: ChannelSelection,
    pub pool: Pool,
    pub images: usize,
    pub pixels: u64,
    pub confusion: ConfusionMatrix,
    pub scores: [ClassScore; NUM_CLASSES],
    pub macro_f1: f64,
}

impl EvalReport {
    pub fn build(config: &TrainConfig, step: u64, pool: Pool, images: usize, confusion: ConfusionMatrix) -> Self {
        let scores = f1_scores(&confusion);
        let macro_f1 = scores.iter().map(|s| s.f1).sum::<f64>() / NUM_CLASSES as f64;
        EvalReport {
            config: config.clone(),
            config_hash: config.hash(),
            step,
            selection: config.selection,
            pool,
            images,
            pixels: confusion.total(),
            confusion,
            scores,
            macro_f1,
        }
    }

    pub fn crop(&self) -> &ClassScore {
        &self.scores[1]
    }

    pub fn weed(&self) -> &ClassScore {
        &self.scores[2]
    }

    pub fn text(&self) -> String {
        let mut s = format!(
            "{} pool, {} images, {} pixels, {} after {} steps (config {})\n",
            serde_json::to_value(self.pool).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
            self.images,
            self.pixels,
            self.selection,
            self.step,
            &self.config_hash[..12]
        );
        s.push_str(&format!("{:<12}{:>10}{:>10}{:>10}\n", "class", "precision", "recall", "F1"));
        for sc in &self.scores {
            let flag = |v: f64, u: bool| if u { format!("{v:.4}*") } else { format!("{v:.4}") };
            s.push_str(&format!(
                "{:<12}{:>10}{:>10}{:>10}\n",
                sc.class,
                flag(sc.precision, sc.precision_undefined),
                flag(sc.recall, sc.recall_undefined),
                flag(sc.f1, sc.f1_undefined)
            ));
        }
        s.push_str(&format!("macro F1 {:.4}\n", self.macro_f1));
        if self.scores.iter().any(|s| s.precision_undefined || s.recall_undefined || s.f1_undefined) {
            s.push_str("* undefined (0/0), reported as 0\n");
        }
        s
    }
}

/// Evaluates a trained discriminator on prepared pools.
pub fn evaluate_pools(disc: &Discriminator, config: &TrainConfig, step: u64, pools: &Pools, pool: Pool) -> Result<EvalReport> {
    if disc.spec.in_channels != pools.selection.channels() {
        return Err(Error::Config(format!(
            "discriminator takes {} channel(s) but {} has {}",
            disc.spec.in_channels,
            pools.selection,
            pools.selection.channels()
        )));
    }
    let items = pools.get(pool);
    let m = confusion_on(disc, items, config.tile_h, config.tile_w)?;
    Ok(EvalReport::build(config, step, pool, items.len(), m))
}

/// Evaluates a checkpoint on a dataset directory. `selection` defaults to
/// the checkpoint's and must match its channel count.
pub fn evaluate(ckpt: &Checkpoint, dataset_dir: &Path, pool: Pool, selection: Option<ChannelSelection>) -> Result<EvalReport> {
    let selection = selection.unwrap_or(ckpt.config.selection);
    if selection.channels() != ckpt.discriminator.spec.in_channels {
        return Err(Error::Config(format!(
            "checkpoint was trained on {} ({} channel(s)); {} has {}",
            ckpt.config.selection,
            ckpt.discriminator.spec.in_channels,
            selection,
            selection.channels()
        )));
    }
    let split = split_for(dataset_dir, &ckpt.config, SyntheticFieldConfig::default().test_fraction)?;
    let dataset = Dataset::load_with_split(dataset_dir, split)?;
    let pools = dataset.pools(selection)?;
    let config = TrainConfig {
        selection,
        ..ckpt.config.clone()
    };
    evaluate_pools(&ckpt.discriminator, &config, ckpt.step, &pools, pool)
}
